#!/usr/bin/env python3
"""
Tests for the ascent optimizers, algorithm handles and the stability meter
"""

import sys

import numpy as np
import pytest

from optimizers.ascent import (
    AscentConfig, StopReason, constant_algorithm, default_iteration_budget, gd_ascent, gd_ascent_algorithm,
    hessian_ascent, linear_row_algorithm, linear_row_stability, round_to_ball, safe_step_size,
    warm_start_algorithm,
)
from optimizers.stability_meter import estimate_stability, measure_overlap, stability_sweep
from sphere_geometry.sphere_calculus import SpherePoint
from tensor_core.hamiltonian import sample_hamiltonian
from wells.planted import spike_landscape


def _start_near(w: SpherePoint, overlap: float, seed: int) -> SpherePoint:
    z = np.random.default_rng(seed).standard_normal(w.N)
    z -= (z @ w.coords) / w.N * w.coords
    z *= np.sqrt(w.N) / np.linalg.norm(z)
    return SpherePoint.from_vector(overlap * w.coords + np.sqrt(1 - overlap ** 2) * z)


def test_gd_climbs_spike():
    print("\n1. ⛰️ Gradient ascent on a spike landscape (mu=2, N=20)")
    w = SpherePoint.random(20, seed=3)
    H = spike_landscape(w, 2.0, 3)
    trajectory = gd_ascent(H, _start_near(w, 0.9, seed=4), AscentConfig(eta=0.01, delta=0.05))

    assert trajectory.stop_reason == StopReason.GRADIENT_THRESHOLD
    assert trajectory.grad_norms[-1] <= 0.05 * np.sqrt(20)
    assert trajectory.energies[-1] / 20 == pytest.approx(2.0, rel=0.05)
    assert trajectory.gain_violations == 0
    print(f"   {trajectory.summary()['steps']} steps, E/N = {trajectory.energies[-1] / 20:.4f}")


def test_gd_energies_are_monotone():
    H = sample_hamiltonian(20, 3, seed=5)
    trajectory = gd_ascent(H, SpherePoint.random(20, seed=6), AscentConfig(eta=0.01, max_iters=300))
    energies = np.asarray(trajectory.energies)
    assert np.all(np.diff(energies) >= -1e-9 * np.abs(energies[:-1]).clip(min=1.0))
    assert all(np.linalg.norm(s.coords) == pytest.approx(np.sqrt(20)) for s in trajectory.points)

    frame = trajectory.to_frame()
    assert list(frame.columns) == ["iter", "energy_per_N", "grad_norm_per_sqrtN", "radial_derivative"]
    assert len(frame) == len(trajectory.points)


def test_gd_respects_max_iters():
    H = sample_hamiltonian(15, 3, seed=7)
    trajectory = gd_ascent(H, SpherePoint.random(15, seed=8), AscentConfig(eta=0.001, max_iters=3, delta=1e-6))
    assert trajectory.stop_reason == StopReason.MAX_ITERS
    assert len(trajectory.points) == 4
    with pytest.raises(ValueError):
        gd_ascent(H, SpherePoint.random(10, seed=8), AscentConfig())


def test_iteration_budget():
    assert default_iteration_budget(15.0, 0.05, 0.01) == 20000
    assert default_iteration_budget(1.0, 1.0, 1.0) == 10
    assert AscentConfig(max_iters=7).iteration_budget(3) == 7
    assert safe_step_size(3) == pytest.approx(1.0 / 60.0)
    with pytest.raises(ValueError):
        AscentConfig(eta=0.0)


def test_round_to_ball():
    inside = np.full(4, 0.5)
    assert np.array_equal(round_to_ball(inside), inside)
    outside = np.full(4, 3.0)
    assert np.linalg.norm(round_to_ball(outside)) == pytest.approx(2.0)


def test_hessian_ascent_reaches_sphere():
    print("\n2. 🧗 Hessian ascent (N=20)")
    H = sample_hamiltonian(20, 3, seed=9)
    trajectory = hessian_ascent(H, AscentConfig(seed=1, step_length=0.05))
    final = trajectory.final
    assert trajectory.stop_reason == StopReason.RADIUS_REACHED
    assert np.linalg.norm(final.coords) == pytest.approx(np.sqrt(20))
    assert trajectory.energies[-1] / 20 > 1.0
    print(f"   E/N = {trajectory.energies[-1] / 20:.4f}")


def test_algorithm_handles_land_in_ball():
    H = sample_hamiltonian(12, 3, seed=10)
    for handle in (gd_ascent_algorithm(AscentConfig(max_iters=50)), linear_row_algorithm(),
                   constant_algorithm(np.full(12, 9.0))):
        x = handle(H, 3)
        assert np.linalg.norm(x) <= np.sqrt(12) + 1e-12
        assert handle.metadata()["name"] == handle.name

    gd = gd_ascent_algorithm(AscentConfig(max_iters=50))
    assert np.array_equal(gd(H, 3), gd(H, 3))

    w = SpherePoint.random(12, seed=11)
    warm = warm_start_algorithm(AscentConfig(max_iters=1), w, overlap=0.9)
    assert warm.name == "warm-start-gd"
    with pytest.raises(ValueError):
        warm_start_algorithm(AscentConfig(), w, overlap=1.5)


def test_warm_start_stays_with_spike():
    w = SpherePoint.random(20, seed=12)
    H = spike_landscape(w, 2.0, 3)
    x = warm_start_algorithm(AscentConfig(eta=0.01), w, overlap=0.9)(H, 5)
    assert float(x @ w.coords) / 20 > 0.99


def test_constant_algorithm_is_perfectly_stable():
    print("\n3. 📏 Stability meter")
    A = constant_algorithm(np.full(10, 0.5))
    mean, stderr = estimate_stability(A, 0.1, reps=5, N=10, p=3, seed=0)
    assert mean == 0.0 and stderr == 0.0

    overlap = measure_overlap(A, [0.0, 0.5, 1.0], reps=3, N=10, p=3)
    assert np.allclose(overlap["mean"], 0.25)
    assert np.allclose(overlap["variance"], 0.0)


def test_linear_row_matches_closed_form():
    A = linear_row_algorithm()
    mean, stderr = estimate_stability(A, 0.1, reps=200, N=30, p=3, seed=1)
    target = linear_row_stability(0.1, 30)
    print(f"   linear-row S_hat = {mean:.4f} +- {stderr:.4f} vs {target:.4f}")
    assert 2.0 < target < 2.1
    assert abs(mean - target) <= 4 * stderr


def test_linear_row_closed_form_limits():
    # one dimension: the outputs agree in sign with probability 1/2 + arcsin(q)/pi
    for eps in (0.05, 0.5, 1.0):
        expected = 2.0 * (1.0 - 2.0 / np.pi * np.arcsin(1.0 - eps)) / eps
        assert linear_row_stability(eps, 1) == pytest.approx(expected, rel=1e-10)
    assert linear_row_stability(0.2, 2000) == pytest.approx(2.0 + 0.8 * 1.8 / 2000, abs=1e-4)
    assert linear_row_stability(1.0, 50) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        linear_row_stability(0.0, 10)


def test_stability_sweep_and_validation():
    A = linear_row_algorithm()
    frame = stability_sweep(A, [0.05, 0.2], reps=5, N=8, p=3)
    assert list(frame["epsilon"]) == [0.05, 0.2]
    assert set(frame.columns) >= {"algorithm", "S_hat", "stderr", "reps"}
    with pytest.raises(ValueError):
        estimate_stability(A, 0.0, reps=5, N=8, p=3)
    with pytest.raises(ValueError):
        estimate_stability(A, 0.1, reps=1, N=8, p=3)
    with pytest.raises(ValueError):
        measure_overlap(A, [1.5], reps=2, N=8, p=3)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
