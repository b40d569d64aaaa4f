#!/usr/bin/env python3
"""
Tests for well detection, the well-type ladder, Davis-Kahan tracking and planted spikes
"""

import sys

import numpy as np
import pytest

from config import bulk_edge
from sphere_geometry.sphere_calculus import SpherePoint
from tensor_core.hamiltonian import sample_hamiltonian
from wells.davis_kahan import TrackingFailure, davis_kahan_track, subspace_distance, tracked_band_mask
from wells.planted import plant_well, spike_landscape
from wells.well_detector import (
    WellPreconditionError, WellType, classify_spectrum, classify_well, in_lenient_well, in_typed_well,
    lenient_parameters, near_zero_eigenspace, well_report, well_type_ladder,
)


@pytest.fixture
def spike():
    w = SpherePoint.random(20, seed=1)
    return w, spike_landscape(w, 2.0, 3)


def test_spike_landscape_peak(spike):
    print("\n1. 🏔️ Noise-free spike landscape")
    w, H = spike
    assert H.evaluate(w) == pytest.approx(2.0 * 20)
    report = well_report(H, w, gamma=0.5, delta=0.05)
    assert report.grad_norm == pytest.approx(0.0, abs=1e-10)
    assert report.radial == pytest.approx(3 * 2.0)
    assert report.is_well
    assert report.margins["radial"] == pytest.approx(6.0 - bulk_edge(3) - 0.5)
    # tangential Hessian of mu N R^p vanishes at w, leaving -radial * I
    assert np.allclose(report.eigenvalues, -6.0)


def test_spike_below_edge_is_not_a_well():
    w = SpherePoint.random(20, seed=2)
    report = well_report(spike_landscape(w, 1.0, 3), w, gamma=0.5, delta=0.05, with_spectrum=False)
    assert not report.is_well
    assert report.eigenvalues == []


def test_plant_well_adds_spike():
    H = sample_hamiltonian(12, 3, seed=4)
    w = SpherePoint.random(12, seed=5)
    planted = plant_well(H, w, 1.5)
    x = SpherePoint.random(12, seed=6)
    overlap = float(x.coords @ w.coords) / 12
    assert planted.evaluate(x) == pytest.approx(H.evaluate(x) + 1.5 * 12 * overlap ** 3, rel=1e-10)
    assert planted.tensor.provenance["planted_mu"] == 1.5
    assert plant_well(H, w, 0.0) is H
    with pytest.raises(ValueError):
        plant_well(H, w, -1.0)
    with pytest.raises(ValueError):
        plant_well(H, SpherePoint.random(10, seed=7), 1.0)


def test_ladder_classification():
    print("\n2. 🪜 Well-type ladder")
    ladder = well_type_ladder(0.5, 4)
    assert len(ladder) == 8
    assert ladder[0] == pytest.approx(0.5e-9)
    assert ladder[-1] == pytest.approx(0.5e-2)

    wt = classify_spectrum(np.array([-5.0, -4.0, -3.0]), gamma=0.5, k=4)
    assert wt.d == 0 and wt.a == pytest.approx(ladder[0])

    wt = classify_spectrum(np.array([-5.0, -4.0, 1e-12]), gamma=0.5, k=4)
    assert wt.d == 1

    # every rung occupied
    crowded = np.array([10.0 ** (i - 9) * 0.5 * 2 for i in range(8)])
    assert classify_spectrum(crowded, gamma=0.5, k=4) is None


def test_classify_well_refuses_non_wells():
    H = sample_hamiltonian(15, 3, seed=8)
    with pytest.raises(WellPreconditionError):
        classify_well(H, SpherePoint.random(15, seed=9), gamma=0.5)


def test_typed_and_lenient_membership(spike):
    w, H = spike
    wt = WellType.from_iota(0, 0.05)
    assert wt.iota == pytest.approx(0.05)
    assert in_typed_well(H, w, 0.5, 0.05, wt)
    assert not in_typed_well(H, w, 0.5, 0.05, WellType.from_iota(1, 0.05))
    assert in_lenient_well(H, w, 0.5, 0.05, 0, 0.05, tau=1.6)

    gamma_tau, delta_tau, lenient = lenient_parameters(0.5, 0.05, 0, 0.05, 1.25)
    assert gamma_tau == pytest.approx(0.4)
    assert delta_tau == pytest.approx(0.05 ** 0.8)
    assert (lenient.a, lenient.b) == pytest.approx((0.0625, 0.12))
    with pytest.raises(ValueError):
        lenient_parameters(0.5, 0.05, 0, 0.05, 2.0)
    with pytest.raises(ValueError):
        WellType(d=0, a=0.2, b=0.1)


def test_near_zero_eigenspace(spike):
    w, H = spike
    assert near_zero_eigenspace(H, w, 0.05).d == 0
    with pytest.raises(ValueError):
        near_zero_eigenspace(H, w, 0.0)


def test_davis_kahan_tracks_small_perturbation():
    print("\n3. 🎯 Davis-Kahan tracking")
    A = np.diag([0.001, 1.0, 2.0, -1.0])
    rng = np.random.default_rng(0)
    E = rng.standard_normal((4, 4)) * 1e-4
    A_new = A + (E + E.T) / 2

    basis, diagnostics = davis_kahan_track(A, A_new, iota=0.05, d=1)
    assert basis.shape == (4, 1)
    assert abs(basis[0, 0]) == pytest.approx(1.0, abs=1e-3)
    assert diagnostics["projector_change"] <= 2 * diagnostics["perturbation_norm"] / 0.9
    print(f"   projector change {diagnostics['projector_change']:.2e}")


def test_davis_kahan_rejects_gap_violations():
    A = np.diag([0.001, 1.0, 2.0, -1.0])
    with pytest.raises(TrackingFailure) as info:
        davis_kahan_track(A, np.diag([0.001, 1.0, 2.0, 0.1]), iota=0.05, d=1)
    assert info.value.eigenvalues == pytest.approx([0.1])

    with pytest.raises(TrackingFailure):
        davis_kahan_track(A, np.diag([0.001, 0.002, 2.0, -1.0]), iota=0.05, d=1)

    with pytest.raises(ValueError):
        davis_kahan_track(np.diag([0.001, 0.1, 2.0, -1.0]), A, iota=0.05, d=1)


def test_tracked_band_mask():
    eigenvalues = np.array([0.01, -0.05, -1.0, 2.0])
    assert tracked_band_mask(eigenvalues, 0.05, 2).tolist() == [True, True, False, False]

    with pytest.raises(TrackingFailure) as info:
        tracked_band_mask(np.array([0.01, 0.1, -1.0]), 0.05, 1)
    assert "forbidden band" in info.value.message
    assert info.value.eigenvalues == pytest.approx([0.1])

    with pytest.raises(TrackingFailure) as info:
        tracked_band_mask(np.array([0.01, -1.0]), 0.05, 2)
    assert info.value.message == "Expected 2 eigenvalues in [-1.1 iota, 1.1 iota]"
    assert info.value.eigenvalues == pytest.approx([0.01])


def test_davis_kahan_follows_two_dimensional_rotation():
    angle = 0.01
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, 0.0, -s, 0.0], [0.0, c, 0.0, -s], [s, 0.0, c, 0.0], [0.0, s, 0.0, c]])
    A = np.diag([0.001, -0.001, -1.0, -2.0])
    basis, diagnostics = davis_kahan_track(A, R @ A @ R.T, iota=0.05, d=2)
    assert basis.shape == (4, 2)
    assert subspace_distance(basis, R[:, :2]) <= 1e-8
    assert diagnostics["projector_change"] == pytest.approx(s, rel=1e-6)
    assert diagnostics["projector_change"] <= 2 * diagnostics["perturbation_norm"] / 0.9


def test_subspace_distance():
    basis = np.eye(5)[:, :2]
    assert subspace_distance(basis, basis) == pytest.approx(0.0, abs=1e-12)
    assert subspace_distance(basis, np.eye(5)[:, 2:4]) == pytest.approx(1.0)
    assert subspace_distance(basis, np.eye(5)[:, :1]) == 1.0
    assert subspace_distance(np.zeros((5, 0)), np.zeros((5, 0))) == 0.0


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
