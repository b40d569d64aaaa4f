#!/usr/bin/env python3
"""
Tests for disorder sampling, Hamiltonian evaluation and derivative-norm bounds
"""

import sys

import numpy as np
import pytest

from tensor_core.hamiltonian import (
    MemoryBudgetExceeded, Hamiltonian, combine, coeff_distance, correlated_copy, derive_seed,
    sample_disorder, sample_hamiltonian, random_sphere_point, zero_disorder,
)
from tensor_core.opnorm import (
    calibrate_C, derivative_ratios, in_K_N, random_ball_probes, symmetrize, tensor_opnorm_estimate,
)


def test_sampling_statistics_and_determinism():
    print("\n1. 🎲 Sampling N=30, p=3 disorder...")
    tensor = sample_disorder(30, 3, seed=7)
    entries = tensor.entries.ravel()
    n = entries.size
    assert tensor.shape == (30, 30, 30)
    assert abs(entries.mean()) <= 4.0 / np.sqrt(n)
    assert 0.93 <= entries.var() <= 1.07

    again = sample_disorder(30, 3, seed=7)
    assert np.array_equal(again.entries, tensor.entries)
    assert not np.array_equal(sample_disorder(30, 3, seed=8).entries, tensor.entries)
    assert tensor.provenance["seed"] == 7


def test_derive_seed_splits_streams():
    seeds = {derive_seed(11, r) for r in range(50)}
    assert len(seeds) == 50
    assert derive_seed(11, 3, 1) == derive_seed(11, 3, 1)
    assert derive_seed(11, 3, 1) != derive_seed(11, 1, 3)


def test_memory_budget_is_enforced(caplog):
    with pytest.raises(MemoryBudgetExceeded) as info:
        sample_disorder(100, 3, seed=0, budget_bytes=1000)
    assert info.value.required_bytes == 8 * 100 ** 3
    assert any("over budget" in record.message for record in caplog.records)


def test_invalid_shapes_rejected():
    with pytest.raises(ValueError):
        sample_disorder(1, 3, seed=0)
    with pytest.raises(ValueError):
        sample_disorder(5, 1, seed=0)
    H = sample_hamiltonian(6, 3, seed=0)
    with pytest.raises(ValueError):
        H.evaluate(np.ones(5))


@pytest.mark.parametrize("N,p", [(20, 3), (40, 3), (20, 4)])
def test_radial_identity(N, p):
    print(f"\n2. 📐 Euler identity N={N}, p={p}")
    for case in range(5):
        H = sample_hamiltonian(N, p, derive_seed(case, N, p))
        s = random_sphere_point(N, derive_seed(case, 99))
        radial = float(s @ H.gradient(s)) / N
        expected = p * H.evaluate(s) / N
        assert abs(radial - expected) <= 1e-10 * max(1.0, abs(expected))


def test_gradient_and_hessian_match_finite_differences():
    H = sample_hamiltonian(12, 3, seed=3)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(12)
    h = 1e-5
    fd_grad = np.array([(H.evaluate(x + h * e) - H.evaluate(x - h * e)) / (2 * h) for e in np.eye(12)])
    assert np.allclose(H.gradient(x), fd_grad, rtol=1e-6, atol=1e-7)

    fd_hess = np.array([(H.gradient(x + h * e) - H.gradient(x - h * e)) / (2 * h) for e in np.eye(12)])
    assert np.allclose(H.hessian(x), fd_hess, rtol=1e-6, atol=1e-6)

    value, grad, hess = H.derivatives(x)
    assert np.allclose(hess, hess.T)
    assert np.allclose(hess @ x, 2 * H.gradient(x))
    assert value == pytest.approx(H.evaluate(x), rel=1e-12)


def test_covariance_law():
    print("\n3. 📊 Checking E[H(s)H(r)] = N (<s,r>/N)^p")
    N, p, samples = 30, 3, 2000
    s = random_sphere_point(N, 1)
    orthogonal = random_sphere_point(N, 2)
    orthogonal -= (orthogonal @ s) / N * s
    orthogonal *= np.sqrt(N) / np.linalg.norm(orthogonal)
    tilted = 0.6 * s + 0.8 * orthogonal
    geometries = {"same": s, "orthogonal": orthogonal, "tilted": tilted}

    products = {name: np.empty(samples) for name in geometries}
    for index in range(samples):
        H = sample_hamiltonian(N, p, derive_seed(2024, index))
        base = H.evaluate(s)
        for name, r in geometries.items():
            products[name][index] = base * H.evaluate(r)

    for name, r in geometries.items():
        target = N * (float(s @ r) / N) ** p
        mean = products[name].mean()
        stderr = products[name].std(ddof=1) / np.sqrt(samples)
        print(f"   {name}: {mean:.3f} vs {target:.3f} (se {stderr:.3f})")
        assert abs(mean - target) <= 4 * stderr


def test_correlated_copy_correlation():
    N, p, q = 10, 3, 0.8
    H = sample_hamiltonian(N, p, seed=5)
    H_q = correlated_copy(H, q, seed=6)
    corr = np.corrcoef(H.coefficients.ravel(), H_q.coefficients.ravel())[0, 1]
    assert abs(corr - q) <= 4.0 / np.sqrt(N ** p)

    independent = correlated_copy(H, 0.0, seed=7)
    corr0 = np.corrcoef(H.coefficients.ravel(), independent.coefficients.ravel())[0, 1]
    assert abs(corr0) <= 4.0 / np.sqrt(N ** p)
    assert np.array_equal(correlated_copy(H, 1.0, seed=8).coefficients, H.coefficients)

    with pytest.raises(ValueError):
        correlated_copy(H, 1.5, seed=9)


def test_correlated_pair_distance():
    N, p, eps = 8, 3, 0.1
    distances = []
    for index in range(100):
        H = sample_hamiltonian(N, p, derive_seed(41, index))
        distances.append(coeff_distance(H, correlated_copy(H, 1.0 - eps, derive_seed(42, index))) ** 2)
    assert np.mean(distances) == pytest.approx(2 * eps * N ** p, rel=0.1)


def test_combine_is_linear():
    H1 = sample_hamiltonian(7, 3, seed=1)
    H2 = sample_hamiltonian(7, 3, seed=2)
    x = random_sphere_point(7, 3)
    mix = combine([2.0, -0.5], [H1, H2])
    assert mix.evaluate(x) == pytest.approx(2.0 * H1.evaluate(x) - 0.5 * H2.evaluate(x), rel=1e-12)
    assert H1.scaled(3.0).evaluate(x) == pytest.approx(3.0 * H1.evaluate(x), rel=1e-12)
    with pytest.raises(ValueError):
        combine([1.0, 1.0], [H1, sample_hamiltonian(6, 3, seed=0)])


def test_opnorm_known_values():
    print("\n4. 🔍 Operator norm estimates")
    v = np.random.default_rng(0).standard_normal(9)
    v /= np.linalg.norm(v)
    rank_one = np.multiply.outer(np.multiply.outer(v, v), v)
    assert tensor_opnorm_estimate(rank_one) == pytest.approx(1.0, abs=1e-6)
    assert tensor_opnorm_estimate(-rank_one) == pytest.approx(1.0, abs=1e-6)

    M = np.random.default_rng(1).standard_normal((8, 8))
    M = (M + M.T) / 2
    assert tensor_opnorm_estimate(M) == pytest.approx(np.max(np.abs(np.linalg.eigvalsh(M))), abs=1e-6)
    assert tensor_opnorm_estimate(np.zeros((4, 4, 4))) == 0.0


def test_symmetrize_is_permutation_invariant():
    A = np.random.default_rng(2).standard_normal((4, 4, 4))
    S = symmetrize(A)
    assert np.allclose(S, np.transpose(S, (1, 0, 2)))
    assert np.allclose(S, np.transpose(S, (2, 1, 0)))


def test_bounded_set_membership():
    H = sample_hamiltonian(20, 3, seed=4)
    probes = random_ball_probes(20, 5, seed=1)
    assert all(np.linalg.norm(x) <= np.sqrt(20) + 1e-12 for x in probes)

    ratios = derivative_ratios(H, probes)
    assert set(ratios) == {0, 1, 2, 3}
    check = in_K_N(H, 50.0, probes)
    assert check.inside and check.worst_margin > 0

    loud = H.scaled(100.0)
    assert not in_K_N(loud, 50.0, probes).inside
    zero = Hamiltonian(zero_disorder(20, 3))
    assert in_K_N(zero, 1.0, probes).inside
    with pytest.raises(ValueError):
        in_K_N(H, 15.0, [np.full(20, 10.0)])


def test_calibration_reports_constant():
    result = calibrate_C(3, N=10, samples=3, n_probes=2, seed=0)
    assert result["C"] == pytest.approx(1.25 * result["max_ratio"])
    assert result["max_ratio"] >= result["ratio_k2"]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
