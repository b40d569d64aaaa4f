#!/usr/bin/env python3
"""
Tests for sphere points, tangent frames, spherical derivatives and the exponential chart
"""

import sys

import numpy as np
import pytest

from config import bulk_edge
from sphere_geometry.sphere_calculus import (
    ChartError, OffSphereError, SpherePoint, TangentVector, exp_map, geodesic_energy, geodesic_lipschitz_ratios,
    geodesic_map, log_map, make_frame, radial_derivative, riemannian_hessian, spherical_derivatives,
    spherical_gradient, tangent_project,
)
from tensor_core.hamiltonian import sample_hamiltonian


def _tangent(sigma: SpherePoint, seed: int, size: float = 1.0) -> np.ndarray:
    u = tangent_project(sigma, np.random.default_rng(seed).standard_normal(sigma.N)).ambient
    return size * u / np.linalg.norm(u)


def test_sphere_point_validation():
    N = 10
    point = SpherePoint.from_vector(np.arange(1.0, N + 1))
    assert np.linalg.norm(point.coords) == pytest.approx(np.sqrt(N))
    with pytest.raises(OffSphereError):
        SpherePoint(np.ones(N) * 2.0)
    with pytest.raises(OffSphereError):
        SpherePoint(np.full(N, np.nan))
    with pytest.raises(OffSphereError):
        SpherePoint.from_vector(np.full(N, np.nan))
    with pytest.raises(ValueError):
        SpherePoint.from_vector(np.zeros(N))
    with pytest.raises(ValueError):
        point.coords[0] = 1.0


def test_tangent_vectors_are_orthogonal():
    sigma = SpherePoint.random(15, seed=1)
    u = tangent_project(sigma, np.random.default_rng(2).standard_normal(15))
    assert abs(u.ambient @ sigma.coords) <= 1e-10 * np.sqrt(15) * max(1.0, u.norm)
    with pytest.raises(ValueError):
        TangentVector(sigma, sigma.coords)


def test_frame_is_orthonormal_basis_of_tangent_space():
    print("\n1. 🧭 Householder tangent frame")
    sigma = SpherePoint.random(12, seed=3)
    frame = make_frame(sigma)
    F = frame.columns
    assert F.shape == (12, 11)
    assert np.allclose(F.T @ F, np.eye(11), atol=1e-12)
    assert np.allclose(F.T @ sigma.coords, 0.0, atol=1e-10)

    pole = SpherePoint(np.sqrt(12) * np.eye(12)[0])
    assert np.allclose(make_frame(pole).columns, np.eye(12)[:, 1:])

    x = np.random.default_rng(0).standard_normal(11)
    assert np.allclose(frame.to_frame(frame.to_ambient(x)), x)


def test_frame_near_antipode_stays_orthonormal():
    N = 8
    near = SpherePoint.from_vector(-np.eye(N)[0] + 1e-6 * np.ones(N))
    frame = make_frame(near)
    assert frame.axis != 0
    assert np.allclose(frame.columns.T @ frame.columns, np.eye(N - 1), atol=1e-10)
    assert np.allclose(frame.columns.T @ near.coords, 0.0, atol=1e-8)


def test_gradient_matches_geodesic_derivative():
    print("\n2. 📐 First geodesic derivative")
    H = sample_hamiltonian(16, 3, seed=5)
    for case in range(5):
        sigma = SpherePoint.random(16, seed=10 + case)
        u = _tangent(sigma, 20 + case)
        h = 1e-4
        fd = (H.evaluate(exp_map(sigma, h * u)) - H.evaluate(exp_map(sigma, -h * u))) / (2 * h)
        exact = float(spherical_gradient(H, sigma).ambient @ u)
        assert abs(fd - exact) <= 1e-5 * max(1.0, abs(exact))


def test_riemannian_hessian_matches_second_geodesic_derivative():
    H = sample_hamiltonian(14, 3, seed=6)
    for case in range(5):
        sigma = SpherePoint.random(14, seed=30 + case)
        u = _tangent(sigma, 40 + case)
        h = 1e-3
        fd = (H.evaluate(exp_map(sigma, h * u)) - 2 * H.evaluate(sigma) + H.evaluate(exp_map(sigma, -h * u))) / h ** 2
        frame = make_frame(sigma)
        coords = frame.to_frame(u)
        exact = float(coords @ riemannian_hessian(H, sigma, frame) @ coords)
        assert abs(fd - exact) <= 1e-4 * max(1.0, abs(exact))


def test_radial_derivative_is_proportional_to_energy():
    H = sample_hamiltonian(20, 4, seed=7)
    sigma = SpherePoint.random(20, seed=8)
    assert radial_derivative(H, sigma) == pytest.approx(4 * H.evaluate(sigma) / 20, rel=1e-10)
    derivs = spherical_derivatives(H, sigma)
    assert derivs.radial == pytest.approx(radial_derivative(H, sigma), rel=1e-10)
    assert derivs.grad_norm == pytest.approx(spherical_gradient(H, sigma).norm, rel=1e-10)


def test_semicircle_support_at_random_point():
    print("\n3. 📊 Tangential Hessian spectrum at N=120")
    H = sample_hamiltonian(120, 3, seed=9)
    sigma = SpherePoint.random(120, seed=10)
    derivs = spherical_derivatives(H, sigma)
    unshifted = np.linalg.eigvalsh(derivs.riemannian) + derivs.radial
    edge = bulk_edge(3)
    print(f"   top eigenvalue {unshifted[-1]:.3f} vs edge {edge:.3f}")
    assert unshifted[0] >= -edge - 0.5 and unshifted[-1] <= edge + 0.5
    assert abs(unshifted[-1] - edge) <= 0.08 * edge


def test_exp_and_log_are_inverse_inside_the_chart():
    sigma = SpherePoint.random(10, seed=11)
    u = _tangent(sigma, 12, size=0.7 * np.sqrt(10))
    x = exp_map(sigma, u)
    assert np.allclose(log_map(sigma, x).ambient, u, atol=1e-10)
    assert exp_map(sigma, np.zeros(10)) is sigma

    with pytest.raises(ChartError):
        exp_map(sigma, _tangent(sigma, 13, size=1.01 * np.sqrt(10)))
    with pytest.raises(ChartError):
        log_map(sigma, SpherePoint(-sigma.coords))


def test_geodesic_maps():
    H = sample_hamiltonian(10, 3, seed=14)
    sigma = SpherePoint.random(10, seed=15)
    u = np.random.default_rng(16).standard_normal(10) * 0.3
    x = geodesic_map(sigma, u)
    assert np.linalg.norm(x.coords) == pytest.approx(np.sqrt(10))
    assert geodesic_energy(H, sigma, u) == pytest.approx(H.evaluate(x))
    # the radial part of u is discarded
    assert np.allclose(geodesic_map(sigma, u + 0.5 * sigma.coords).coords, x.coords)

    ratios = geodesic_lipschitz_ratios(H, n_pairs=10, seed=1)
    assert np.isfinite(ratios["map_ratio"]) and ratios["map_ratio"] < 10


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
