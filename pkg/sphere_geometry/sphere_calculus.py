import logging
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np

from tensor_core.hamiltonian import Hamiltonian

logger = logging.getLogger(__name__)

SPHERE_RTOL = 1e-8
ORTHOGONALITY_TOL = 1e-10
POLE_GUARD = 1e-3


class OffSphereError(ValueError):
    """Input violates ||sigma|| = sqrt(N)"""


class ChartError(ValueError):
    """Input lies outside the theta < 1 chart of the exponential map"""


def _readonly(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    x.flags.writeable = False
    return x


@dataclass(frozen=True)
class SpherePoint:
    """Point of S_N, the sphere of radius sqrt(N)"""
    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 1 or coords.size < 2:
            raise ValueError(f"SpherePoint needs a vector of length >= 2, got shape {coords.shape}")
        radius = np.sqrt(coords.size)
        norm = np.linalg.norm(coords)
        if not np.isfinite(norm) or abs(norm - radius) > SPHERE_RTOL * radius:
            raise OffSphereError(f"||sigma|| = {norm:.12g} is not sqrt(N) = {radius:.12g}")
        object.__setattr__(self, "coords", _readonly(coords))

    @property
    def N(self) -> int:
        return self.coords.size

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "SpherePoint":
        """Radially project a nonzero vector onto S_N"""
        x = np.asarray(x, dtype=np.float64)
        norm = np.linalg.norm(x)
        if norm == 0.0:
            raise ValueError("Cannot project the zero vector onto the sphere")
        return cls(x * np.sqrt(x.size) / norm)

    @classmethod
    def random(cls, N: int, seed: int) -> "SpherePoint":
        rng = np.random.default_rng(seed)
        return cls.from_vector(rng.standard_normal(N))


def as_sphere_point(sigma: Union[SpherePoint, np.ndarray]) -> SpherePoint:
    return sigma if isinstance(sigma, SpherePoint) else SpherePoint(sigma)


@dataclass(frozen=True)
class TangentVector:
    """Vector orthogonal to its base point"""
    base: SpherePoint
    ambient: np.ndarray

    def __post_init__(self):
        ambient = np.asarray(self.ambient, dtype=np.float64)
        if ambient.shape != self.base.coords.shape:
            raise ValueError(f"Tangent vector shape {ambient.shape} does not match base {self.base.coords.shape}")
        tol = ORTHOGONALITY_TOL * max(np.linalg.norm(ambient), 1.0) * np.sqrt(ambient.size)
        inner = float(ambient @ self.base.coords)
        if abs(inner) > tol:
            raise ValueError(f"Vector is not tangent: <u, sigma> = {inner:.3e}")
        object.__setattr__(self, "ambient", _readonly(ambient))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.ambient))


@dataclass(frozen=True)
class TangentFrame:
    """Orthonormal N x (N-1) basis of base^perp"""
    base: SpherePoint
    columns: np.ndarray
    axis: int = 0

    def to_ambient(self, coords: np.ndarray) -> np.ndarray:
        return self.columns @ coords

    def to_frame(self, x: np.ndarray) -> np.ndarray:
        return self.columns.T @ x


def tangent_project(sigma: SpherePoint, x: np.ndarray) -> TangentVector:
    """P_sigma^perp x = x - sigma <sigma, x> / N"""
    sigma = as_sphere_point(sigma)
    x = np.asarray(x, dtype=np.float64)
    s = sigma.coords
    projected = x - s * (s @ x) / sigma.N
    return TangentVector(sigma, projected)


def make_frame(sigma: SpherePoint) -> TangentFrame:
    """Columns 2..N of the reflection through e_a + sigma/sqrt(N).

    The reflection sends e_a to -sigma/sqrt(N), so the remaining columns span
    sigma^perp; at sigma = sqrt(N) e_1 they are the standard axes e_2..e_N.
    """
    sigma = as_sphere_point(sigma)
    N = sigma.N
    s = sigma.coords / np.sqrt(N)
    axis = 0
    if 1.0 + s[axis] < POLE_GUARD:
        axis = int(np.argmax(s))
        logger.warning(f"⚠️ Frame reference axis moved to e_{axis + 1} near the pole -e_1")

    v = s.copy()
    v[axis] += 1.0
    others = [j for j in range(N) if j != axis]
    columns = np.eye(N)[:, others] - np.outer(v, s[others]) / (1.0 + s[axis])
    return TangentFrame(base=sigma, columns=columns, axis=axis)


def _check_frame(sigma: SpherePoint, frame: TangentFrame) -> None:
    if frame.base is not sigma and not np.array_equal(frame.base.coords, sigma.coords):
        raise ValueError("Frame is based at a different point")


def spherical_gradient(H: Hamiltonian, sigma: SpherePoint) -> TangentVector:
    """nabla_sp H = P_sigma^perp nabla H"""
    sigma = as_sphere_point(sigma)
    return tangent_project(sigma, H.gradient(sigma.coords))


def radial_derivative(H: Hamiltonian, sigma: SpherePoint) -> float:
    """<sigma, nabla H(sigma)> / N"""
    sigma = as_sphere_point(sigma)
    return float(sigma.coords @ H.gradient(sigma.coords)) / sigma.N


def riemannian_hessian(H: Hamiltonian, sigma: SpherePoint, frame: Optional[TangentFrame] = None) -> np.ndarray:
    """frame^T nabla^2 H frame - partial_rad H * I, in frame coordinates"""
    sigma = as_sphere_point(sigma)
    frame = make_frame(sigma) if frame is None else frame
    _check_frame(sigma, frame)
    _, grad, hess = H.derivatives(sigma.coords)
    radial = float(sigma.coords @ grad) / sigma.N
    return _riemannian_from(hess, radial, frame)


def _riemannian_from(hess: np.ndarray, radial: float, frame: TangentFrame) -> np.ndarray:
    F = frame.columns
    tangential = F.T @ hess @ F
    tangential = (tangential + tangential.T) / 2.0
    return tangential - radial * np.eye(F.shape[1])


@dataclass
class SphericalDerivatives:
    """Everything second-order at one point, from a single Hessian pass"""
    sigma: SpherePoint
    energy: float
    gradient: np.ndarray
    sph_gradient: np.ndarray
    radial: float
    frame: TangentFrame
    riemannian: np.ndarray
    euclidean_hessian: np.ndarray

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.sph_gradient))


def spherical_derivatives(H: Hamiltonian, sigma: SpherePoint) -> SphericalDerivatives:
    sigma = as_sphere_point(sigma)
    energy, grad, hess = H.derivatives(sigma.coords)
    s = sigma.coords
    radial = float(s @ grad) / sigma.N
    sph = grad - s * (s @ grad) / sigma.N
    frame = make_frame(sigma)
    return SphericalDerivatives(sigma=sigma, energy=energy, gradient=grad, sph_gradient=sph, radial=radial,
                                frame=frame, riemannian=_riemannian_from(hess, radial, frame),
                                euclidean_hessian=hess)


def _tangent_array(sigma: SpherePoint, u) -> np.ndarray:
    if isinstance(u, TangentVector):
        return u.ambient
    return TangentVector(sigma, u).ambient


def exp_map(sigma: SpherePoint, u) -> SpherePoint:
    """T_sigma(u) = cos(theta) sigma + sin(theta) v with theta = ||u||/sqrt(N), v = sqrt(N) u/||u||"""
    sigma = as_sphere_point(sigma)
    u = _tangent_array(sigma, u)
    root_n = np.sqrt(sigma.N)
    norm = np.linalg.norm(u)
    theta = norm / root_n
    if theta >= 1.0:
        raise ChartError(f"||u|| = {norm:.6g} must be < sqrt(N) = {root_n:.6g}")
    if norm == 0.0:
        return sigma
    return SpherePoint(np.cos(theta) * sigma.coords + np.sin(theta) * root_n * u / norm)


def log_map(sigma: SpherePoint, x: SpherePoint) -> TangentVector:
    """Inverse of exp_map inside the theta < 1 chart"""
    sigma = as_sphere_point(sigma)
    x = as_sphere_point(x)
    N = sigma.N
    inner = float(sigma.coords @ x.coords)
    if inner <= 0.0:
        raise ChartError(f"<sigma, x>/N = {inner / N:.6g}: point is not in the same hemisphere")
    tangential = x.coords - sigma.coords * inner / N
    sin_part = np.linalg.norm(tangential) / np.sqrt(N)
    theta = np.arctan2(sin_part, inner / N)
    if theta >= 1.0:
        raise ChartError(f"Geodesic angle {theta:.6g} is outside the chart (theta < 1)")
    if sin_part == 0.0:
        return TangentVector(sigma, np.zeros(N))
    u = theta * np.sqrt(N) * tangential / np.linalg.norm(tangential)
    return tangent_project(sigma, u)


def geodesic_map(sigma: SpherePoint, u: np.ndarray) -> SpherePoint:
    """F_1(sigma, u) = T_sigma(P_sigma^perp u)"""
    sigma = as_sphere_point(sigma)
    return exp_map(sigma, tangent_project(sigma, u))


def geodesic_energy(H: Hamiltonian, sigma: SpherePoint, u: np.ndarray) -> float:
    """F_2(sigma, u) = H(F_1(sigma, u))"""
    return H.evaluate(geodesic_map(sigma, u).coords)


def geodesic_lipschitz_ratios(H: Hamiltonian, n_pairs: int = 100, scale: float = 1e-3,
                              u_size: float = 0.5, seed: int = 0) -> Dict[str, float]:
    """Largest difference quotients of F_1 and F_2 over random nearby pairs.

    The F_2 ratio is divided by sqrt(N) so both are O(1) under the K_N bounds.
    """
    rng = np.random.default_rng(seed)
    N = H.N
    root_n = np.sqrt(N)
    worst_map, worst_energy = 0.0, 0.0
    for _ in range(n_pairs):
        sigma = SpherePoint.from_vector(rng.standard_normal(N))
        u = tangent_project(sigma, rng.standard_normal(N)).ambient
        u = u_size * root_n * u / np.linalg.norm(u)

        step = tangent_project(sigma, rng.standard_normal(N)).ambient
        sigma_near = exp_map(sigma, scale * root_n * step / np.linalg.norm(step))
        du = rng.standard_normal(N)
        u_near = u + scale * root_n * du / np.linalg.norm(du)

        gap = np.linalg.norm(sigma.coords - sigma_near.coords) + np.linalg.norm(u - u_near)
        x = geodesic_map(sigma, u)
        x_near = geodesic_map(sigma_near, u_near)
        worst_map = max(worst_map, np.linalg.norm(x.coords - x_near.coords) / gap)
        worst_energy = max(worst_energy,
                           abs(H.evaluate(x.coords) - H.evaluate(x_near.coords)) / gap / root_n)
    return {"map_ratio": float(worst_map), "energy_ratio": float(worst_energy), "N": N}
