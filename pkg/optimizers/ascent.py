import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse.linalg
import scipy.special

from config import (
    GD_STEP_SIZE, GD_MAX_ITERS, HESSIAN_ASCENT_START_RADIUS, HESSIAN_ASCENT_STEP,
    HESSIAN_ASCENT_POWER_TOL, k_n_constant,
)
from sphere_geometry.sphere_calculus import SpherePoint, as_sphere_point, spherical_derivatives
from tensor_core.hamiltonian import Hamiltonian

logger = logging.getLogger(__name__)


class StopReason(str, Enum):
    GRADIENT_THRESHOLD = "gradient-threshold"
    MAX_ITERS = "max-iters"
    RADIUS_REACHED = "radius-reached"


def default_iteration_budget(C: float, delta: float, eta: float) -> int:
    """I = ceil(10 C delta^-2 eta^-1), capped at GD_MAX_ITERS"""
    budget = math.ceil(10.0 * C / (delta ** 2 * eta))
    return int(min(budget, GD_MAX_ITERS))


def safe_step_size(p: int) -> float:
    """eta_max = 1/(4 C) for the calibrated K_N constant"""
    return 1.0 / (4.0 * k_n_constant(p))


@dataclass
class AscentConfig:
    eta: float = GD_STEP_SIZE
    max_iters: Optional[int] = None
    delta: float = 0.05
    seed: int = 0
    start_radius: float = HESSIAN_ASCENT_START_RADIUS
    step_length: float = HESSIAN_ASCENT_STEP
    power_tol: float = HESSIAN_ASCENT_POWER_TOL

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not 0 < self.start_radius < 1:
            raise ValueError(f"start_radius must lie in (0, 1), got {self.start_radius}")
        if self.step_length <= 0:
            raise ValueError(f"step_length must be positive, got {self.step_length}")

    def iteration_budget(self, p: int) -> int:
        if self.max_iters is not None:
            return self.max_iters
        return default_iteration_budget(k_n_constant(p), self.delta, self.eta)


@dataclass
class Trajectory:
    """Visited points with per-step energy, spherical gradient norm and radial derivative"""
    points: List[SpherePoint] = field(default_factory=list)
    energies: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    radials: List[float] = field(default_factory=list)
    stop_reason: Optional[StopReason] = None
    gain_violations: int = 0

    def append(self, sigma: SpherePoint, energy: float, grad_norm: float, radial: float):
        self.points.append(sigma)
        self.energies.append(float(energy))
        self.grad_norms.append(float(grad_norm))
        self.radials.append(float(radial))

    @property
    def final(self) -> SpherePoint:
        return self.points[-1]

    @property
    def N(self) -> int:
        return self.points[0].N

    def to_frame(self) -> pd.DataFrame:
        """CSV schema: iter, energy_per_N, grad_norm_per_sqrtN, radial_derivative"""
        N = self.N
        return pd.DataFrame({
            "iter": np.arange(len(self.points)),
            "energy_per_N": np.asarray(self.energies) / N,
            "grad_norm_per_sqrtN": np.asarray(self.grad_norms) / np.sqrt(N),
            "radial_derivative": np.asarray(self.radials),
        })

    def summary(self) -> Dict[str, Any]:
        N = self.N
        return {
            "steps": len(self.points) - 1,
            "final_energy_per_N": self.energies[-1] / N,
            "final_grad_norm_per_sqrtN": self.grad_norms[-1] / np.sqrt(N),
            "final_radial": self.radials[-1],
            "stop_reason": self.stop_reason.value if self.stop_reason else None,
            "gain_violations": self.gain_violations,
        }


def _first_order(H: Hamiltonian, sigma: SpherePoint):
    s = sigma.coords
    grad = H.gradient(s)
    energy = float(s @ grad) / H.p
    radial = float(s @ grad) / sigma.N
    sph = grad - s * radial
    return energy, sph, radial


def gd_ascent(H: Hamiltonian, sigma0: SpherePoint, cfg: AscentConfig) -> Trajectory:
    """Spherical gradient ascent, normalized back to S_N after every step.

    Stops at the first iterate with ||grad_sp H|| <= delta sqrt(N) or after I steps.
    Every step is checked against the gain bound
    H(next) >= H(current) + eta ||grad_sp H||^2 / 2.
    """
    sigma = as_sphere_point(sigma0)
    if sigma.N != H.N:
        raise ValueError(f"Dimension mismatch: start point has N={sigma.N}, Hamiltonian has N={H.N}")
    N = sigma.N
    root_n = np.sqrt(N)
    budget = cfg.iteration_budget(H.p)
    threshold = cfg.delta * root_n

    trajectory = Trajectory()
    energy, sph, radial = _first_order(H, sigma)
    grad_norm = float(np.linalg.norm(sph))
    trajectory.append(sigma, energy, grad_norm, radial)

    for _ in range(budget):
        if grad_norm <= threshold:
            trajectory.stop_reason = StopReason.GRADIENT_THRESHOLD
            return trajectory
        x = sigma.coords + cfg.eta * sph
        sigma = SpherePoint(x * root_n / np.linalg.norm(x))

        expected_gain = cfg.eta * grad_norm ** 2 / 2.0
        new_energy, sph, radial = _first_order(H, sigma)
        if new_energy - energy < expected_gain - 1e-9 * max(1.0, abs(energy)):
            trajectory.gain_violations += 1
        energy = new_energy
        grad_norm = float(np.linalg.norm(sph))
        trajectory.append(sigma, energy, grad_norm, radial)

    trajectory.stop_reason = (StopReason.GRADIENT_THRESHOLD if grad_norm <= threshold
                              else StopReason.MAX_ITERS)
    if trajectory.gain_violations and cfg.eta <= safe_step_size(H.p):
        logger.warning(f"⚠️ {trajectory.gain_violations} steps fell short of the eta|grad|^2/2 gain")
    return trajectory


def _top_eigenvector(matrix: np.ndarray, tol: float, start: Optional[np.ndarray]):
    n = matrix.shape[0]
    if n > 2:
        try:
            values, vecs = scipy.sparse.linalg.eigsh(matrix, k=1, which="LA", tol=tol, v0=start)
            return float(values[0]), vecs[:, 0]
        except scipy.sparse.linalg.ArpackNoConvergence:
            logger.warning("⚠️ ARPACK did not converge, falling back to a dense eigensolve")
    values, vecs = scipy.linalg.eigh(matrix, subset_by_index=[n - 1, n - 1])
    return float(values[0]), vecs[:, 0]


def hessian_ascent(H: Hamiltonian, cfg: AscentConfig) -> Trajectory:
    """Reference optimizer climbing from radius r0 sqrt(N) along top Hessian directions.

    Each increment of length s sqrt(N) is orthogonal to the current iterate, so
    ||x||^2 grows by s^2 N per step; the last step is shortened to land on S_N.
    When the top eigenvalue is not positive the step follows the tangential
    gradient instead.
    """
    N = H.N
    root_n = np.sqrt(N)
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal(N)
    x *= cfg.start_radius * root_n / np.linalg.norm(x)
    step = cfg.step_length * root_n

    trajectory = Trajectory()
    previous = None
    while True:
        sigma = SpherePoint(x * root_n / np.linalg.norm(x))
        derivs = spherical_derivatives(H, sigma)
        trajectory.append(sigma, derivs.energy, derivs.grad_norm, derivs.radial)

        remaining = N - float(x @ x)
        if remaining <= 1e-12 * N:
            break
        start = derivs.frame.to_frame(previous) if previous is not None else None
        if start is not None and not np.any(start):
            start = None
        top, vec = _top_eigenvector(derivs.riemannian + derivs.radial * np.eye(N - 1), cfg.power_tol, start)
        if top > cfg.power_tol:
            direction = derivs.frame.to_ambient(vec)
        elif derivs.grad_norm > 0:
            direction = derivs.sph_gradient
        else:
            direction = derivs.frame.to_ambient(vec)
        direction = direction / np.linalg.norm(direction)
        if direction @ derivs.sph_gradient < 0:
            direction = -direction
        previous = direction

        length = min(step, np.sqrt(remaining))
        x = x + length * direction
        if length < step:
            x *= root_n / np.linalg.norm(x)

    trajectory.stop_reason = StopReason.RADIUS_REACHED
    return trajectory


def round_to_ball(x: np.ndarray) -> np.ndarray:
    """x phi(||x||/sqrt(N)) with phi(r) = min(1, 1/r): the nearest point of B_N"""
    x = np.asarray(x, dtype=np.float64)
    radius = np.sqrt(x.size)
    norm = np.linalg.norm(x)
    if norm <= radius:
        return x.copy()
    return x * (radius / norm)


@dataclass
class AlgorithmHandle:
    """Named, seedable map (Hamiltonian, aux seed) -> point of B_N"""
    name: str
    fn: Callable[[Hamiltonian, int], np.ndarray]
    params: Dict[str, Any] = field(default_factory=dict)

    def __call__(self, H: Hamiltonian, aux_seed: int) -> np.ndarray:
        return round_to_ball(self.fn(H, aux_seed))

    def metadata(self) -> Dict[str, Any]:
        return {"name": self.name, **self.params}


def constant_algorithm(point: np.ndarray, name: str = "constant") -> AlgorithmHandle:
    point = round_to_ball(point)
    return AlgorithmHandle(name=name, fn=lambda H, aux: point, params={"norm": float(np.linalg.norm(point))})


def linear_row_algorithm() -> AlgorithmHandle:
    """First coefficient row of G, normalized onto the boundary of B_N"""

    def first_row(H: Hamiltonian, aux_seed: int) -> np.ndarray:
        index = (0,) * (H.p - 1)
        row = np.array(H.coefficients[index], dtype=np.float64)
        return np.sqrt(H.N) * row / np.linalg.norm(row)

    return AlgorithmHandle(name="linear-row", fn=first_row, params={"normalized": True})


def linear_row_stability(epsilon: float, N: int) -> float:
    """Exact E||A(H) - A(H_{1-eps})||^2 / (N eps) for the normalized row.

    The rows are (1-eps)-correlated Gaussian vectors in R^N, so the output
    distance is 2N(1 - cos theta) and E[cos theta] follows the sample
    correlation law with N degrees of freedom. Equals 2 + (1-eps)(2-eps)/N + O(N^-2).
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    q = 1.0 - epsilon
    log_ratio = 2.0 * (scipy.special.gammaln((N + 1) / 2.0) - scipy.special.gammaln(N / 2.0))
    mean_cos = (2.0 / N) * math.exp(log_ratio) * q * scipy.special.hyp2f1(0.5, 0.5, N / 2.0 + 1.0, q * q)
    return 2.0 * (1.0 - mean_cos) / epsilon


def gd_ascent_algorithm(cfg: AscentConfig) -> AlgorithmHandle:
    """gd_ascent from a start point drawn from the aux seed"""

    def run(H: Hamiltonian, aux_seed: int) -> np.ndarray:
        start = SpherePoint.random(H.N, aux_seed)
        return gd_ascent(H, start, cfg).final.coords

    return AlgorithmHandle(name="gd-ascent", fn=run,
                           params={"eta": cfg.eta, "max_iters": cfg.max_iters, "delta": cfg.delta})


def hessian_ascent_algorithm(cfg: AscentConfig) -> AlgorithmHandle:

    def run(H: Hamiltonian, aux_seed: int) -> np.ndarray:
        local = AscentConfig(eta=cfg.eta, max_iters=cfg.max_iters, delta=cfg.delta, seed=aux_seed,
                             start_radius=cfg.start_radius, step_length=cfg.step_length,
                             power_tol=cfg.power_tol)
        return hessian_ascent(H, local).final.coords

    return AlgorithmHandle(name="hessian-ascent", fn=run,
                           params={"start_radius": cfg.start_radius, "step_length": cfg.step_length})


def warm_start_algorithm(cfg: AscentConfig, anchor: np.ndarray, overlap: float = 0.9) -> AlgorithmHandle:
    """gd_ascent started at overlap R(start, anchor) = overlap, the rest drawn from the aux seed"""
    if not 0.0 <= overlap <= 1.0:
        raise ValueError(f"overlap must lie in [0, 1], got {overlap}")
    anchor = as_sphere_point(anchor)

    def run(H: Hamiltonian, aux_seed: int) -> np.ndarray:
        rng = np.random.default_rng(aux_seed)
        z = rng.standard_normal(anchor.N)
        z -= (z @ anchor.coords) / anchor.N * anchor.coords
        z *= np.sqrt(anchor.N) / np.linalg.norm(z)
        start = SpherePoint.from_vector(overlap * anchor.coords + np.sqrt(1.0 - overlap ** 2) * z)
        return gd_ascent(H, start, cfg).final.coords

    return AlgorithmHandle(name="warm-start-gd", fn=run, params={"overlap": overlap, "eta": cfg.eta})
