import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg

from config import (
    NEWTON_MAX_ITER, NEWTON_TOL, NEWTON_TRUST_CONSTANT, NEWTON_MAX_HALVINGS, GRAM_SCHMIDT_PIVOT_FLOOR,
    RANDOM_PROBES, k_n_constant,
)
from ensemble.chain_sampler import HamiltonianChain, endpoint_embed, bridge_fill
from sphere_geometry.sphere_calculus import SpherePoint, as_sphere_point, log_map
from tensor_core.hamiltonian import Hamiltonian, combine, derive_seed, sample_hamiltonian
from tensor_core.opnorm import in_K_N, random_ball_probes
from wells.davis_kahan import TrackingFailure, subspace_distance, tracked_band_mask
from wells.planted import PlantedSpike
from wells.well_detector import (
    HessianSpectrum, band_mask, hessian_spectrum, in_lenient_well, well_report,
)

logger = logging.getLogger(__name__)

SERIES_CUTOFF = 1e-2
BASIS_TOLERANCE = 1e-6


class FollowError(RuntimeError):
    """Base class for a violated state-following condition"""
    reason = "follow"


class NewtonDiverged(FollowError):
    reason = "newton_diverged"

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"Newton residual {residual:.3e} not below tolerance after {iterations} iterations")


class StepTooLarge(FollowError):
    reason = "step_too_large"

    def __init__(self, step_norm: float, bound: float):
        self.step_norm = step_norm
        self.bound = bound
        super().__init__(f"Complement step ||z|| = {step_norm:.4g} exceeds trust bound {bound:.4g}")


class PreconditionFailed(FollowError):
    reason = "precondition"

    def __init__(self, condition: str, detail: str = ""):
        self.condition = condition
        super().__init__(f"Precondition '{condition}' failed" + (f": {detail}" if detail else ""))


class DavisKahanFailed(FollowError):
    reason = "davis_kahan"

    def __init__(self, message: str, eigenvalues):
        self.eigenvalues = [float(v) for v in eigenvalues]
        super().__init__(f"{message}: {self.eigenvalues}")


class GramSchmidtDegenerate(FollowError):
    reason = "gram_schmidt"

    def __init__(self, pivot: float):
        self.pivot = pivot
        super().__init__(f"Projected basis nearly dependent: minimal Gram-Schmidt pivot {pivot:.3e}")


@dataclass
class FollowParams:
    gamma: float
    delta: float
    d: int
    iota: float
    epsilon: float = 0.0
    K: int = 1
    tol: float = NEWTON_TOL
    trust_c: float = NEWTON_TRUST_CONSTANT
    max_newton: int = NEWTON_MAX_ITER
    C: Optional[float] = None
    check_bounded: bool = False
    n_probes: int = RANDOM_PROBES
    spike: Optional[PlantedSpike] = None
    seed: int = 0

    def __post_init__(self):
        if self.gamma <= 0 or self.delta <= 0 or self.iota <= 0:
            raise ValueError(f"gamma, delta, iota must be positive, got {self.gamma}, {self.delta}, {self.iota}")
        if self.d < 0:
            raise ValueError(f"d must be nonnegative, got {self.d}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")

    def bound_constant(self, p: int) -> float:
        return self.C if self.C is not None else k_n_constant(p)

    @property
    def u_bound_factor(self) -> float:
        """delta'' = delta^0.6"""
        return self.delta ** 0.6


@dataclass
class AuxRandomness:
    """omega: H0, sigma0, basis0, u_tilde and the seeds of the fresh bridge tensors"""
    H0: Hamiltonian
    sigma0: SpherePoint
    basis0: np.ndarray
    u_tilde: np.ndarray
    g_seeds: List[int]
    seed: Optional[int] = None

    def __post_init__(self):
        N = self.sigma0.N
        self.basis0 = np.asarray(self.basis0, dtype=np.float64).reshape(N, -1)
        d = self.basis0.shape[1]
        self.u_tilde = np.asarray(self.u_tilde, dtype=np.float64)
        if self.u_tilde.ndim != 2 or self.u_tilde.shape[1] != d:
            raise ValueError(f"u_tilde must have shape (K, {d}), got {self.u_tilde.shape}")
        if d:
            if np.max(np.abs(self.basis0.T @ self.basis0 - np.eye(d))) > 1e-10:
                raise ValueError("basis0 is not orthonormal")
            if np.max(np.abs(self.basis0.T @ self.sigma0.coords)) > 1e-8 * np.sqrt(N):
                raise ValueError("basis0 is not tangent at sigma0")
        norms = np.linalg.norm(self.u_tilde, axis=1) if d else np.zeros(len(self.u_tilde))
        if np.any(norms >= np.sqrt(N)):
            raise ValueError("u_tilde vectors must have norm < sqrt(N)")

    @property
    def K(self) -> int:
        return len(self.u_tilde)

    @property
    def d(self) -> int:
        return self.basis0.shape[1]

    def fresh(self, k: int) -> Hamiltonian:
        """G^(k) for 1 <= k <= K-1, regenerated from its seed"""
        return sample_hamiltonian(self.H0.N, self.H0.p, self.g_seeds[k - 1])


def smallest_magnitude_basis(spectrum: HessianSpectrum, d: int) -> np.ndarray:
    """Eigenvectors of the d eigenvalues closest to zero"""
    order = np.argsort(np.abs(spectrum.eigenvalues), kind="stable")[:d]
    return spectrum.vectors[:, np.sort(order)]


def sample_aux(N: int, p: int, K: int, d: int, seed: int, base_algorithm=None,
               spike: Optional[PlantedSpike] = None, sigma0: Optional[SpherePoint] = None,
               zero_u: bool = False) -> AuxRandomness:
    """Draw omega; sigma0 is the base algorithm's output on H0 (plus spike) unless given"""
    H0 = sample_hamiltonian(N, p, derive_seed(seed, 0))
    H0_eff = spike.apply(H0) if spike is not None else H0
    if sigma0 is None:
        if base_algorithm is None:
            sigma0 = SpherePoint.random(N, derive_seed(seed, 1))
        else:
            sigma0 = SpherePoint.from_vector(base_algorithm(H0_eff, derive_seed(seed, 1)))
    sigma0 = as_sphere_point(sigma0)
    basis0 = smallest_magnitude_basis(hessian_spectrum(H0_eff, sigma0), d) if d else np.zeros((N, 0))

    rng = np.random.default_rng(derive_seed(seed, 2))
    if zero_u or d == 0:
        u_tilde = np.zeros((K, d))
    else:
        directions = rng.standard_normal((K, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = np.sqrt(N) * rng.uniform(size=(K, 1)) ** (1.0 / d)
        u_tilde = directions * radii * (1.0 - 1e-12)
    g_seeds = [derive_seed(seed, 3, k) for k in range(1, K)]
    return AuxRandomness(H0=H0, sigma0=sigma0, basis0=basis0, u_tilde=u_tilde, g_seeds=g_seeds, seed=seed)


@dataclass
class FollowState:
    j: int
    sigma: SpherePoint
    basis: np.ndarray
    ham: Hamiltonian
    spectrum: Optional[HessianSpectrum] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)


@dataclass
class FollowStepResult:
    sigma: SpherePoint
    y: np.ndarray
    z_norm: float
    iterations: int
    residual: float


def _sinc_factors(x: float) -> Tuple[float, float, float]:
    """S = sin x/x, q = (cos x - S)/x^2 and w = (-S - 3q)/x^2, with series near 0"""
    if x < SERIES_CUTOFF:
        x2 = x * x
        S = 1.0 - x2 / 6.0 + x2 * x2 / 120.0
        q = -1.0 / 3.0 + x2 / 30.0 - x2 * x2 / 840.0
        w = 1.0 / 15.0 - x2 / 210.0
        return S, q, w
    S = np.sin(x) / x
    q = (np.cos(x) - S) / (x * x)
    w = (-S - 3.0 * q) / (x * x)
    return S, q, w


def _pulled_back(H_new: Hamiltonian, sigma: SpherePoint, y: np.ndarray, with_hessian: bool = True):
    """Gradient and Hessian of F(y) = H_new(T_sigma(y)) in ambient coordinates.

    T(y) = cos(r/sqrt(N)) sigma + S(r) y with S(r) = sin(r/sqrt(N)) / (r/sqrt(N)).
    """
    N = sigma.N
    s = sigma.coords
    a2 = 1.0 / N
    r = float(np.linalg.norm(y))
    x_angle = r / np.sqrt(N)
    S, q, w = _sinc_factors(x_angle)
    point = np.cos(x_angle) * s + S * y

    if with_hessian:
        _, g, A = H_new.derivatives(point)
    else:
        g, A = H_new.gradient(point), None
    sg = float(s @ g)
    yg = float(y @ g)
    grad = S * g + a2 * y * (q * yg - S * sg)
    if A is None:
        return point, grad, None

    J = S * np.eye(N) + a2 * np.outer(q * y - S * s, y)
    beta = a2 * (q * yg - S * sg)
    curvature = a2 * a2 * (w * yg - q * sg)
    hess = J.T @ A @ J
    hess += beta * np.eye(N) + curvature * np.outer(y, y) + a2 * q * (np.outer(y, g) + np.outer(g, y))
    return point, grad, (hess + hess.T) / 2.0


def _complement_basis(spectrum: HessianSpectrum, iota: float) -> Tuple[np.ndarray, np.ndarray]:
    mask = band_mask(spectrum.eigenvalues, iota)
    return spectrum.vectors[:, mask], spectrum.vectors[:, ~mask]


def _newton_restricted(H_new: Hamiltonian, sigma: SpherePoint, u: np.ndarray, Q: np.ndarray,
                       params: FollowParams, c0: Optional[np.ndarray] = None) -> FollowStepResult:
    N = sigma.N
    root_n = np.sqrt(N)
    target = params.tol * root_n
    bound = params.trust_c * params.delta * root_n
    c = np.zeros(Q.shape[1]) if c0 is None else np.array(c0, dtype=np.float64)

    def residual_at(coeffs, with_hessian):
        y = u + Q @ coeffs
        if np.linalg.norm(y) >= root_n:
            raise StepTooLarge(float(np.linalg.norm(coeffs)), bound)
        _, grad, hess = _pulled_back(H_new, sigma, y, with_hessian)
        return y, Q.T @ grad, hess

    y, R, hess = residual_at(c, True)
    res = float(np.linalg.norm(R))
    iterations = 0
    while res > target:
        if iterations >= params.max_newton:
            raise NewtonDiverged(res, iterations)
        jac = Q.T @ hess @ Q
        try:
            step = -scipy.linalg.solve(jac, R, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            raise NewtonDiverged(res, iterations)

        length = 1.0
        for _ in range(NEWTON_MAX_HALVINGS + 1):
            trial = c + length * step
            _, R_trial, _ = residual_at(trial, False)
            if np.linalg.norm(R_trial) < res:
                break
            length /= 2.0
        else:
            raise NewtonDiverged(res, iterations + 1)

        c = trial
        iterations += 1
        if np.linalg.norm(c) > bound:
            raise StepTooLarge(float(np.linalg.norm(c)), bound)
        y, R, hess = residual_at(c, True)
        res = float(np.linalg.norm(R))

    point = _pulled_back(H_new, sigma, y, with_hessian=False)[0]
    return FollowStepResult(sigma=SpherePoint.from_vector(point), y=y, z_norm=float(np.linalg.norm(c)),
                            iterations=iterations, residual=res)


def _check_u(u: np.ndarray, inside: np.ndarray, params: FollowParams, N: int):
    norm = float(np.linalg.norm(u))
    if norm >= params.u_bound_factor * np.sqrt(N):
        raise PreconditionFailed("u_norm", f"||u|| = {norm:.4g} >= delta^0.6 sqrt(N)")
    leftover = u - inside @ (inside.T @ u) if inside.shape[1] else u
    if np.linalg.norm(leftover) > 1e-8 * max(1.0, norm):
        raise ValueError("u must lie in the near-zero eigenspace U_iota(sigma; H)")


def bounded_step_ok(H: Hamiltonian, H_new: Hamiltonian, params: FollowParams, probes, tau: float = 1.6) -> bool:
    """H_new in tau K_N and (H_new - H)/sqrt(2 eps) in tau K_N"""
    C = tau * params.bound_constant(H.p)
    if not in_K_N(H_new, C, probes, seed=params.seed).inside:
        return False
    if params.epsilon == 0.0:
        return True
    diff = combine([1.0 / np.sqrt(2.0 * params.epsilon), -1.0 / np.sqrt(2.0 * params.epsilon)], [H_new, H])
    return in_K_N(diff, C, probes, seed=params.seed).inside


def follow_step(H: Hamiltonian, H_new: Hamiltonian, sigma: SpherePoint, u, params: FollowParams,
                spectrum: Optional[HessianSpectrum] = None, check_preconditions: bool = True) -> FollowStepResult:
    """Stationary point of H_new o T_sigma restricted to u + (U_iota^perp cap sigma^perp).

    Damped Newton from z = 0; the near-zero eigenspace of H at sigma stays frozen.
    """
    sigma = as_sphere_point(sigma)
    N = sigma.N
    u = np.asarray(getattr(u, "ambient", u), dtype=np.float64)
    spectrum = hessian_spectrum(H, sigma) if spectrum is None else spectrum
    inside, Q = _complement_basis(spectrum, params.iota)

    if check_preconditions:
        if not in_lenient_well(H, sigma, params.gamma, params.delta, params.d, params.iota, 1.6, spectrum=spectrum):
            raise PreconditionFailed("lenient_well", "sigma is not in W^1.6")
        if params.check_bounded:
            probes = [sigma.coords] + random_ball_probes(N, params.n_probes, params.seed)
            if not bounded_step_ok(H, H_new, params, probes):
                raise PreconditionFailed("bounded_step", "Hamiltonian step is outside 1.6 sqrt(2 eps) K_N")
    if inside.shape[1] != params.d:
        raise PreconditionFailed("near_zero_dimension", f"dim U_iota = {inside.shape[1]}, expected d = {params.d}")
    _check_u(u, inside, params, N)

    return _newton_restricted(H_new, sigma, u, Q, params)


def polish_critical_point(H: Hamiltonian, sigma: SpherePoint, params: FollowParams) -> SpherePoint:
    """Newton-refine a well point to a stationary point of H on the U_iota complement"""
    return follow_step(H, H, sigma, np.zeros(as_sphere_point(sigma).N), params, check_preconditions=False).sigma


def uniqueness_probe(H: Hamiltonian, H_new: Hamiltonian, sigma: SpherePoint, u, params: FollowParams,
                     n_restarts: int = 5, radius: Optional[float] = None, seed: int = 0,
                     spectrum: Optional[HessianSpectrum] = None) -> Dict[str, Any]:
    """Restart the Newton solve from random z with ||z|| <= radius and compare endpoints"""
    sigma = as_sphere_point(sigma)
    N = sigma.N
    u = np.asarray(getattr(u, "ambient", u), dtype=np.float64)
    spectrum = hessian_spectrum(H, sigma) if spectrum is None else spectrum
    _, Q = _complement_basis(spectrum, params.iota)
    radius = params.delta * np.sqrt(N) if radius is None else radius

    reference = _newton_restricted(H_new, sigma, u, Q, params)
    rng = np.random.default_rng(seed)
    deviations, failures = [], []
    for _ in range(n_restarts):
        c0 = rng.standard_normal(Q.shape[1])
        c0 *= radius * rng.uniform() / np.linalg.norm(c0)
        try:
            other = _newton_restricted(H_new, sigma, u, Q, params, c0=c0)
            deviations.append(float(np.linalg.norm(other.sigma.coords - reference.sigma.coords)) / np.sqrt(N))
        except FollowError as e:
            failures.append(str(e))
    return {"max_deviation": max(deviations) if deviations else float("nan"),
            "converged": len(deviations), "failures": failures, "radius": radius}


def transport_from_spectrum(eigenvalues: np.ndarray, vectors: np.ndarray, basis: np.ndarray, iota: float,
                            d: int) -> Tuple[np.ndarray, Dict[str, Any]]:
    """Gram-Schmidt of the old basis projected onto the new 1.1 iota eigenspace"""
    basis = np.asarray(basis, dtype=np.float64)
    if d == 0:
        return np.zeros((vectors.shape[0], 0)), {"d": 0, "min_pivot": None, "projector_change": 0.0}
    if basis.shape[1] != d:
        raise ValueError(f"basis has {basis.shape[1]} columns, expected d = {d}")

    try:
        mask = tracked_band_mask(eigenvalues, iota, d)
    except TrackingFailure as e:
        raise DavisKahanFailed(e.message, e.eigenvalues)

    V = vectors[:, mask]
    projected = V @ (V.T @ basis)
    Q, R = scipy.linalg.qr(projected, mode="economic")
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q = Q * signs
    pivots = np.abs(np.diag(R))
    min_pivot = float(np.min(pivots))
    if min_pivot < GRAM_SCHMIDT_PIVOT_FLOOR:
        raise GramSchmidtDegenerate(min_pivot)
    diagnostics = {
        "d": d,
        "min_pivot": min_pivot,
        "projector_change": subspace_distance(basis, Q),
        "basis_shift": float(np.max(np.linalg.norm(Q - basis, axis=0))),
    }
    return Q, diagnostics


def transport_basis(H: Hamiltonian, H_new: Hamiltonian, sigma: SpherePoint, sigma_new: SpherePoint,
                    basis: np.ndarray, iota: float, d: int,
                    spectrum_new: Optional[HessianSpectrum] = None) -> Tuple[np.ndarray, Dict[str, Any]]:
    """Orthonormal basis of U_iota(sigma_new; H_new) nested-aligned with the old basis"""
    sigma_new = as_sphere_point(sigma_new)
    if d == 0:
        return np.zeros((sigma_new.N, 0)), {"d": 0, "min_pivot": None, "projector_change": 0.0}
    spectrum_new = hessian_spectrum(H_new, sigma_new) if spectrum_new is None else spectrum_new
    new_basis, diagnostics = transport_from_spectrum(spectrum_new.eigenvalues, spectrum_new.vectors,
                                                     basis, iota, d)
    N = sigma_new.N
    driver = (float(np.linalg.norm((H.coefficients - H_new.coefficients).ravel()))
              + float(np.linalg.norm(as_sphere_point(sigma).coords - sigma_new.coords))) / np.sqrt(N)
    diagnostics["driver"] = driver
    diagnostics["shift_ratio"] = diagnostics["basis_shift"] / driver if driver > 0 else 0.0
    return new_basis, diagnostics


def choose_u_oracle(sigma: SpherePoint, basis: np.ndarray, target: SpherePoint) -> np.ndarray:
    """Coordinates in basis of P_span(basis) log_sigma(target)"""
    sigma = as_sphere_point(sigma)
    basis = np.asarray(basis, dtype=np.float64).reshape(sigma.N, -1)
    if basis.shape[1] == 0:
        return np.zeros(0)
    return basis.T @ log_map(sigma, target).ambient


def base_algorithm_oracle(algorithm, aux_seed: int) -> Callable:
    """u_oracle running a base algorithm on the next chain element"""

    def oracle(j: int, state: FollowState, next_ham: Hamiltonian) -> np.ndarray:
        target = SpherePoint.from_vector(algorithm(next_ham, aux_seed))
        return choose_u_oracle(state.sigma, state.basis, target)

    return oracle


@dataclass
class Undefined:
    """Why and where the locally Lipschitz driver stopped"""
    reason: str
    step: int
    detail: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"reason": self.reason, "step": self.step, "detail": self.detail}


@dataclass
class TrackingRun:
    output: Union[SpherePoint, Undefined]
    chain: HamiltonianChain
    sigmas: List[SpherePoint]
    steps: List[Dict[str, Any]] = field(default_factory=list)
    final_checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def defined(self) -> bool:
        return isinstance(self.output, SpherePoint)

    def summary(self) -> Dict[str, Any]:
        info = {"defined": self.defined, "steps_completed": len(self.sigmas) - 1, **self.final_checks}
        if not self.defined:
            info.update({f"undefined_{k}": v for k, v in self.output.to_dict().items()})
        return info


def build_chain(H: Hamiltonian, aux: AuxRandomness, params: FollowParams) -> HamiltonianChain:
    """H^(K) = endpoint_embed(H0, H), interior by bridge_fill, spike added to every element"""
    K, eps = aux.K, params.epsilon
    end = endpoint_embed(aux.H0, H, K, eps)
    hams = [aux.H0]
    for k in range(1, K):
        hams.append(bridge_fill(hams[-1], end, k, K, eps, aux.fresh(k)))
    hams.append(end)
    if params.spike is not None:
        hams = [params.spike.apply(h) for h in hams]
    seeds = [aux.H0.tensor.seed, H.tensor.seed] + list(aux.g_seeds)
    return HamiltonianChain(hams=hams, epsilon=eps, seeds=seeds, mode="bridge")


def _step_record(j: int, ham: Hamiltonian, spectrum: HessianSpectrum, **extra) -> Dict[str, Any]:
    derivs = spectrum.derivs
    N = ham.N
    return {"j": j, "energy_per_N": derivs.energy / N, "grad_norm_per_sqrtN": derivs.grad_norm / np.sqrt(N),
            "radial_derivative": derivs.radial, "top_eigenvalue": float(spectrum.eigenvalues[0]), **extra}


def run_loclip(H: Hamiltonian, aux: AuxRandomness, params: FollowParams,
               u_oracle: Optional[Callable] = None) -> TrackingRun:
    """K steps of state following along the bridge chain built from (H, omega).

    Never raises on a violated condition: the first failure becomes the
    Undefined output, and the partial trajectory is kept.
    """
    if aux.K != params.K:
        raise ValueError(f"omega was drawn for K={aux.K}, params ask for K={params.K}")
    if aux.d != params.d:
        raise ValueError(f"omega was drawn for d={aux.d}, params ask for d={params.d}")
    chain = build_chain(H, aux, params)
    N = H.N
    root_n = np.sqrt(N)
    sigmas = [aux.sigma0]
    run = TrackingRun(output=Undefined("pending", 0), chain=chain, sigmas=sigmas)

    def stop(reason: str, j: int, detail: str = "") -> TrackingRun:
        logger.info(f"⚠️ run_loclip undefined at step {j}: {reason} {detail}")
        run.output = Undefined(reason, j, detail)
        return run

    spectrum = hessian_spectrum(chain[0], aux.sigma0)
    if not in_lenient_well(chain[0], aux.sigma0, params.gamma, params.delta, params.d, params.iota, 1.6,
                           spectrum=spectrum):
        return stop("S_solve(0)", 0, "sigma0 is not in W^1.6 of H^(0)")
    basis = aux.basis0
    if params.d:
        expected = spectrum.vectors[:, band_mask(spectrum.eigenvalues, params.iota)]
        if expected.shape[1] != params.d or subspace_distance(basis, expected) > BASIS_TOLERANCE:
            return stop("basis(0)", 0, "basis0 does not span U_iota(sigma0; H^(0))")
    run.steps.append(_step_record(0, chain[0], spectrum))

    state = FollowState(j=0, sigma=aux.sigma0, basis=basis, ham=chain[0], spectrum=spectrum)
    for j in range(params.K):
        H_next = chain[j + 1]
        if params.check_bounded:
            probes = [state.sigma.coords] + random_ball_probes(N, params.n_probes, derive_seed(params.seed, j))
            if not bounded_step_ok(state.ham, H_next, params, probes):
                return stop("S_bdd", j, "chain step outside 1.6 K_N")

        u_coords = u_oracle(j, state, H_next) if u_oracle is not None else aux.u_tilde[j]
        u = state.basis @ np.asarray(u_coords, dtype=np.float64) if params.d else np.zeros(N)
        u_norm = float(np.linalg.norm(u))
        if not np.isfinite(u_norm) or u_norm >= params.u_bound_factor * root_n:
            return stop("u_norm", j, f"||u||/sqrt(N) = {u_norm / root_n:.4g}")

        try:
            step = follow_step(state.ham, H_next, state.sigma, u, params, spectrum=state.spectrum,
                               check_preconditions=False)
            spectrum_next = hessian_spectrum(H_next, step.sigma)
            basis_next, transport = transport_basis(state.ham, H_next, state.sigma, step.sigma, state.basis,
                                                    params.iota, params.d, spectrum_new=spectrum_next)
        except FollowError as e:
            return stop(e.reason, j, str(e))
        except ValueError as e:
            return stop("domain", j, str(e))

        sigmas.append(step.sigma)
        if not in_lenient_well(H_next, step.sigma, params.gamma, params.delta, params.d, params.iota, 1.6,
                               spectrum=spectrum_next):
            return stop(f"S_solve({j + 1})", j + 1, "tracked point left W^1.6")

        run.steps.append(_step_record(j + 1, H_next, spectrum_next, newton_iterations=step.iterations,
                                      newton_residual=step.residual, z_norm_per_sqrtN=step.z_norm / root_n,
                                      u_norm_per_sqrtN=float(np.linalg.norm(u)) / root_n,
                                      projector_change=transport.get("projector_change", 0.0)))
        state = FollowState(j=j + 1, sigma=step.sigma, basis=basis_next, ham=H_next, spectrum=spectrum_next)

    final = chain[params.K]
    half = well_report(final, state.sigma, params.gamma / 2.0, params.delta ** (1.0 / 3.0), with_spectrum=False)
    third = well_report(final, state.sigma, params.gamma / 3.0, params.delta ** 0.25, with_spectrum=False)
    run.final_checks = {"well_half_gamma": half.is_well, "well_third_gamma": third.is_well}
    run.output = state.sigma
    return run
