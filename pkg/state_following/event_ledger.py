import logging
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import LENIENCY_RANGE, bulk_edge
from ensemble.chain_sampler import HamiltonianChain
from sphere_geometry.sphere_calculus import SpherePoint, as_sphere_point
from state_following.follower import FollowParams
from tensor_core.hamiltonian import Hamiltonian, combine, derive_seed
from tensor_core.opnorm import derivative_ratios, random_ball_probes
from wells.well_detector import WellType, hessian_spectrum, in_typed_well

logger = logging.getLogger(__name__)

TAU_MIN, TAU_MAX = LENIENCY_RANGE


def a_star_from_tau(tau: float) -> float:
    """a* = max(0, min(1, 14 - 10 tau))"""
    return float(max(0.0, min(1.0, 14.0 - 10.0 * tau)))


def _clip_tau(tau: float) -> float:
    """Infimal tau clipped to [1, 1.6]; unsatisfiable conditions map to 1.6"""
    if not np.isfinite(tau) or tau > TAU_MAX:
        return TAU_MAX
    return float(max(TAU_MIN, tau))


def tau_radial(radial: float, p: int, gamma: float) -> float:
    """Smallest tau with radial - 2 sqrt(p(p-1)) > gamma / tau"""
    margin = radial - bulk_edge(p)
    if margin <= 0:
        return np.inf
    return gamma / margin


def tau_gradient(grad_norm: float, N: int, delta: float) -> float:
    """Smallest tau with grad_norm < delta^{1/tau} sqrt(N)"""
    g = grad_norm / np.sqrt(N)
    if g <= delta:
        return TAU_MIN
    if g >= 1.0:
        return np.inf
    return float(np.log(delta) / np.log(g))


def tau_spectral(eigenvalues: np.ndarray, d: int, iota: float) -> float:
    """Smallest tau with exactly d magnitudes <= tau iota and none in (tau iota, 3 iota / tau]"""
    mags = np.sort(np.abs(np.asarray(eigenvalues, dtype=np.float64)))
    if d > mags.size:
        return np.inf
    tau = TAU_MIN
    if d > 0:
        tau = max(tau, mags[d - 1] / iota)
    if d < mags.size:
        nxt = mags[d]
        if nxt <= 0:
            return np.inf
        tau = max(tau, 3.0 * iota / nxt)
    return float(tau)


def bounded_ratios(H: Hamiltonian, probes, seed: int) -> float:
    ratios = derivative_ratios(H, probes, seed=seed)
    return float(max(ratios.values()))


@dataclass
class EventLedger:
    solve: List[bool] = field(default_factory=list)
    stab: List[bool] = field(default_factory=list)
    bdd: bool = True
    all: bool = True
    lenient: List[Dict[str, float]] = field(default_factory=list)
    bounded: List[Dict[str, float]] = field(default_factory=list)
    tau_solve: float = TAU_MIN
    tau_bdd: float = TAU_MIN
    tau_all: float = TAU_MIN
    a_star: float = 1.0
    probe_based: bool = True

    @property
    def taus(self) -> Tuple[float, float, float]:
        return self.tau_solve, self.tau_bdd, self.tau_all

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _check_alignment(chain: HamiltonianChain, sigmas: Sequence[SpherePoint]):
    if len(sigmas) != len(chain):
        raise ValueError(f"Need one point per chain element: {len(chain)} Hamiltonians, {len(sigmas)} points")


def solve_margins(H: Hamiltonian, sigma: SpherePoint, params: FollowParams) -> Dict[str, float]:
    """Per-condition infimal tau (unclipped) for sigma in W^tau of H"""
    spectrum = hessian_spectrum(H, sigma)
    derivs = spectrum.derivs
    radial = tau_radial(derivs.radial, H.p, params.gamma)
    gradient = tau_gradient(derivs.grad_norm, H.N, params.delta)
    spectral = tau_spectral(spectrum.eigenvalues, params.d, params.iota)
    return {"radial": radial, "gradient": gradient, "spectral": spectral,
            "tau": max(TAU_MIN, radial, gradient, spectral),
            "solve": in_typed_well(H, sigma, params.gamma, params.delta,
                                   WellType.from_iota(params.d, params.iota), spectrum=spectrum)}


def bounded_margins(chain: HamiltonianChain, sigmas: Sequence[SpherePoint], params: FollowParams,
                    seed: int = 0) -> List[Dict[str, float]]:
    """Largest derivative-norm ratio of each H^(i) and each scaled difference, probe-based"""
    N = chain.N
    C = params.bound_constant(chain.p)
    rows = []
    for i, ham in enumerate(chain.hams):
        probes = [sigmas[i].coords] + random_ball_probes(N, params.n_probes, derive_seed(seed, i, 0))
        ratio = bounded_ratios(ham, probes, derive_seed(seed, i, 1))
        rows.append({"kind": "element", "i": i, "ratio": ratio, "tau": ratio / C})
    if chain.epsilon > 0:
        scale = 1.0 / np.sqrt(2.0 * chain.epsilon)
        for i in range(chain.K):
            diff = combine([scale, -scale], [chain[i + 1], chain[i]])
            probes = [sigmas[i].coords, sigmas[i + 1].coords] + random_ball_probes(
                N, params.n_probes, derive_seed(seed, i, 2))
            ratio = bounded_ratios(diff, probes, derive_seed(seed, i, 3))
            rows.append({"kind": "difference", "i": i, "ratio": ratio, "tau": ratio / C})
    return rows


def event_report(chain: HamiltonianChain, sigmas: Sequence[SpherePoint], params: FollowParams,
                 seed: int = 0, stab_delta: Optional[float] = None) -> EventLedger:
    """S_solve, S_stab, S_bdd and S_all along a chain, with the lenient tau margins.

    stab_delta replaces delta in the stability test only.
    """
    _check_alignment(chain, sigmas)
    sigmas = [as_sphere_point(s) for s in sigmas]
    root_n = np.sqrt(chain.N)
    stab_delta = params.delta if stab_delta is None else stab_delta

    ledger = EventLedger()
    for ham, sigma in zip(chain.hams, sigmas):
        margins = solve_margins(ham, sigma, params)
        ledger.solve.append(bool(margins.pop("solve")))
        ledger.lenient.append(margins)
    ledger.stab = [bool(np.linalg.norm(sigmas[i].coords - sigmas[i + 1].coords) / root_n < stab_delta)
                   for i in range(chain.K)]
    ledger.bounded = bounded_margins(chain, sigmas, params, seed=seed)
    ledger.bdd = all(row["tau"] < 1.0 for row in ledger.bounded)
    ledger.all = bool(all(ledger.solve) and all(ledger.stab) and ledger.bdd)

    ledger.tau_solve = _clip_tau(max(m["tau"] for m in ledger.lenient))
    ledger.tau_bdd = _clip_tau(max(row["tau"] for row in ledger.bounded))
    ledger.tau_all = min(ledger.tau_solve, ledger.tau_bdd)
    ledger.a_star = a_star_from_tau(ledger.tau_all)
    logger.info(f"📊 Events: S_all={ledger.all}, tau*=({ledger.tau_solve:.3f}, {ledger.tau_bdd:.3f}, "
                f"{ledger.tau_all:.3f}), a*={ledger.a_star:.2f}")
    return ledger


def compute_tau_star(chain: HamiltonianChain, sigmas: Sequence[SpherePoint], params: FollowParams,
                     seed: int = 0) -> Tuple[Tuple[float, float, float], EventLedger]:
    ledger = event_report(chain, sigmas, params, seed=seed)
    return ledger.taus, ledger


def success_stability_bound(p_solve: float, p_unstable: float, K: int) -> float:
    """(p_solve^2 - p_unstable)_+^{2K}"""
    return float(max(0.0, p_solve ** 2 - p_unstable) ** (2 * K))


def unstable_plugin(S: float, epsilon: float, delta: float) -> float:
    """p_unstable <= S eps / delta^2"""
    return float(S * epsilon / delta ** 2)
