import logging
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import OPNORM_ITERS, OPNORM_RESTARTS, OPNORM_TOL, K_N_CALIBRATION_FACTOR
from tensor_core.hamiltonian import Hamiltonian, _contract_except, derive_seed, sample_hamiltonian

logger = logging.getLogger(__name__)


def _contract_vectors(A: np.ndarray, vectors: Sequence[Optional[np.ndarray]]) -> np.ndarray:
    """Contract A with one vector per mode; a None entry leaves that mode open"""
    result = A
    for axis in reversed(range(A.ndim)):
        if vectors[axis] is None:
            continue
        result = np.tensordot(result, vectors[axis], axes=([axis], [0]))
    return result


def _form(A: np.ndarray, x: np.ndarray) -> float:
    return float(_contract_vectors(A, [x] * A.ndim))


def _form_gradient(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(x)
    for mode in range(A.ndim):
        partial = [x] * A.ndim
        partial[mode] = None
        grad += _contract_vectors(A, partial)
    return grad


def _start_vector(A: np.ndarray) -> np.ndarray:
    gram = np.zeros((A.shape[0], A.shape[0]))
    for mode in range(A.ndim):
        unfolded = np.moveaxis(A, mode, 0).reshape(A.shape[mode], -1)
        gram += unfolded @ unfolded.T
    _, vecs = np.linalg.eigh(gram)
    return vecs[:, -1]


def _power_iterate(A: np.ndarray, x: np.ndarray, iters: int, tol: float) -> float:
    """Shifted symmetric power iteration on A[x,...,x]; returns the best value seen"""
    x = x / np.linalg.norm(x)
    value = _form(A, x)
    best = value
    shift = 0.0
    for _ in range(iters):
        grad = _form_gradient(A, x) / A.ndim
        candidate = grad + shift * x
        norm = np.linalg.norm(candidate)
        if norm == 0.0:
            break
        candidate = candidate / norm
        candidate_value = _form(A, candidate)
        if candidate_value < value:
            # overshoot: stiffen the shift and retry from the same point
            shift = 2.0 * shift + np.linalg.norm(grad)
            continue
        gain = candidate_value - value
        x, value = candidate, candidate_value
        best = max(best, value)
        if gain <= tol * max(abs(value), 1.0):
            break
    return best


def tensor_opnorm_estimate(A: np.ndarray, iters: int = OPNORM_ITERS, restarts: int = OPNORM_RESTARTS,
                           seed: int = 0, tol: float = OPNORM_TOL) -> float:
    """Lower bound on sup |A[x,...,x]| over unit x (the operator norm for symmetric A).

    Starts from the leading eigenvector of the summed unfolding Gram matrices,
    then from random restarts, keeping the running best. Even orders are run
    on both A and -A.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 1:
        raise ValueError(f"Tensor order must be >= 1, got {A.ndim}")
    if len(set(A.shape)) != 1:
        raise ValueError(f"Tensor must be cubical, got shape {A.shape}")
    if A.ndim == 1:
        return float(np.linalg.norm(A))
    if A.ndim == 2:
        return float(np.max(np.abs(np.linalg.eigvalsh((A + A.T) / 2.0))))
    if not np.any(A):
        return 0.0

    starts = [_start_vector(A)]
    rng = np.random.default_rng(seed)
    starts += [rng.standard_normal(A.shape[0]) for _ in range(restarts)]
    best = 0.0
    for start in starts:
        if A.ndim % 2 == 1:
            runs = [(A, start), (A, -start)]
        else:
            runs = [(A, start), (-A, start)]
        for tensor, x0 in runs:
            best = max(best, _power_iterate(tensor, x0, iters, tol))
    return best


def symmetrize(entries: np.ndarray) -> np.ndarray:
    """Average of the tensor over all index permutations"""
    total = np.zeros_like(entries)
    perms = list(permutations(range(entries.ndim)))
    for perm in perms:
        total += np.transpose(entries, perm)
    return total / len(perms)


@dataclass
class BoundCheck:
    """Outcome of a probe-based K_N membership check"""
    inside: bool
    worst_margin: float
    worst_order: int
    ratios: Dict[int, float] = field(default_factory=dict)
    probe_based: bool = True

    def __iter__(self):
        yield self.inside
        yield self.worst_margin


def derivative_ratios(H: Hamiltonian, probes: Sequence[np.ndarray], iters: int = OPNORM_ITERS,
                      restarts: int = OPNORM_RESTARTS, seed: int = 0) -> Dict[int, float]:
    """Largest ||nabla^k H(x)||_op / N^{1-k/2} over probes, for k = 0..p"""
    N, p = H.N, H.p
    ratios = {k: 0.0 for k in range(p + 1)}
    if not np.any(H.coefficients):
        return ratios

    sym = symmetrize(H.coefficients) if p >= 3 else None
    if sym is not None:
        norm = math.factorial(p) * H.normalization * tensor_opnorm_estimate(
                sym, iters=iters, restarts=restarts, seed=seed)
        ratios[p] = norm / N ** (1.0 - p / 2.0)

    for index, x in enumerate(probes):
        x = np.asarray(x, dtype=np.float64)
        value, grad, hess = H.derivatives(x)
        ratios[0] = max(ratios[0], abs(value) / N)
        ratios[1] = max(ratios[1], float(np.linalg.norm(grad)) / np.sqrt(N))
        ratios[2] = max(ratios[2], float(np.max(np.abs(np.linalg.eigvalsh(hess)))))
        for k in range(3, p):
            reduced = _contract_except(sym, x, tuple(range(k)))
            scale = math.factorial(p) / math.factorial(p - k) * H.normalization
            norm = scale * tensor_opnorm_estimate(reduced, iters=iters, restarts=restarts,
                                                  seed=derive_seed(seed, index, k))
            ratios[k] = max(ratios[k], norm / N ** (1.0 - k / 2.0))
    return ratios


def in_K_N(H: Hamiltonian, C: float, probes: Sequence[np.ndarray], iters: int = OPNORM_ITERS,
           restarts: int = OPNORM_RESTARTS, seed: int = 0) -> BoundCheck:
    """Check ||nabla^k H(x)||_op < C N^{1-k/2} for k = 0..p at every probe"""
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    for x in probes:
        if np.linalg.norm(x) > np.sqrt(H.N) * (1.0 + 1e-8):
            raise ValueError("Probes must lie inside the ball of radius sqrt(N)")
    ratios = derivative_ratios(H, probes, iters=iters, restarts=restarts, seed=seed)
    margins = {k: 1.0 - ratio / C for k, ratio in ratios.items()}
    worst_order = min(margins, key=margins.get)
    worst = margins[worst_order]
    return BoundCheck(inside=worst > 0.0, worst_margin=worst, worst_order=worst_order, ratios=ratios)


def random_ball_probes(N: int, count: int, seed: int) -> List[np.ndarray]:
    """Uniform points in the ball of radius sqrt(N)"""
    rng = np.random.default_rng(seed)
    probes = []
    for _ in range(count):
        x = rng.standard_normal(N)
        radius = np.sqrt(N) * rng.uniform() ** (1.0 / N)
        probes.append(x * radius / np.linalg.norm(x))
    return probes


def calibrate_C(p: int, N: int = 60, samples: int = 200, n_probes: int = 10, seed: int = 0,
                factor: float = K_N_CALIBRATION_FACTOR) -> Dict[str, float]:
    """Measure factor x the largest derivative-norm ratio over random Hamiltonians"""
    worst = 0.0
    per_order = {k: 0.0 for k in range(p + 1)}
    for r in range(samples):
        H = sample_hamiltonian(N, p, derive_seed(seed, r))
        probes = random_ball_probes(N, n_probes, derive_seed(seed, r, 1))
        ratios = derivative_ratios(H, probes, seed=derive_seed(seed, r, 2))
        for k, ratio in ratios.items():
            per_order[k] = max(per_order[k], ratio)
        worst = max(worst, max(ratios.values()))
    logger.info(f"📊 K_N calibration p={p} N={N}: max ratio {worst:.3f}")
    return {"p": p, "N": N, "samples": samples, "max_ratio": worst, "C": factor * worst,
            **{f"ratio_k{k}": v for k, v in per_order.items()}}
