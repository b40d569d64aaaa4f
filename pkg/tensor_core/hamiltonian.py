import logging
from dataclasses import dataclass, field
from typing import Dict, Any, Optional, Sequence, Tuple

import numpy as np

from config import MEMORY_BUDGET_BYTES

logger = logging.getLogger(__name__)


class MemoryBudgetExceeded(ValueError):
    """Raised when a dense N^p tensor would not fit in the configured budget"""

    def __init__(self, required_bytes: int, budget_bytes: int):
        self.required_bytes = required_bytes
        self.budget_bytes = budget_bytes
        super().__init__(
            f"Disorder tensor needs {required_bytes} bytes, budget is {budget_bytes} bytes "
            f"(raise PSPIN_MEMORY_BUDGET_BYTES to override)"
        )


def derive_seed(base_seed: int, *keys: int) -> int:
    """Split a base seed into an independent child seed for replica/step keys"""
    sequence = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def required_bytes(N: int, p: int) -> int:
    return 8 * int(N) ** int(p)


@dataclass(frozen=True)
class DisorderTensor:
    """Raw Gaussian coefficients g_{i1..ip} with their provenance"""
    p: int
    N: int
    entries: np.ndarray
    seed: Optional[int] = None
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.size != self.N ** self.p:
            raise ValueError(f"entries must have N^p = {self.N ** self.p} values, got {entries.size}")
        entries = entries.reshape((self.N,) * self.p)
        if entries.flags.writeable:
            entries = entries.copy()
            entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.entries.shape

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries.ravel()))


def sample_disorder(N: int, p: int, seed: int, budget_bytes: int = None) -> DisorderTensor:
    """Sample N^p i.i.d. standard normal coefficients from a PCG64 stream"""
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    budget = MEMORY_BUDGET_BYTES if budget_bytes is None else budget_bytes
    needed = required_bytes(N, p)
    if needed > budget:
        logger.error(f"❌ Refusing N={N}, p={p} disorder tensor: {needed} bytes over budget {budget}")
        raise MemoryBudgetExceeded(needed, budget)

    rng = np.random.default_rng(seed)
    entries = rng.standard_normal((N,) * p)
    logger.debug(f"Sampled N={N}, p={p} disorder tensor from seed {seed}")
    return DisorderTensor(p=p, N=N, entries=entries, seed=int(seed),
                          provenance={"kind": "sampled", "generator": "PCG64", "seed": int(seed)})


def zero_disorder(N: int, p: int) -> DisorderTensor:
    return DisorderTensor(p=p, N=N, entries=np.zeros((N,) * p), seed=None,
                          provenance={"kind": "zero"})


def _contract_except(entries: np.ndarray, sigma: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Contract every slot not in keep with sigma, one mode at a time"""
    result = entries
    for axis in reversed(range(entries.ndim)):
        if axis in keep:
            continue
        result = np.tensordot(result, sigma, axes=([axis], [0]))
    return result


class Hamiltonian:
    """Pure p-spin Hamiltonian H(s) = N^{-(p-1)/2} <G, s^{(x)p}>"""

    def __init__(self, tensor: DisorderTensor):
        self.tensor = tensor

    @property
    def N(self) -> int:
        return self.tensor.N

    @property
    def p(self) -> int:
        return self.tensor.p

    @property
    def normalization(self) -> float:
        return float(self.N) ** (-(self.p - 1) / 2.0)

    @property
    def coefficients(self) -> np.ndarray:
        return self.tensor.entries

    def __repr__(self) -> str:
        return f"Hamiltonian(N={self.N}, p={self.p}, seed={self.tensor.seed})"

    def _check(self, sigma) -> np.ndarray:
        sigma = np.asarray(getattr(sigma, "coords", sigma), dtype=np.float64)
        if sigma.shape != (self.N,):
            raise ValueError(f"Dimension mismatch: expected vector of length {self.N}, got shape {sigma.shape}")
        return sigma

    def evaluate(self, sigma) -> float:
        """Energy at sigma (any norm)"""
        sigma = self._check(sigma)
        return float(_contract_except(self.coefficients, sigma, ()) * self.normalization)

    def gradient(self, sigma) -> np.ndarray:
        """Euclidean gradient, summing the contraction over each index slot"""
        sigma = self._check(sigma)
        grad = np.zeros(self.N)
        for slot in range(self.p):
            grad += _contract_except(self.coefficients, sigma, (slot,))
        return grad * self.normalization

    def hessian(self, sigma) -> np.ndarray:
        """Euclidean Hessian, summing pair contractions M + M^T over slot pairs"""
        sigma = self._check(sigma)
        hess = np.zeros((self.N, self.N))
        for s in range(self.p):
            for t in range(s + 1, self.p):
                pair = _contract_except(self.coefficients, sigma, (s, t))
                hess += pair + pair.T
        return hess * self.normalization

    def derivatives(self, sigma) -> Tuple[float, np.ndarray, np.ndarray]:
        """Value, gradient and Hessian from a single Hessian pass.

        Uses homogeneity: hess @ s = (p-1) grad and <s, grad> = p H.
        """
        sigma = self._check(sigma)
        hess = self.hessian(sigma)
        grad = hess @ sigma / (self.p - 1)
        value = float(sigma @ grad) / self.p
        return value, grad, hess

    def scaled(self, factor: float) -> "Hamiltonian":
        return combine([factor], [self])


def combine(weights: Sequence[float], hams: Sequence[Hamiltonian], seed: Optional[int] = None,
            provenance: Optional[Dict[str, Any]] = None) -> Hamiltonian:
    """Coefficientwise linear combination sum_i w_i H_i"""
    if not hams:
        raise ValueError("combine needs at least one Hamiltonian")
    N, p = hams[0].N, hams[0].p
    entries = np.zeros((N,) * p)
    for weight, ham in zip(weights, hams):
        if (ham.N, ham.p) != (N, p):
            raise ValueError(f"Shape mismatch: ({ham.N},{ham.p}) vs ({N},{p})")
        if weight != 0.0:
            entries += weight * ham.coefficients
    info = {"kind": "combination", "weights": [float(w) for w in weights]}
    if provenance:
        info.update(provenance)
    return Hamiltonian(DisorderTensor(p=p, N=N, entries=entries, seed=seed, provenance=info))


def sample_hamiltonian(N: int, p: int, seed: int) -> Hamiltonian:
    return Hamiltonian(sample_disorder(N, p, seed))


@dataclass(frozen=True)
class CorrelationParam:
    q: float

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"Correlation q must lie in [0, 1], got {self.q}")


def correlated_copy(H: Hamiltonian, q, seed: int) -> Hamiltonian:
    """q H + sqrt(1-q^2) H' with H' fresh"""
    q = float(CorrelationParam(float(getattr(q, "q", q))).q)
    fresh = sample_hamiltonian(H.N, H.p, seed)
    return combine([q, np.sqrt(1.0 - q * q)], [H, fresh], seed=seed,
                   provenance={"kind": "correlated_copy", "q": float(q),
                               "parent_seed": H.tensor.seed, "fresh_seed": int(seed)})


def coeff_distance(H: Hamiltonian, H_other: Hamiltonian) -> float:
    """Un-normalized Euclidean distance between coefficient tensors"""
    if (H.N, H.p) != (H_other.N, H_other.p):
        raise ValueError(f"Shape mismatch: ({H.N},{H.p}) vs ({H_other.N},{H_other.p})")
    return float(np.linalg.norm((H.coefficients - H_other.coefficients).ravel()))


def random_sphere_point(N: int, seed: int) -> np.ndarray:
    """Uniform point on the sphere of radius sqrt(N), as raw coordinates"""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(N)
    return x * np.sqrt(N) / np.linalg.norm(x)
