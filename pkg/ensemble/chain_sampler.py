import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from tensor_core.hamiltonian import Hamiltonian, combine, derive_seed, sample_hamiltonian

logger = logging.getLogger(__name__)

MIN_COVARIANCE_SAMPLES = 30


def _check_epsilon(epsilon: float):
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")


def _one_minus_power(rho: float, exponent: float) -> float:
    """1 - rho^exponent, accurate for rho close to 1"""
    if rho == 0.0:
        return 1.0 if exponent > 0 else 0.0
    return float(-np.expm1(exponent * np.log(rho)))


@dataclass
class HamiltonianChain:
    """H^(0..K), pairwise (1-eps)^{|i-j|}-correlated, with the seeds that rebuild it"""
    hams: List[Hamiltonian]
    epsilon: float
    seeds: List[Optional[int]] = field(default_factory=list)
    mode: str = "forward"

    def __post_init__(self):
        _check_epsilon(self.epsilon)
        if len(self.hams) < 2:
            raise ValueError(f"A chain needs K >= 1, got {len(self.hams) - 1}")
        shape = (self.hams[0].N, self.hams[0].p)
        for ham in self.hams[1:]:
            if (ham.N, ham.p) != shape:
                raise ValueError(f"Chain elements disagree on (N, p): {(ham.N, ham.p)} vs {shape}")

    @property
    def K(self) -> int:
        return len(self.hams) - 1

    @property
    def N(self) -> int:
        return self.hams[0].N

    @property
    def p(self) -> int:
        return self.hams[0].p

    @property
    def rho(self) -> float:
        return 1.0 - self.epsilon

    def __len__(self) -> int:
        return len(self.hams)

    def __getitem__(self, index: int) -> Hamiltonian:
        return self.hams[index]

    def manifest(self) -> Dict[str, Any]:
        return {"N": self.N, "p": self.p, "K": self.K, "epsilon": self.epsilon,
                "mode": self.mode, "seeds": list(self.seeds)}

    def save_manifest(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.manifest(), handle, indent=2)
        return path

    @classmethod
    def from_manifest(cls, manifest: Union[Dict[str, Any], str, Path]) -> "HamiltonianChain":
        if not isinstance(manifest, dict):
            with open(manifest, "r", encoding="utf-8") as handle:
                manifest = json.load(handle)
        hams = list(iter_chain(manifest))
        return cls(hams=hams, epsilon=manifest["epsilon"], seeds=list(manifest["seeds"]), mode=manifest["mode"])


@dataclass(frozen=True)
class BridgeCoefficients:
    """E[H^(k) | H^(k-1), H^(K)] = mean_prev H^(k-1) + mean_end H^(K); noise a(K,k)"""
    k: int
    K: int
    mean_prev: float
    mean_end: float
    noise_scale: float

    def __post_init__(self):
        if not 0.0 <= self.noise_scale <= 1.0 + 1e-12:
            raise ValueError(f"Bridge noise scale must lie in [0, 1], got {self.noise_scale}")


def chain_seeds(seed: int, K: int) -> List[int]:
    return [derive_seed(seed, i) for i in range(K + 1)]


def ou_chain(N: int, p: int, K: int, epsilon: float, seed: int) -> HamiltonianChain:
    """Forward recursion H^(i+1) = (1-eps) H^(i) + sqrt(1-(1-eps)^2) G^(i)"""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    _check_epsilon(epsilon)
    seeds = chain_seeds(seed, K)
    manifest = {"N": N, "p": p, "K": K, "epsilon": epsilon, "mode": "forward", "seeds": seeds}
    return HamiltonianChain(hams=list(iter_chain(manifest)), epsilon=epsilon, seeds=seeds, mode="forward")


def _forward_step(H: Hamiltonian, epsilon: float, seed: int) -> Hamiltonian:
    rho = 1.0 - epsilon
    if rho == 1.0:
        return H
    fresh = sample_hamiltonian(H.N, H.p, seed)
    return combine([rho, np.sqrt(_one_minus_power(rho, 2.0))], [H, fresh], seed=seed,
                   provenance={"kind": "ou_step", "epsilon": epsilon})


def iter_chain(manifest: Dict[str, Any]) -> Iterator[Hamiltonian]:
    """Regenerate chain elements in order from a manifest, holding at most two in memory"""
    N, p, K, epsilon = manifest["N"], manifest["p"], manifest["K"], manifest["epsilon"]
    seeds = manifest["seeds"]
    if manifest["mode"] == "forward":
        current = sample_hamiltonian(N, p, seeds[0])
        yield current
        for i in range(K):
            current = _forward_step(current, epsilon, seeds[i + 1])
            yield current
    elif manifest["mode"] == "bridge":
        if any(s is None for s in seeds):
            raise ValueError("Bridge chain manifest lacks seeds for some elements")
        H0 = sample_hamiltonian(N, p, seeds[0])
        H = sample_hamiltonian(N, p, seeds[1])
        end = endpoint_embed(H0, H, K, epsilon)
        current = H0
        yield current
        for k in range(1, K):
            current = bridge_fill(current, end, k, K, epsilon, sample_hamiltonian(N, p, seeds[k + 1]))
            yield current
        yield end
    else:
        raise ValueError(f"Unknown chain mode '{manifest['mode']}'")


def endpoint_embed(H0: Hamiltonian, H: Hamiltonian, K: int, epsilon: float) -> Hamiltonian:
    """H^(K) = (1-eps)^K H0 + sqrt(1-(1-eps)^{2K}) H"""
    _check_epsilon(epsilon)
    if (H0.N, H0.p) != (H.N, H.p):
        raise ValueError(f"Shape mismatch: ({H0.N},{H0.p}) vs ({H.N},{H.p})")
    rho = 1.0 - epsilon
    return combine([rho ** K, np.sqrt(_one_minus_power(rho, 2.0 * K))], [H0, H], seed=H.tensor.seed,
                   provenance={"kind": "endpoint", "K": K, "epsilon": epsilon})


def bridge_coeffs(k: int, K: int, epsilon: float) -> BridgeCoefficients:
    """AR(1) conditional law of index k given indices k-1 and K"""
    if not 1 <= k <= K - 1:
        raise ValueError(f"Bridge index k must satisfy 1 <= k <= K-1, got k={k}, K={K}")
    _check_epsilon(epsilon)
    rho = 1.0 - epsilon
    m = K - k
    if rho == 1.0:
        # constant chain: the limits of the closed forms
        return BridgeCoefficients(k=k, K=K, mean_prev=m / (m + 1.0), mean_end=1.0 / (m + 1.0), noise_scale=0.0)
    denom = _one_minus_power(rho, 2.0 * (m + 1))
    mean_prev = rho * _one_minus_power(rho, 2.0 * m) / denom
    mean_end = rho ** m * _one_minus_power(rho, 2.0) / denom
    variance = _one_minus_power(rho, 2.0) * _one_minus_power(rho, 2.0 * m) / denom
    return BridgeCoefficients(k=k, K=K, mean_prev=mean_prev, mean_end=mean_end,
                              noise_scale=float(np.sqrt(max(variance, 0.0))))


def bridge_fill(H_prev: Hamiltonian, H_end: Hamiltonian, k: int, K: int, epsilon: float,
                G_fresh: Hamiltonian) -> Hamiltonian:
    coeffs = bridge_coeffs(k, K, epsilon)
    return combine([coeffs.mean_prev, coeffs.mean_end, coeffs.noise_scale], [H_prev, H_end, G_fresh],
                   seed=G_fresh.tensor.seed, provenance={"kind": "bridge", "k": k, "K": K, "epsilon": epsilon})


def bridge_chain(H0: Hamiltonian, H: Hamiltonian, K: int, epsilon: float,
                 fresh: Sequence[Hamiltonian]) -> HamiltonianChain:
    """H^(0) = H0, H^(K) = endpoint_embed(H0, H), interior filled left to right"""
    if len(fresh) != K - 1:
        raise ValueError(f"Need K-1 = {K - 1} fresh Hamiltonians, got {len(fresh)}")
    end = endpoint_embed(H0, H, K, epsilon)
    hams = [H0]
    for k in range(1, K):
        hams.append(bridge_fill(hams[-1], end, k, K, epsilon, fresh[k - 1]))
    hams.append(end)
    seeds = [H0.tensor.seed, H.tensor.seed] + [g.tensor.seed for g in fresh]
    return HamiltonianChain(hams=hams, epsilon=epsilon, seeds=seeds, mode="bridge")


def sample_bridge_chain(N: int, p: int, K: int, epsilon: float, seed: int) -> HamiltonianChain:
    seeds = chain_seeds(seed, K)
    H0 = sample_hamiltonian(N, p, seeds[0])
    H = sample_hamiltonian(N, p, seeds[1])
    fresh = [sample_hamiltonian(N, p, s) for s in seeds[2:]]
    return bridge_chain(H0, H, K, epsilon, fresh)


def conditioning_oracle(k: int, K: int, epsilon: float) -> BridgeCoefficients:
    """Bridge coefficients by dense Gaussian conditioning on the rho^{|i-j|} covariance"""
    if not 1 <= k <= K - 1:
        raise ValueError(f"Bridge index k must satisfy 1 <= k <= K-1, got k={k}, K={K}")
    _check_epsilon(epsilon)
    rho = 1.0 - epsilon
    idx = np.arange(K + 1)
    cov = rho ** np.abs(idx[:, None] - idx[None, :])
    given = [k - 1, K]
    cross = cov[k, given]
    if rho == 1.0:
        weights = np.array([(K - k) / (K - k + 1.0), 1.0 / (K - k + 1.0)])
    else:
        weights = scipy.linalg.solve(cov[np.ix_(given, given)], cross, assume_a="pos")
    variance = cov[k, k] - float(weights @ cross)
    return BridgeCoefficients(k=k, K=K, mean_prev=float(weights[0]), mean_end=float(weights[1]),
                              noise_scale=float(np.sqrt(max(variance, 0.0))))


def bridge_oracle_error(K: int, epsilon: float) -> float:
    """Largest gap between bridge_coeffs and conditioning_oracle over k = 1..K-1"""
    worst = 0.0
    for k in range(1, K):
        closed, dense = bridge_coeffs(k, K, epsilon), conditioning_oracle(k, K, epsilon)
        worst = max(worst, abs(closed.mean_prev - dense.mean_prev), abs(closed.mean_end - dense.mean_end),
                    abs(closed.noise_scale - dense.noise_scale))
    return worst


def markov_defect(correlation: np.ndarray) -> float:
    """max over i<m<j of |c_ij - c_im c_mj|"""
    c = np.asarray(correlation, dtype=np.float64)
    n = c.shape[0]
    worst = 0.0
    for i in range(n):
        for m in range(i + 1, n):
            for j in range(m + 1, n):
                worst = max(worst, abs(c[i, j] - c[i, m] * c[m, j]))
    return float(worst)


@dataclass
class ChainCovarianceCheck:
    max_abs_error: float
    max_z: float
    passed: bool
    samples: int
    empirical: np.ndarray
    target: np.ndarray


def verify_chain_covariance(chains: Union[HamiltonianChain, Sequence[HamiltonianChain]],
                            z_threshold: float = 4.0) -> ChainCovarianceCheck:
    """Entrywise test of the coefficient covariance against rho^{|i-j|}.

    Every coefficient of every replica is one draw of the (K+1)-dimensional
    Gaussian; the standard error of entry (i, j) is sqrt((1 + r_ij^2)/n).
    """
    if isinstance(chains, HamiltonianChain):
        chains = [chains]
    if not chains:
        raise ValueError("No chains to verify")
    K, epsilon = chains[0].K, chains[0].epsilon
    for chain in chains:
        if chain.K != K or chain.epsilon != epsilon:
            raise ValueError("All replicas must share K and epsilon")

    X = np.concatenate([np.stack([h.coefficients.ravel() for h in chain.hams]) for chain in chains], axis=1)
    n = X.shape[1]
    if n < MIN_COVARIANCE_SAMPLES:
        raise ValueError(f"Need at least {MIN_COVARIANCE_SAMPLES} samples, got {n}")

    rho = 1.0 - epsilon
    idx = np.arange(K + 1)
    target = rho ** np.abs(idx[:, None] - idx[None, :])
    empirical = X @ X.T / n
    stderr = np.sqrt((1.0 + target ** 2) / n)
    z = np.abs(empirical - target) / stderr
    check = ChainCovarianceCheck(max_abs_error=float(np.max(np.abs(empirical - target))), max_z=float(np.max(z)),
                                 passed=bool(np.all(z <= z_threshold)), samples=n,
                                 empirical=empirical, target=target)
    if check.passed:
        logger.info(f"✅ Chain covariance within {z_threshold} sigma (max z={check.max_z:.2f}, n={n})")
    else:
        logger.warning(f"⚠️ Chain covariance off by {check.max_z:.2f} sigma (n={n})")
    return check
