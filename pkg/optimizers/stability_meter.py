import logging
from typing import Sequence, Tuple

import numpy as np
import pandas as pd

from optimizers.ascent import AlgorithmHandle
from tensor_core.hamiltonian import CorrelationParam, correlated_copy, derive_seed, sample_hamiltonian

logger = logging.getLogger(__name__)


def _correlated_outputs(A: AlgorithmHandle, q: float, N: int, p: int, seed: int, rep: int,
                        couple_aux: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    H = sample_hamiltonian(N, p, derive_seed(seed, rep, 0))
    H_q = correlated_copy(H, q, derive_seed(seed, rep, 1))
    aux = derive_seed(seed, rep, 2)
    aux_other = aux if couple_aux else derive_seed(seed, rep, 3)
    return A(H, aux), A(H_q, aux_other)


def estimate_stability(A: AlgorithmHandle, epsilon: float, reps: int, N: int, p: int, seed: int = 0,
                       couple_aux: bool = True) -> Tuple[float, float]:
    """Monte Carlo mean and standard error of ||A(H) - A(H_{1-eps})||^2 / (N eps)"""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if reps < 2:
        raise ValueError(f"reps must be >= 2, got {reps}")

    values = np.empty(reps)
    for rep in range(reps):
        x, y = _correlated_outputs(A, 1.0 - epsilon, N, p, seed, rep, couple_aux)
        values[rep] = float(np.sum((x - y) ** 2)) / (N * epsilon)

    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / np.sqrt(reps))
    logger.info(f"📊 Stability of {A.name} at eps={epsilon}: S_hat={mean:.4f} +- {stderr:.4f}")
    return mean, stderr


def stability_sweep(A: AlgorithmHandle, epsilons: Sequence[float], reps: int, N: int, p: int,
                    seed: int = 0, couple_aux: bool = True) -> pd.DataFrame:
    rows = []
    for eps in epsilons:
        mean, stderr = estimate_stability(A, eps, reps, N, p, seed=seed, couple_aux=couple_aux)
        rows.append({"algorithm": A.name, "epsilon": eps, "S_hat": mean, "stderr": stderr, "reps": reps})
    return pd.DataFrame(rows)


def measure_overlap(A: AlgorithmHandle, q_grid: Sequence[float], reps: int, N: int, p: int,
                    seed: int = 0) -> pd.DataFrame:
    """Statistics of <A(H), A(H_q)>/N over correlated pairs, one row per q"""
    for q in q_grid:
        CorrelationParam(q)
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")

    rows = []
    for q in q_grid:
        overlaps = np.empty(reps)
        for rep in range(reps):
            x, y = _correlated_outputs(A, q, N, p, seed, rep)
            overlaps[rep] = float(x @ y) / N
        rows.append({
            "algorithm": A.name,
            "q": float(q),
            "mean": float(np.mean(overlaps)),
            "variance": float(np.var(overlaps, ddof=1)) if reps > 1 else 0.0,
            "reps": reps,
        })
    return pd.DataFrame(rows)
