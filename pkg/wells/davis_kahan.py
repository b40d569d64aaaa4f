import logging
from typing import Dict, Any, Tuple

import numpy as np
import scipy.linalg

from config import BAND_TOLERANCE, TRANSPORT_BAND_FACTOR, DAVIS_KAHAN_GAP_FACTOR

logger = logging.getLogger(__name__)


class TrackingFailure(RuntimeError):
    """The perturbed spectrum violates the separation needed to track the near-zero space"""

    def __init__(self, message: str, eigenvalues):
        self.message = message
        self.eigenvalues = [float(v) for v in eigenvalues]
        super().__init__(f"{message}: {self.eigenvalues}")


def subspace_distance(A: np.ndarray, B: np.ndarray) -> float:
    """||P_A - P_B||_op for orthonormal column bases (sine of the largest principal angle)"""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        return 1.0
    if A.shape[1] == 0:
        return 0.0
    angles = scipy.linalg.subspace_angles(A, B)
    return float(np.sin(np.max(angles)))


def spectral_gap_violations(eigenvalues: np.ndarray, inner: float, outer: float,
                            tol: float = BAND_TOLERANCE) -> np.ndarray:
    """Eigenvalues whose magnitude falls in the forbidden band [inner, outer]"""
    mags = np.abs(eigenvalues)
    return eigenvalues[(mags > inner + tol) & (mags <= outer + tol)]


def tracked_band_mask(eigenvalues: np.ndarray, iota: float, d: int) -> np.ndarray:
    """Mask of the d eigenvalues in [-1.1 iota, 1.1 iota], with +-(1.1 iota, 2.9 iota] empty"""
    band = TRANSPORT_BAND_FACTOR * iota
    bad = spectral_gap_violations(eigenvalues, band, DAVIS_KAHAN_GAP_FACTOR * iota)
    if bad.size:
        raise TrackingFailure("Eigenvalues in the forbidden band +-[1.1 iota, 2.9 iota]", bad)
    inside = np.abs(eigenvalues) <= band + BAND_TOLERANCE
    if int(np.sum(inside)) != d:
        raise TrackingFailure(f"Expected {d} eigenvalues in [-1.1 iota, 1.1 iota]", eigenvalues[inside])
    return inside


def davis_kahan_track(A: np.ndarray, A_new: np.ndarray, iota: float, d: int) -> Tuple[np.ndarray, Dict[str, Any]]:
    """Follow the near-zero eigenspace of A to A_new.

    Returns the A_new-eigenvectors with eigenvalues in [-1.1 iota, 1.1 iota]
    and diagnostics comparing the projector change to ||A - A_new||_op.
    """
    A = np.asarray(A, dtype=np.float64)
    A_new = np.asarray(A_new, dtype=np.float64)
    if A.shape != A_new.shape:
        raise ValueError(f"Shape mismatch: {A.shape} vs {A_new.shape}")

    values, vecs = scipy.linalg.eigh(A)
    inside = np.abs(values) <= iota + BAND_TOLERANCE
    bad = spectral_gap_violations(values, iota, 3.0 * iota)
    if int(np.sum(inside)) != d or bad.size:
        raise ValueError(f"A must have exactly {d} eigenvalues in [-iota, iota] and none in +-(iota, 3 iota]; "
                         f"got {int(np.sum(inside))} inside and {bad.tolist()} in the band")
    basis = vecs[:, inside]

    new_values, new_vecs = scipy.linalg.eigh(A_new)
    new_inside = tracked_band_mask(new_values, iota, d)
    new_basis = new_vecs[:, new_inside]
    projector_change = subspace_distance(basis, new_basis)
    perturbation = float(np.linalg.norm(A - A_new, 2))
    diagnostics = {
        "separated": True,
        "d": d,
        "projector_change": projector_change,
        "perturbation_norm": perturbation,
        "ratio": projector_change / perturbation if perturbation > 0 else 0.0,
        "eigenvalues": new_values[::-1].tolist(),
    }
    return new_basis, diagnostics
