import logging
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Any

import numpy as np
import scipy.linalg

from config import BAND_TOLERANCE, LENIENCY_RANGE, WELL_OUTLIER_COUNT, bulk_edge
from sphere_geometry.sphere_calculus import (
    SpherePoint, SphericalDerivatives, as_sphere_point, spherical_derivatives,
)
from tensor_core.hamiltonian import Hamiltonian

logger = logging.getLogger(__name__)


class WellPreconditionError(ValueError):
    """The point does not satisfy the (gamma, delta)-well conditions"""


@dataclass(frozen=True)
class WellParams:
    gamma: float
    delta: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")


@dataclass(frozen=True)
class WellType:
    """d near-zero eigenvalues and no eigenvalue magnitude in [a, b]"""
    d: int
    a: float
    b: float

    def __post_init__(self):
        if self.d < 0:
            raise ValueError(f"d must be nonnegative, got {self.d}")
        if not 0 < self.a < self.b:
            raise ValueError(f"Need 0 < a < b, got [{self.a}, {self.b}]")

    @classmethod
    def from_iota(cls, d: int, iota: float) -> "WellType":
        return cls(d=d, a=iota, b=3.0 * iota)

    @property
    def iota(self) -> Optional[float]:
        return self.a if np.isclose(self.b, 3.0 * self.a, rtol=1e-12, atol=0.0) else None


@dataclass(frozen=True)
class Subspace:
    """Orthonormal columns spanning a subspace of base^perp"""
    base: SpherePoint
    basis: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=np.float64).reshape(self.base.N, -1)
        d = basis.shape[1]
        if d:
            if np.max(np.abs(basis.T @ basis - np.eye(d))) > 1e-10:
                raise ValueError("Subspace basis is not orthonormal")
            if np.max(np.abs(basis.T @ self.base.coords)) > 1e-10 * np.sqrt(self.base.N):
                raise ValueError("Subspace basis is not orthogonal to its base point")
        object.__setattr__(self, "basis", basis)

    @property
    def d(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T


@dataclass
class HessianSpectrum:
    """Riemannian Hessian eigenpairs at a point, largest first, vectors in ambient coordinates"""
    eigenvalues: np.ndarray
    vectors: np.ndarray
    derivs: SphericalDerivatives


@dataclass
class WellReport:
    grad_norm: float
    radial: float
    is_well: bool
    eigenvalues: List[float] = field(default_factory=list)
    classification: Optional[Dict[str, float]] = None
    margins: Dict[str, float] = field(default_factory=dict)
    energy_per_n: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def hessian_spectrum(H: Hamiltonian, sigma: SpherePoint,
                     derivs: Optional[SphericalDerivatives] = None) -> HessianSpectrum:
    sigma = as_sphere_point(sigma)
    derivs = spherical_derivatives(H, sigma) if derivs is None else derivs
    values, vecs = scipy.linalg.eigh(derivs.riemannian)
    order = np.argsort(values)[::-1]
    return HessianSpectrum(eigenvalues=values[order], vectors=derivs.frame.columns @ vecs[:, order],
                           derivs=derivs)


def band_mask(eigenvalues: np.ndarray, iota: float, tol: float = BAND_TOLERANCE) -> np.ndarray:
    """Eigenvalues in [-iota, iota], ties resolved toward membership"""
    return np.abs(eigenvalues) <= iota + tol


def eigenspace_in_band(matrix: np.ndarray, iota: float):
    """Orthonormal eigenvectors of a symmetric matrix with eigenvalues in [-iota, iota]"""
    values, vecs = scipy.linalg.eigh(matrix)
    mask = band_mask(values, iota)
    return vecs[:, mask], values[mask]


def near_zero_eigenspace(H: Hamiltonian, sigma: SpherePoint, iota: float,
                         spectrum: Optional[HessianSpectrum] = None) -> Subspace:
    """U_iota(sigma; H) in ambient coordinates"""
    if iota <= 0:
        raise ValueError(f"iota must be positive, got {iota}")
    sigma = as_sphere_point(sigma)
    spectrum = hessian_spectrum(H, sigma) if spectrum is None else spectrum
    mask = band_mask(spectrum.eigenvalues, iota)
    return Subspace(base=sigma, basis=spectrum.vectors[:, mask])


def well_conditions(grad_norm: float, radial: float, N: int, p: int, gamma: float, delta: float) -> Dict[str, float]:
    """Slack of the two well conditions; both positive means a (gamma, delta)-well"""
    return {
        "gradient": delta * np.sqrt(N) - grad_norm,
        "radial": radial - bulk_edge(p) - gamma,
    }


def well_report(H: Hamiltonian, sigma: SpherePoint, gamma: float, delta: float,
                with_spectrum: bool = True, k: Optional[int] = None) -> WellReport:
    """Gradient norm, radial derivative and (optionally) spectrum and well type at sigma"""
    WellParams(gamma, delta)
    sigma = as_sphere_point(sigma)
    derivs = spherical_derivatives(H, sigma)
    margins = well_conditions(derivs.grad_norm, derivs.radial, H.N, H.p, gamma, delta)
    is_well = bool(margins["gradient"] > 0 and margins["radial"] > 0)
    report = WellReport(grad_norm=derivs.grad_norm, radial=derivs.radial, is_well=is_well,
                        margins={k_: float(v) for k_, v in margins.items()},
                        energy_per_n=derivs.energy / H.N)
    if with_spectrum or k is not None:
        spectrum = hessian_spectrum(H, sigma, derivs)
        report.eigenvalues = [float(v) for v in spectrum.eigenvalues]
        if k is not None and is_well:
            wt = classify_spectrum(spectrum.eigenvalues, gamma, k)
            if wt is not None:
                report.classification = {"d": wt.d, "iota": wt.a}
    return report


def well_type_ladder(gamma: float, k: int) -> List[float]:
    """iota_i = 10^{i-k-5} gamma for i = 0..k+3"""
    return [10.0 ** (i - k - 5) * gamma for i in range(k + 4)]


def classify_spectrum(eigenvalues: np.ndarray, gamma: float, k: int = WELL_OUTLIER_COUNT,
                      tol: float = BAND_TOLERANCE) -> Optional[WellType]:
    """First ladder rung whose band [iota_i, iota_{i+1}) holds no eigenvalue magnitude"""
    mags = np.abs(np.asarray(eigenvalues, dtype=np.float64))
    for iota in well_type_ladder(gamma, k):
        upper = 10.0 * iota
        occupied = np.any((mags > iota + tol) & (mags < upper))
        if not occupied:
            d = int(np.sum(mags <= iota + tol))
            if d > k:
                logger.warning(f"⚠️ Well type has d={d} > k={k}")
            return WellType.from_iota(d, iota)
    logger.warning(f"⚠️ No free rung on the well-type ladder (gamma={gamma}, k={k})")
    return None


def classify_well(H: Hamiltonian, sigma: SpherePoint, gamma: float, k: int = WELL_OUTLIER_COUNT,
                  delta: Optional[float] = None) -> Optional[WellType]:
    """Classify a (gamma, delta)-well by the ladder; refuses points that are not wells"""
    sigma = as_sphere_point(sigma)
    spectrum = hessian_spectrum(H, sigma)
    derivs = spectrum.derivs
    margins = well_conditions(derivs.grad_norm, derivs.radial, H.N, H.p, gamma,
                              np.inf if delta is None else delta)
    if margins["radial"] <= 0 or margins["gradient"] <= 0:
        raise WellPreconditionError(
            f"Point is not a well: radial margin {margins['radial']:.4g}, gradient margin {margins['gradient']:.4g}"
        )
    return classify_spectrum(spectrum.eigenvalues, gamma, k)


def typed_spectrum_ok(eigenvalues: np.ndarray, wt: WellType, tol: float = BAND_TOLERANCE) -> bool:
    """dim U_a = d and no eigenvalue magnitude in [a, b]"""
    mags = np.abs(np.asarray(eigenvalues, dtype=np.float64))
    inside = mags <= wt.a + tol
    forbidden = (~inside) & (mags <= wt.b + tol)
    return bool(int(np.sum(inside)) == wt.d and not np.any(forbidden))


def in_typed_well(H: Hamiltonian, sigma: SpherePoint, gamma: float, delta: float, wt: WellType,
                  spectrum: Optional[HessianSpectrum] = None) -> bool:
    """Membership in W(gamma, delta, d, [a, b])"""
    sigma = as_sphere_point(sigma)
    spectrum = hessian_spectrum(H, sigma) if spectrum is None else spectrum
    derivs = spectrum.derivs
    margins = well_conditions(derivs.grad_norm, derivs.radial, H.N, H.p, gamma, delta)
    if margins["gradient"] <= 0 or margins["radial"] <= 0:
        return False
    return typed_spectrum_ok(spectrum.eigenvalues, wt)


def lenient_parameters(gamma: float, delta: float, d: int, iota: float, tau: float):
    """(gamma/tau, delta^{1/tau}, WellType(d, [tau iota, 3 iota/tau]))"""
    low, high = LENIENCY_RANGE
    if not low <= tau <= high:
        raise ValueError(f"tau must lie in [{low}, {high}], got {tau}")
    return gamma / tau, delta ** (1.0 / tau), WellType(d=d, a=tau * iota, b=3.0 * iota / tau)


def in_lenient_well(H: Hamiltonian, sigma: SpherePoint, gamma: float, delta: float, d: int, iota: float,
                    tau: float, spectrum: Optional[HessianSpectrum] = None) -> bool:
    """Membership in W^tau = W(gamma/tau, delta^{1/tau}, d, [tau iota, 3 iota/tau])"""
    gamma_tau, delta_tau, wt = lenient_parameters(gamma, delta, d, iota, tau)
    return in_typed_well(H, sigma, gamma_tau, delta_tau, wt, spectrum=spectrum)
