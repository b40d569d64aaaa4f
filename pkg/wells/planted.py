from dataclasses import dataclass

import numpy as np

from sphere_geometry.sphere_calculus import SpherePoint, as_sphere_point
from tensor_core.hamiltonian import Hamiltonian, DisorderTensor, zero_disorder


def spike_coefficients(w: SpherePoint, mu: float, p: int) -> np.ndarray:
    """Coefficients S with N^{-(p-1)/2} <S, s^p> = mu N (<s, w>/N)^p"""
    w = as_sphere_point(w)
    N = w.N
    spike = w.coords
    for _ in range(p - 1):
        spike = np.multiply.outer(spike, w.coords)
    return mu * N ** ((1.0 - p) / 2.0) * spike


def plant_well(H: Hamiltonian, w: SpherePoint, mu: float) -> Hamiltonian:
    """H'(s) = H(s) + mu N (<s, w>/N)^p, still a pure p-spin polynomial"""
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    w = as_sphere_point(w)
    if w.N != H.N:
        raise ValueError(f"Dimension mismatch: spike has N={w.N}, Hamiltonian has N={H.N}")
    if mu == 0:
        return H
    entries = H.coefficients + spike_coefficients(w, mu, H.p)
    provenance = dict(H.tensor.provenance)
    provenance.update({"planted_mu": float(mu), "parent_seed": H.tensor.seed})
    return Hamiltonian(DisorderTensor(p=H.p, N=H.N, entries=entries, seed=H.tensor.seed,
                                      provenance=provenance))


def spike_landscape(w: SpherePoint, mu: float, p: int) -> Hamiltonian:
    """Noise-free planted Hamiltonian, maximized exactly at w"""
    w = as_sphere_point(w)
    return plant_well(Hamiltonian(zero_disorder(w.N, p)), w, mu)


@dataclass(frozen=True)
class PlantedSpike:
    """A deterministic spike added to every Hamiltonian of a tracking chain"""
    w: SpherePoint
    mu: float

    def apply(self, H: Hamiltonian) -> Hamiltonian:
        return plant_well(H, self.w, self.mu)
