import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np

from sphere_geometry.sphere_calculus import SpherePoint, as_sphere_point, tangent_project
from tensor_core.hamiltonian import DisorderTensor, Hamiltonian

logger = logging.getLogger(__name__)

DirectionSampler = Callable[[np.random.Generator], np.ndarray]


def random_directions(N: int, p: int) -> DirectionSampler:
    """i.i.d. Gaussian coefficient directions, unit Frobenius norm"""

    def sample(rng: np.random.Generator) -> np.ndarray:
        D = rng.standard_normal((N,) * p)
        return D / np.linalg.norm(D.ravel())

    return sample


def aligned_directions(sigma: SpherePoint, p: int) -> DirectionSampler:
    """Rank-one directions v (x) s^(p-1) with s = sigma/sqrt(N) and v a random unit tangent vector"""
    sigma = as_sphere_point(sigma)
    s = sigma.coords / np.sqrt(sigma.N)

    def sample(rng: np.random.Generator) -> np.ndarray:
        v = tangent_project(sigma, rng.standard_normal(sigma.N)).ambient
        D = v / np.linalg.norm(v)
        for _ in range(p - 1):
            D = np.multiply.outer(D, s)
        return D

    return sample


def vector_directions(N: int) -> DirectionSampler:

    def sample(rng: np.random.Generator) -> np.ndarray:
        v = rng.standard_normal(N)
        return v / np.linalg.norm(v)

    return sample


def _perturb(base, direction: np.ndarray, size: float):
    if isinstance(base, Hamiltonian):
        entries = base.coefficients + size * direction
        return Hamiltonian(DisorderTensor(p=base.p, N=base.N, entries=entries, seed=base.tensor.seed,
                                          provenance={"kind": "probe"}))
    return np.asarray(base, dtype=np.float64) + size * direction


def _as_array(output) -> np.ndarray:
    return np.atleast_1d(np.asarray(getattr(output, "coords", output), dtype=np.float64))


@dataclass
class ProbeResult:
    name: str
    ratio: float
    ratios: List[float] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)
    step: float = 0.0
    N: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "ratio": self.ratio, "probes": len(self.ratios),
                "failures": len(self.failures), "step": self.step, "N": self.N}


def empirical_lipschitz_probe(name: str, op: Callable, base_input: Union[Hamiltonian, np.ndarray],
                              n_probes: int = 20, step: float = 1e-3, seed: int = 0,
                              sampler: Optional[DirectionSampler] = None) -> ProbeResult:
    """Max over random perturbations of size step sqrt(N) of ||op(x + dx) - op(x)|| / ||dx||.

    base_input is a Hamiltonian (perturbed in its coefficients) or a vector.
    Probes that leave the domain of op are reported, not raised.
    """
    if isinstance(base_input, Hamiltonian):
        N = base_input.N
        sampler = sampler or random_directions(N, base_input.p)
    else:
        N = np.asarray(base_input).size
        sampler = sampler or vector_directions(N)

    size = step * np.sqrt(N)
    base_output = _as_array(op(base_input))
    rng = np.random.default_rng(seed)
    ratios, failures = [], []
    for index in range(n_probes):
        direction = sampler(rng)
        try:
            output = _as_array(op(_perturb(base_input, direction, size)))
            ratios.append(float(np.linalg.norm(output - base_output)) / size)
        except Exception as e:
            failures.append(f"probe {index}: {e}")
    if failures:
        logger.warning(f"⚠️ {len(failures)}/{n_probes} probes of {name} left the domain")
    return ProbeResult(name=name, ratio=max(ratios) if ratios else float("nan"), ratios=ratios,
                       failures=failures, step=step, N=N)
