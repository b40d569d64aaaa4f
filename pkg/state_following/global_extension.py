import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

import numpy as np

from optimizers.ascent import round_to_ball
from state_following.event_ledger import EventLedger, TAU_MAX, a_star_from_tau, compute_tau_star
from state_following.follower import AuxRandomness, FollowParams, TrackingRun, run_loclip
from tensor_core.hamiltonian import Hamiltonian

logger = logging.getLogger(__name__)


@dataclass
class LipOutput:
    point: np.ndarray
    a_star: float
    tau_all: float
    run: Optional[TrackingRun] = None
    ledger: Optional[EventLedger] = None
    error: Optional[str] = None

    def summary(self) -> Dict[str, Any]:
        N = self.point.size
        info = {"a_star": self.a_star, "tau_all": self.tau_all,
                "output_norm_per_sqrtN": float(np.linalg.norm(self.point)) / np.sqrt(N), "error": self.error}
        if self.run is not None:
            info.update(self.run.summary())
        if self.ledger is not None:
            info.update({"tau_solve": self.ledger.tau_solve, "tau_bdd": self.ledger.tau_bdd,
                         "S_all": self.ledger.all})
        return info


def rescale_by_leniency(sigma: np.ndarray, tau_all: float) -> np.ndarray:
    """a* sigma with a* = max(0, min(1, 14 - 10 tau)), rounded into B_N"""
    return round_to_ball(a_star_from_tau(tau_all) * np.asarray(sigma, dtype=np.float64))


def run_lip(H: Hamiltonian, aux: AuxRandomness, params: FollowParams, u_oracle: Optional[Callable] = None,
            seed: int = 0) -> LipOutput:
    """a* x run_loclip, and 0 wherever run_loclip is undefined; total on every input"""
    zero = np.zeros(H.N)
    try:
        run = run_loclip(H, aux, params, u_oracle=u_oracle)
        if not run.defined:
            return LipOutput(point=zero, a_star=0.0, tau_all=TAU_MAX, run=run)
        (_, _, tau_all), ledger = compute_tau_star(run.chain, run.sigmas, params, seed=seed)
        point = rescale_by_leniency(run.output.coords, tau_all)
        if not np.all(np.isfinite(point)):
            raise FloatingPointError(f"non-finite output at tau* = {tau_all}")
        return LipOutput(point=point, a_star=a_star_from_tau(tau_all), tau_all=tau_all, run=run, ledger=ledger)
    except Exception as e:
        logger.error(f"❌ run_lip fell back to 0: {e}")
        return LipOutput(point=zero, a_star=0.0, tau_all=TAU_MAX, error=str(e))
