import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from config import alg_threshold, bulk_edge
from database.tensor_store import TensorStore
from ensemble.chain_sampler import (
    HamiltonianChain, bridge_oracle_error, markov_defect, ou_chain, sample_bridge_chain, verify_chain_covariance,
)
from harness.experiment_config import ExperimentConfig
from harness.run_recorder import RunRecorder
from optimizers.ascent import (
    AscentConfig, StopReason, constant_algorithm, gd_ascent, gd_ascent_algorithm, hessian_ascent,
    linear_row_algorithm, linear_row_stability, warm_start_algorithm,
)
from optimizers.stability_meter import measure_overlap, stability_sweep
from sphere_geometry.sphere_calculus import SpherePoint, spherical_derivatives
from state_following.event_ledger import (
    compute_tau_star, event_report, success_stability_bound, tau_radial, unstable_plugin,
)
from state_following.follower import (
    FollowError, FollowParams, base_algorithm_oracle, follow_step, polish_critical_point, sample_aux,
)
from state_following.global_extension import run_lip
from state_following.lipschitz_probe import aligned_directions, empirical_lipschitz_probe
from tensor_core.hamiltonian import Hamiltonian, correlated_copy, derive_seed, sample_hamiltonian
from tensor_core.opnorm import calibrate_C
from wells.planted import PlantedSpike
from wells.well_detector import WellPreconditionError, classify_well, hessian_spectrum

logger = logging.getLogger(__name__)

# p=3 acceptance band for the median terminal H/N, rescaled by ALG(p)/ALG(3) for other p
OPTIMIZE_BAND = (1.40, 1.75)
SPECTRUM_EDGE_REL_TOL = 0.08
SPECTRUM_SUPPORT_SLACK = 0.5
SHIFTED_EDGE_TOL = 0.4
PLANTED_SUCCESS_RATE = 0.9
PLANTED_START_OVERLAP = 0.9
OUTLIER_MARGIN = 0.1
LIPSCHITZ_STEP = 1e-3
# gamma is rescaled so the polished planted point sits at this radial tau
LIPSCHITZ_TAU = 1.3


@dataclass
class ExperimentResult:
    name: str
    summary: Dict[str, Any]
    table: pd.DataFrame = field(default_factory=pd.DataFrame)
    acceptance: Optional[bool] = None


def replica_seeds(cfg: ExperimentConfig) -> List[int]:
    return [derive_seed(cfg.seed, r) for r in range(cfg.replicas)]


def run_replicas(cfg: ExperimentConfig, fn: Callable[[int, int], Dict[str, Any]]) -> List[Dict[str, Any]]:
    """fn(replica, seed) over all replicas on a pool of cfg.jobs workers, results in replica order"""
    seeds = replica_seeds(cfg)
    if cfg.jobs == 1:
        return [fn(r, s) for r, s in enumerate(seeds)]
    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        futures = [pool.submit(fn, r, s) for r, s in enumerate(seeds)]
        return [f.result() for f in futures]


def ascent_config(cfg: ExperimentConfig, seed: int = 0) -> AscentConfig:
    return AscentConfig(eta=cfg.eta, max_iters=cfg.I, delta=cfg.delta, seed=seed)


def _optimize(cfg: ExperimentConfig, H, seed: int):
    if cfg.algorithm == "hessian":
        return hessian_ascent(H, ascent_config(cfg, seed))
    return gd_ascent(H, SpherePoint.random(H.N, seed), ascent_config(cfg, seed))


def _split(rows: List[Dict[str, Any]], *keys: str):
    """Pull bulky per-replica payloads out of the replica rows"""
    payloads = [{k: row.pop(k) for k in keys if k in row} for row in rows]
    return rows, payloads


def cli_spectrum(cfg: ExperimentConfig, recorder: RunRecorder) -> ExperimentResult:
    edge = bulk_edge(cfg.p)

    def replica(r: int, seed: int) -> Dict[str, Any]:
        H = sample_hamiltonian(cfg.N, cfg.p, derive_seed(seed, 0))
        if cfg.spectrum_point == "optimized":
            sigma = _optimize(cfg, H, derive_seed(seed, 1)).final
        else:
            sigma = SpherePoint.random(cfg.N, derive_seed(seed, 1))
        spectrum = hessian_spectrum(H, sigma)
        radial = spectrum.derivs.radial
        eigs = spectrum.eigenvalues
        predicted = edge - radial
        outliers = int(min(np.sum(eigs > predicted + SHIFTED_EDGE_TOL), cfg.k))
        return {"replica": r, "seed": seed, "energy_per_N": spectrum.derivs.energy / cfg.N, "radial": radial,
                "predicted_edge": predicted, "top_riemannian": float(eigs[0]),
                "top_tangential": float(eigs[0] + radial), "bottom_tangential": float(eigs[-1] + radial),
                "outliers": outliers, "top_bulk": float(eigs[min(outliers, eigs.size - 1)]),
                "eigenvalues": eigs}

    rows, payloads = _split(run_replicas(cfg, replica), "eigenvalues")
    for row in rows:
        recorder.add_replica(row)
    eigenvalues = pd.DataFrame([{"replica": row["replica"], "index": i, "riemannian": float(v),
                                 "tangential": float(v + row["radial"])}
                                for row, payload in zip(rows, payloads)
                                for i, v in enumerate(payload["eigenvalues"])])
    recorder.write_frame("eigenvalues", eigenvalues)
    counts, edges = np.histogram(eigenvalues["riemannian"], bins=40)
    histogram = pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts,
                              "density": counts / (counts.sum() * np.diff(edges))})
    recorder.write_frame("histogram", histogram)
    recorder.write_dat("histogram", histogram)

    df = pd.DataFrame(rows)
    summary = {"bulk_edge": edge, "mean_radial": float(df["radial"].mean()),
               "mean_predicted_edge": float(df["predicted_edge"].mean()),
               "mean_top_tangential": float(df["top_tangential"].mean()),
               "point": cfg.spectrum_point}
    if cfg.spectrum_point == "random":
        rel = (df["top_tangential"] - edge).abs() / edge
        inside = (df["top_tangential"] <= edge + SPECTRUM_SUPPORT_SLACK) & \
                 (df["bottom_tangential"] >= -edge - SPECTRUM_SUPPORT_SLACK)
        summary.update({"max_edge_rel_error": float(rel.max()), "support_ok": bool(inside.all())})
        acceptance = bool(rel.max() <= SPECTRUM_EDGE_REL_TOL and inside.all())
    else:
        gap = (df["top_bulk"] - df["predicted_edge"]).abs()
        summary.update({"max_shifted_gap": float(gap.max()), "max_outliers": int(df["outliers"].max())})
        acceptance = bool(gap.max() <= SHIFTED_EDGE_TOL)
    summary["acceptance"] = acceptance
    return ExperimentResult("spectrum", summary, df.drop(columns=["seed"]), acceptance)


def cli_optimize(cfg: ExperimentConfig, recorder: RunRecorder) -> ExperimentResult:
    alg = alg_threshold(cfg.p)
    edge = bulk_edge(cfg.p)
    store = TensorStore(str(recorder.run_dir / "tensors")) if cfg.save_tensors else None

    def replica(r: int, seed: int) -> Dict[str, Any]:
        H = sample_hamiltonian(cfg.N, cfg.p, derive_seed(seed, 0))
        if store is not None:
            store.save(f"replica_{r:03d}", H.tensor)
        trajectory = _optimize(cfg, H, derive_seed(seed, 1))
        grads = np.asarray(trajectory.grad_norms) / np.sqrt(cfg.N)
        radials = np.asarray(trajectory.radials)
        found_well = bool(np.any((grads <= cfg.delta) & (radials - edge > cfg.well_gamma)))
        info = trajectory.summary()
        stop_ok = (trajectory.stop_reason != StopReason.GRADIENT_THRESHOLD
                   or info["final_grad_norm_per_sqrtN"] <= cfg.delta)
        return {"replica": r, "seed": seed, **info, "found_well": found_well, "stop_ok": bool(stop_ok),
                "trajectory": trajectory.to_frame()}

    rows, payloads = _split(run_replicas(cfg, replica), "trajectory")
    for row, payload in zip(rows, payloads):
        recorder.add_replica(row)
        recorder.write_frame(f"trajectory_{row['replica']:03d}", payload["trajectory"])

    df = pd.DataFrame(rows)
    median = float(df["final_energy_per_N"].median())
    scale = alg / alg_threshold(3)
    band = (OPTIMIZE_BAND[0] * scale, OPTIMIZE_BAND[1] * scale)
    summary = {"ALG": alg, "algorithm": cfg.algorithm, "median_energy_per_N": median,
               "energy_band": list(band), "well_rate": float(df["found_well"].mean()),
               "well_gamma": cfg.well_gamma, "stop_reasons": df["stop_reason"].value_counts().to_dict(),
               "gain_violations": int(df["gain_violations"].sum())}
    acceptance = bool(band[0] <= median <= band[1] and df["stop_ok"].all())
    summary["acceptance"] = acceptance
    logger.info(f"📊 ALG({cfg.p})={alg:.5f}, median H/N={median:.4f}, well rate={summary['well_rate']:.2f}")
    return ExperimentResult("optimize", summary, df.drop(columns=["seed"]), acceptance)


def follow_params(cfg: ExperimentConfig, d: int, iota: float, gamma: float, seed: int,
                  spike: Optional[PlantedSpike] = None) -> FollowParams:
    return FollowParams(gamma=gamma, delta=cfg.delta, d=d, iota=iota, epsilon=cfg.epsilon, K=cfg.K, tol=cfg.tol,
                        trust_c=cfg.trust_c, C=cfg.C, check_bounded=cfg.check_bounded, n_probes=cfg.n_probes,
                        spike=spike, seed=seed)


def _follow_replica(cfg: ExperimentConfig, r: int, seed: int) -> Dict[str, Any]:
    base = gd_ascent_algorithm(ascent_config(cfg))
    row: Dict[str, Any] = {"replica": r, "seed": seed, "mode": cfg.mode}
    spike = None
    u_oracle = None
    H = sample_hamiltonian(cfg.N, cfg.p, derive_seed(seed, 7))

    if cfg.mode == "planted":
        anchor = SpherePoint.random(cfg.N, derive_seed(seed, 10))
        spike = PlantedSpike(anchor, cfg.mu)
        base = warm_start_algorithm(ascent_config(cfg), anchor.coords, PLANTED_START_OVERLAP)
        d, iota, gamma = cfg.d, cfg.iota, cfg.gamma
        aux = sample_aux(cfg.N, cfg.p, cfg.K, d, seed, base_algorithm=base, spike=spike, zero_u=True)
    else:
        probe = sample_aux(cfg.N, cfg.p, cfg.K, 0, seed, base_algorithm=base)
        gamma = cfg.well_gamma
        try:
            wt = classify_well(probe.H0, probe.sigma0, gamma, cfg.k, delta=cfg.delta)
        except WellPreconditionError as e:
            row.update({"well_at_start": False, "defined": False, "undefined_reason": "no_well", "detail": str(e),
                        "a_star": 0.0, "output_norm_per_sqrtN": 0.0})
            return row
        if wt is None:
            row.update({"well_at_start": True, "defined": False, "undefined_reason": "unclassified",
                        "a_star": 0.0, "output_norm_per_sqrtN": 0.0})
            return row
        d, iota = wt.d, wt.a
        aux = sample_aux(cfg.N, cfg.p, cfg.K, d, seed, sigma0=probe.sigma0)
        if cfg.mode == "verification":
            u_oracle = base_algorithm_oracle(base, derive_seed(seed, 1))
        row["well_at_start"] = True

    params = follow_params(cfg, d, iota, gamma, derive_seed(seed, 8), spike=spike)
    result = run_lip(H, aux, params, u_oracle=u_oracle, seed=derive_seed(seed, 9))
    info = result.summary()
    row.update({"d": d, "iota": iota, "defined": bool(info.get("defined", False)),
                "undefined_reason": info.get("undefined_reason"), "undefined_step": info.get("undefined_step"),
                "a_star": result.a_star, "tau_all": result.tau_all,
                "output_norm_per_sqrtN": info["output_norm_per_sqrtN"],
                "well_half_gamma": info.get("well_half_gamma"), "error": result.error})
    row["solve_at_start"] = row["undefined_reason"] != "S_solve(0)"
    if spike is not None and result.run is not None and result.run.defined:
        row["spike_overlap"] = float(result.run.output.coords @ spike.w.coords) / cfg.N
    steps = pd.DataFrame(result.run.steps) if result.run is not None else pd.DataFrame()
    if result.ledger is not None and not steps.empty:
        taus = pd.DataFrame(result.ledger.lenient).add_prefix("tau_")
        steps = steps.join(taus.iloc[:len(steps)].reset_index(drop=True))
    row["steps"] = steps
    return row


def cli_follow(cfg: ExperimentConfig, recorder: RunRecorder) -> ExperimentResult:
    rows, payloads = _split(run_replicas(cfg, lambda r, s: _follow_replica(cfg, r, s)), "steps")
    for row, payload in zip(rows, payloads):
        recorder.add_replica(row)
        steps = payload.get("steps")
        if steps is not None and not steps.empty:
            recorder.write_frame(f"follow_{row['replica']:03d}", steps)

    df = pd.DataFrame(rows)
    defined = df["defined"].astype(bool)
    reasons = Counter(r for r in df["undefined_reason"] if r)
    summary = {"mode": cfg.mode, "success_rate": float(defined.mean()),
               "a_star_zero_rate": float((df["a_star"] == 0).mean()),
               "undefined_reasons": dict(sorted(reasons.items())),
               "outputs_in_ball": bool((df["output_norm_per_sqrtN"] <= 1.0 + 1e-12).all())}
    if cfg.mode != "planted":
        started = df["well_at_start"].astype(bool)
        summary["well_at_start_rate"] = float(started.mean())
        solvable = started & df.get("solve_at_start", pd.Series(False, index=df.index)).fillna(False).astype(bool)
        summary["conditional_success_rate"] = float(defined[solvable].mean()) if solvable.any() else float("nan")
    acceptance = summary["outputs_in_ball"]
    if cfg.mode == "planted":
        final_wells = df.loc[defined, "well_half_gamma"].fillna(False).astype(bool)
        summary["final_well_rate"] = float(final_wells.mean()) if defined.any() else 0.0
        acceptance = bool(acceptance and summary["success_rate"] >= PLANTED_SUCCESS_RATE and final_wells.all())
    summary["acceptance"] = acceptance
    logger.info(f"📊 follow[{cfg.mode}]: success {summary['success_rate']:.2f}, reasons {summary['undefined_reasons']}")
    return ExperimentResult("follow", summary, df.drop(columns=["seed"]), acceptance)


def cli_stability(cfg: ExperimentConfig, recorder: RunRecorder) -> ExperimentResult:
    reps = max(cfg.replicas, 2)
    gd_cfg = ascent_config(cfg)
    if gd_cfg.max_iters is None:
        gd_cfg.max_iters = gd_cfg.iteration_budget(cfg.p)
    algorithms = [constant_algorithm(np.full(cfg.N, 0.5)), linear_row_algorithm(), gd_ascent_algorithm(gd_cfg)]

    def sweep(index: int, seed: int) -> Dict[str, Any]:
        A = algorithms[index]
        return {"stability": stability_sweep(A, cfg.epsilons, reps, cfg.N, cfg.p, seed=seed),
                "overlap": measure_overlap(A, cfg.q_grid, reps, cfg.N, cfg.p, seed=seed)}

    seed = derive_seed(cfg.seed, 0)
    if cfg.jobs == 1:
        results = [sweep(i, seed) for i in range(len(algorithms))]
    else:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(lambda i: sweep(i, seed), range(len(algorithms))))
    stability = pd.concat([r["stability"] for r in results], ignore_index=True)
    overlap = pd.concat([r["overlap"] for r in results], ignore_index=True)
    recorder.write_frame("stability", stability)
    recorder.write_frame("overlap", overlap)
    recorder.write_dat("stability", stability[["epsilon", "S_hat", "stderr"]])

    constant = stability[stability["algorithm"] == "constant"]
    linear = stability[stability["algorithm"] == "linear-row"]
    gd = stability[stability["algorithm"] == "gd-ascent"]
    closed_form = linear["epsilon"].map(lambda eps: linear_row_stability(eps, cfg.N))
    linear_z = ((linear["S_hat"] - closed_form).abs() / linear["stderr"].clip(lower=1e-12)).max()
    gd_spread = float(gd["S_hat"].max() / gd["S_hat"].min()) if (gd["S_hat"] > 0).all() else float("inf")
    if (gd["S_hat"] == 0).all():
        gd_spread = 1.0
    summary = {"constant_max": float(constant["S_hat"].abs().max()),
               "linear_closed_form": [float(v) for v in closed_form],
               "linear_max_z": float(linear_z), "gd_spread": gd_spread, "reps": reps}
    acceptance = bool(summary["constant_max"] == 0.0 and linear_z <= 4.0 and gd_spread <= 3.0)
    summary["acceptance"] = acceptance
    return ExperimentResult("stability", summary, stability, acceptance)


def cli_events(cfg: ExperimentConfig, recorder: RunRecorder) -> ExperimentResult:
    stab_delta = cfg.delta * cfg.stab_delta_factor

    def replica(r: int, seed: int) -> Dict[str, Any]:
        chain = ou_chain(cfg.N, cfg.p, cfg.K, cfg.epsilon, derive_seed(seed, 0))
        base = gd_ascent_algorithm(ascent_config(cfg))
        aux_seed = derive_seed(seed, 1)
        sigmas = [SpherePoint.from_vector(base(h, aux_seed)) for h in chain.hams]
        params = follow_params(cfg, cfg.d, cfg.iota, cfg.well_gamma, derive_seed(seed, 2))
        ledger = event_report(chain, sigmas, params, seed=derive_seed(seed, 3), stab_delta=stab_delta)
        moves = [float(np.sum((sigmas[i].coords - sigmas[i + 1].coords) ** 2)) / cfg.N for i in range(cfg.K)]
        return {"replica": r, "seed": seed, "solve_count": int(sum(ledger.solve)), "elements": len(ledger.solve),
                "unstable_count": int(sum(not s for s in ledger.stab)), "steps": len(ledger.stab),
                "bdd": ledger.bdd, "S_all": ledger.all, "tau_all": ledger.tau_all, "a_star": ledger.a_star,
                "mean_move": float(np.mean(moves))}

    rows = run_replicas(cfg, replica)
    for row in rows:
        recorder.add_replica(row)
    df = pd.DataFrame(rows)
    p_solve = float(df["solve_count"].sum() / df["elements"].sum())
    p_unstable = float(df["unstable_count"].sum() / df["steps"].sum())
    p_all = float(df["S_all"].mean())
    sigma_mc = float(np.sqrt(p_all * (1.0 - p_all) / len(df)))
    bound = success_stability_bound(p_solve, p_unstable, cfg.K)
    summary = {"p_solve": p_solve, "p_unstable": p_unstable, "P_S_all": p_all, "sigma_MC": sigma_mc,
               "bound": bound, "stab_delta": stab_delta}
    if cfg.epsilon > 0:
        S_hat = float(df["mean_move"].mean()) / cfg.epsilon
        plugin = min(1.0, unstable_plugin(S_hat, cfg.epsilon, stab_delta))
        summary.update({"S_hat": S_hat, "p_unstable_plugin": plugin,
                        "bound_plugin": success_stability_bound(p_solve, plugin, cfg.K)})
    acceptance = bool(p_all >= bound - 2.0 * sigma_mc)
    summary["acceptance"] = acceptance
    logger.info(f"📊 P[S_all]={p_all:.3f} vs bound {bound:.3g} (p_solve={p_solve:.3f}, p_unstable={p_unstable:.3f})")
    return ExperimentResult("events", summary, df.drop(columns=["seed"]), acceptance)


def cli_chain_verify(cfg: ExperimentConfig, recorder: RunRecorder) -> ExperimentResult:
    forward = run_replicas(cfg, lambda r, s: {"chain": ou_chain(cfg.N, cfg.p, cfg.K, cfg.epsilon, s)})
    bridge = run_replicas(cfg, lambda r, s: {"chain": sample_bridge_chain(cfg.N, cfg.p, cfg.K, cfg.epsilon, s)})
    rows = []
    for mode, results in (("forward", forward), ("bridge", bridge)):
        check = verify_chain_covariance([r["chain"] for r in results])
        rows.append({"mode": mode, "passed": check.passed, "max_z": check.max_z,
                     "max_abs_error": check.max_abs_error, "samples": check.samples,
                     "markov_defect": markov_defect(check.empirical)})
        K = cfg.K
        recorder.write_frame(f"covariance_{mode}", pd.DataFrame(
            [{"i": i, "j": j, "empirical": check.empirical[i, j], "target": check.target[i, j]}
             for i in range(K + 1) for j in range(K + 1)]))
    results_df = pd.DataFrame(rows)
    recorder.write_frame("chain_checks", results_df)
    oracle_error = bridge_oracle_error(cfg.K, cfg.epsilon) if cfg.K >= 2 else 0.0
    summary = {"checks": rows, "bridge_oracle_error": oracle_error}
    acceptance = bool(results_df["passed"].all() and oracle_error <= 1e-12)
    summary["acceptance"] = acceptance
    return ExperimentResult("chain-verify", summary, results_df, acceptance)


def cli_calibrate(cfg: ExperimentConfig, recorder: RunRecorder) -> ExperimentResult:
    calibration = calibrate_C(cfg.p, N=cfg.calibration_N, samples=cfg.calibration_samples, n_probes=cfg.n_probes,
                              seed=derive_seed(cfg.seed, 0))
    edge = bulk_edge(cfg.p)

    def replica(r: int, seed: int) -> Dict[str, Any]:
        H = sample_hamiltonian(cfg.N, cfg.p, derive_seed(seed, 0))
        sigma = _optimize(cfg, H, derive_seed(seed, 1)).final
        spectrum = hessian_spectrum(H, sigma)
        threshold = edge - spectrum.derivs.radial + OUTLIER_MARGIN
        return {"replica": r, "seed": seed, "radial": spectrum.derivs.radial,
                "outliers": int(np.sum(spectrum.eigenvalues > threshold))}

    rows = run_replicas(cfg, replica)
    for row in rows:
        recorder.add_replica(row)
    df = pd.DataFrame(rows)
    summary = {"calibration": calibration, "max_outliers": int(df["outliers"].max()),
               "suggested_k": int(df["outliers"].max()), "acceptance": True}
    table = pd.DataFrame([{k: v for k, v in calibration.items()}])
    return ExperimentResult("calibrate", summary, table, True)


def _radial_directions(sigma: SpherePoint, p: int):
    """+-s^(p) with s = sigma/sqrt(N): coefficient moves that shift only the radial derivative at sigma"""
    s = sigma.coords / np.sqrt(sigma.N)
    D = s
    for _ in range(p - 1):
        D = np.multiply.outer(D, s)

    def sample(rng: np.random.Generator) -> np.ndarray:
        return rng.choice([-1.0, 1.0]) * D

    return sample


def _lipschitz_replica(cfg: ExperimentConfig, r: int, seed: int) -> Dict[str, Any]:
    row: Dict[str, Any] = {"replica": r, "seed": seed}
    anchor = SpherePoint.random(cfg.N, derive_seed(seed, 10))
    spike = PlantedSpike(anchor, cfg.mu)
    H0 = sample_hamiltonian(cfg.N, cfg.p, derive_seed(seed, 0))
    H = spike.apply(H0)
    params = follow_params(cfg, 0, cfg.iota, cfg.gamma, derive_seed(seed, 8))
    start = warm_start_algorithm(ascent_config(cfg), anchor.coords, PLANTED_START_OVERLAP)
    try:
        sigma = polish_critical_point(H, SpherePoint.from_vector(start(H, derive_seed(seed, 1))), params)
    except (FollowError, ValueError) as e:
        row.update({"polished": False, "detail": str(e)})
        return row
    radial = spherical_derivatives(H, sigma).radial
    row.update({"polished": True, "radial": radial})

    def step(G: Hamiltonian) -> SpherePoint:
        return follow_step(H, spike.apply(G), sigma, np.zeros(cfg.N), params, check_preconditions=False).sigma

    H_next = correlated_copy(H0, 1.0 - cfg.epsilon, seed=derive_seed(seed, 2))
    try:
        follow = empirical_lipschitz_probe("follow_step", step, H_next, n_probes=cfg.n_probes, step=LIPSCHITZ_STEP,
                                           seed=derive_seed(seed, 3), sampler=aligned_directions(sigma, cfg.p))
        row.update({"follow_ratio": follow.ratio, "follow_failures": len(follow.failures)})
    except (FollowError, ValueError) as e:
        logger.warning(f"⚠️ follow_step undefined at the base chain step of replica {r}: {e}")
        row.update({"follow_ratio": float("nan"), "follow_failures": cfg.n_probes, "detail": str(e)})

    if radial <= bulk_edge(cfg.p):
        row.update({"tau_ratio": float("nan"), "tau_failures": 0})
        return row
    tau_params = follow_params(cfg, 0, cfg.iota, LIPSCHITZ_TAU / tau_radial(radial, cfg.p, 1.0),
                               derive_seed(seed, 8))

    def scaled_tau(G: Hamiltonian) -> float:
        planted = spike.apply(G)
        chain = HamiltonianChain(hams=[planted, planted], epsilon=0.0)
        (tau_solve, _, _), _ = compute_tau_star(chain, [sigma, sigma], tau_params, seed=derive_seed(seed, 4))
        return np.sqrt(cfg.N) * tau_solve

    tau = empirical_lipschitz_probe("tau*", scaled_tau, H0, n_probes=cfg.n_probes, step=LIPSCHITZ_STEP,
                                    seed=derive_seed(seed, 5), sampler=_radial_directions(sigma, cfg.p))
    row.update({"tau_ratio": tau.ratio, "tau_failures": len(tau.failures)})
    return row


def cli_lipschitz(cfg: ExperimentConfig, recorder: RunRecorder) -> ExperimentResult:
    """Difference-quotient Lipschitz estimates of one follow step and of sqrt(N) tau* on planted wells"""
    rows = run_replicas(cfg, lambda r, s: _lipschitz_replica(cfg, r, s))
    for row in rows:
        recorder.add_replica(row)
    df = pd.DataFrame(rows)
    polished = df[df["polished"].astype(bool)]
    summary: Dict[str, Any] = {"N": cfg.N, "step": LIPSCHITZ_STEP, "polished_rate": float(len(polished) / len(df))}
    for name in ("follow", "tau"):
        column = polished.get(f"{name}_ratio", pd.Series(dtype=float)).dropna()
        summary[f"{name}_max_ratio"] = float(column.max()) if len(column) else float("nan")
        summary[f"{name}_median_ratio"] = float(column.median()) if len(column) else float("nan")
        summary[f"{name}_failures"] = int(polished.get(f"{name}_failures", pd.Series(dtype=int)).sum())
    acceptance = bool(len(polished) > 0 and np.isfinite(summary["follow_max_ratio"])
                      and summary["follow_failures"] == 0 and summary["tau_failures"] == 0)
    summary["acceptance"] = acceptance
    logger.info(f"📊 Lipschitz at N={cfg.N}: follow_step {summary['follow_max_ratio']:.4g}, "
                f"tau* {summary['tau_max_ratio']:.4g}")
    return ExperimentResult("lipschitz", summary, df.drop(columns=["seed"]), acceptance)


COMMANDS: Dict[str, Callable[[ExperimentConfig, RunRecorder], ExperimentResult]] = {
    "spectrum": cli_spectrum,
    "optimize": cli_optimize,
    "follow": cli_follow,
    "stability": cli_stability,
    "events": cli_events,
    "chain-verify": cli_chain_verify,
    "calibrate": cli_calibrate,
    "lipschitz": cli_lipschitz,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run one experiment and write its record"""
    recorder = RunRecorder(cfg)
    logger.info(f"🚀 Running {cfg.experiment} (N={cfg.N}, p={cfg.p}, replicas={cfg.replicas}, jobs={cfg.jobs})")
    result = COMMANDS[cfg.experiment](cfg, recorder)
    recorder.finish(result.summary)
    return result
