"""Experiment runner: ``mvdlab <subcommand> [flags]``.

Each subcommand reads a JSON config (packaged default or ``--config``),
applies flag overrides, writes CSVs plus a plot script into ``--out`` and
prints a short summary. Exit codes: 0 success, 1 configuration error,
2 runtime failure (outputs written so far are kept).
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import sys
import warnings
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import aggregate as agg
from . import envs, lqr, policygrad as pg, sac, testbed
from .distributions import DiagGaussianParams
from .estimators import ESTIMATORS, get_estimator, estimator_variance_study

CONFIG_FILES = {
    "testfuncs": "testfuncs.json",
    "lqr-grad-error": "lqr_grad_error.json",
    "lqr-critic-noise": "lqr_critic_noise.json",
    "lqr-learning": "lqr_learning.json",
    "sac": "sac.json",
}


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# -- config handling ---------------------------------------------------------


def load_config(command: str, path: Optional[str] = None) -> dict:
    if path is None:
        text = resources.files("mvdlab.configs").joinpath(CONFIG_FILES[command]).read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def parse_seeds(text) -> list[int]:
    """``"25"`` -> 0..24, ``"3-7"`` -> 3..7, ``"1,4,9"`` -> that list."""
    if isinstance(text, int):
        seeds = list(range(text))
    elif isinstance(text, list):
        seeds = [int(s) for s in text]
    else:
        text = str(text).strip()
        try:
            if "," in text:
                seeds = [int(s) for s in text.split(",") if s.strip()]
            elif "-" in text.lstrip("-"):
                lo, hi = text.split("-", 1)
                seeds = list(range(int(lo), int(hi) + 1))
            else:
                seeds = list(range(int(text)))
        except ValueError as exc:
            raise ConfigError(f"bad seed specification {text!r}") from exc
    if not seeds:
        raise ConfigError("empty seed set")
    return seeds


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def _freq_grid(spec) -> list[float]:
    if isinstance(spec, dict):
        return [float(f) for f in np.logspace(spec["log10_start"], spec["log10_stop"], int(spec["num"]))]
    return [float(f) for f in spec]


def _require(cfg: dict, *keys):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"config is missing {missing}")


def _nonempty(name, values):
    if not values:
        raise ConfigError(f"grid {name!r} is empty")
    return values


def apply_overrides(command: str, cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if args.seeds is not None:
        cfg["seeds"] = args.seeds
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    if args.estimator is not None:
        cfg["estimators"] = [e.strip() for e in args.estimator.split(",") if e.strip()]
    if args.alpha is not None:
        cfg["alpha"] = _float_list(args.alpha)
    if args.freq is not None:
        cfg["freq"] = _float_list(args.freq)
    if args.actions is not None:
        cfg["actions"] = _int_list(args.actions)
    if args.trajectories is not None:
        cfg["trajectories"] = _int_list(args.trajectories)
    if args.env is not None:
        cfg["env"] = args.env
    if args.steps is not None:
        cfg["iterations" if command == "lqr-learning" else "steps"] = args.steps
    cfg["seeds"] = parse_seeds(cfg.get("seeds", 1))
    return cfg


def _check_estimators(names, allowed):
    bad = [e for e in names if e not in allowed]
    if bad or not names:
        raise ConfigError(f"unknown or empty estimators {bad}; choose from {list(allowed)}")
    return list(names)


def _mapper(workers: int) -> tuple[Callable, Optional[object]]:
    if workers <= 1:
        return map, None
    pool = multiprocessing.Pool(workers)
    return (lambda fn, jobs: pool.imap(fn, jobs, chunksize=1)), pool


def _run_jobs(fn, jobs, workers):
    map_fn, pool = _mapper(workers)
    try:
        return list(map_fn(fn, jobs))
    finally:
        if pool is not None:
            pool.close()
            pool.join()


def _instance(cfg: dict):
    inst = cfg.get("instance", {})
    return lqr.make_random_lqr(int(inst.get("n_states", 2)), int(inst.get("n_actions", 1)), int(inst.get("seed", 0)))


def _write_instance(out: Path, spec: lqr.LqrSpec, policy: lqr.LinearPolicy) -> None:
    K = policy.K
    lines = [spec.to_text().rstrip("\n"), f"K_init {K.shape[0]} {K.shape[1]}", " ".join(repr(float(v)) for v in K.ravel())]
    (out / "instance.txt").write_text("\n".join(lines) + "\n")


def _write_config(out: Path, command: str, cfg: dict) -> None:
    (out / "config.json").write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n")


# -- testfuncs ---------------------------------------------------------------

TRACE_FIELDS = ["seed", "step", "mean_0", "mean_1", "scale_0", "scale_1", "objective_mc"]
TESTFUNC_SUMMARY_FIELDS = [
    "function",
    "estimator",
    "seeds",
    "diverged",
    "converged",
    "convergence_rate",
    "final_distance_mean",
    "final_distance_ci95",
    "init_grad_var",
]


def _testfunc_job(job):
    fn_name, est, seed, cfg = job
    fn = testbed.TEST_FUNCTIONS[fn_name]
    init = DiagGaussianParams(np.asarray(cfg["init_mean"], float), np.asarray(cfg["init_scale"], float))
    diverged = False
    try:
        trace = testbed.run_ascent(fn, est, init, int(cfg["steps"]), int(cfg["samples"]), float(cfg["step_size"]), np.random.default_rng(seed), seed)
    except testbed.AscentDiverged as exc:
        trace, diverged = exc.trace, True
    rows = []
    for t, (m, s, o) in enumerate(zip(trace.means, trace.scales, trace.objectives)):
        rows.append({"seed": seed, "step": t, "mean_0": m[0], "mean_1": m[1], "scale_0": s[0], "scale_1": s[1], "objective_mc": o})
    dist = float(np.linalg.norm(trace.means[-1] - fn.known_maximizer)) if not diverged else float("inf")
    return rows, dist, diverged


def cmd_testfuncs(cfg: dict, out: Path, workers: int = 1) -> dict:
    _require(cfg, "functions", "steps", "samples", "step_size", "init_mean", "init_scale")
    functions = _nonempty("functions", list(cfg["functions"]))
    for f in functions:
        if f not in testbed.TEST_FUNCTIONS:
            raise ConfigError(f"unknown test function {f!r}")
    estimators = _check_estimators(cfg.get("estimators", list(ESTIMATORS)), ESTIMATORS)
    if "sf" in estimators and int(cfg["samples"]) < 2:
        raise ConfigError("sf needs samples >= 2")
    radius = float(cfg.get("convergence_radius", 0.2))
    reps = int(cfg.get("variance_repetitions", 200))
    seeds = cfg["seeds"]
    init = DiagGaussianParams(np.asarray(cfg["init_mean"], float), np.asarray(cfg["init_scale"], float))
    (out / "traces").mkdir(parents=True, exist_ok=True)
    summary = []
    for fn_name in functions:
        fn = testbed.TEST_FUNCTIONS[fn_name]
        for est in estimators:
            results = _run_jobs(_testfunc_job, [(fn_name, est, s, cfg) for s in seeds], workers)
            rows = [r for res in results for r in res[0]]
            agg.write_csv(out / "traces" / f"{fn_name}_{est}.csv", rows, TRACE_FIELDS)
            dists = [res[1] for res in results]
            finite = [d for d in dists if np.isfinite(d)]
            conv = sum(d <= radius for d in dists)
            mean, half = agg.mean_ci(finite) if finite else (float("nan"), None)
            var = estimator_variance_study(fn.oracle(), init, get_estimator(est), int(cfg["samples"]), reps, np.random.default_rng(0))
            summary.append(
                {
                    "function": fn_name,
                    "estimator": est,
                    "seeds": len(seeds),
                    "diverged": sum(res[2] for res in results),
                    "converged": conv,
                    "convergence_rate": conv / len(seeds),
                    "final_distance_mean": mean,
                    "final_distance_ci95": half,
                    "init_grad_var": float(np.sum(var)),
                }
            )
    agg.write_csv(out / "testfuncs_summary.csv", summary, TESTFUNC_SUMMARY_FIELDS)
    agg.write_plot_script(out, "testfuncs")
    return {"summary": summary}


# -- LQR sweeps --------------------------------------------------------------

GRAD_SUMMARY_FIELDS = ["estimator", "trajectories", "actions", "metric"] + agg.AGG_FIELDS
GRAD_CHECK_FIELDS = ["check", "trajectories", "estimator", "metric", "first", "last", "passed"]


def grad_error_checks(rows: Sequence[dict], estimators: Sequence[str]) -> list[dict]:
    """Median decrease from the smallest to the largest action count, and the
    reparam <= mvd <= sf ordering of mean cosine distance at the largest count."""
    checks = []
    actions = sorted({r["actions"] for r in rows})
    lo, hi = actions[0], actions[-1]
    for n in sorted({r["trajectories"] for r in rows}):
        for est in estimators:
            for metric in ("rel_abs_err", "cos_dist"):
                sel = lambda m: [r[metric] for r in rows if r["trajectories"] == n and r["estimator"] == est and r["actions"] == m]
                a, b = float(np.median(sel(lo))), float(np.median(sel(hi)))
                checks.append({"check": "median_decrease", "trajectories": n, "estimator": est, "metric": metric, "first": a, "last": b, "passed": b < a})
        order = [e for e in ("reparam", "mvd", "sf") if e in estimators]
        means = {e: float(np.mean([r["cos_dist"] for r in rows if r["trajectories"] == n and r["estimator"] == e and r["actions"] == hi])) for e in order}
        for x, y in zip(order[:-1], order[1:]):
            checks.append({"check": f"{x}<={y}", "trajectories": n, "estimator": f"{x},{y}", "metric": "cos_dist", "first": means[x], "last": means[y], "passed": means[x] <= means[y]})
    return checks


def _sweep_summary(rows, keys):
    out = []
    for metric in ("rel_abs_err", "cos_dist"):
        for d in agg.aggregate_rows(agg.aggregate(rows, keys, metric), keys):
            out.append({**d, "metric": metric})
    return out


def cmd_lqr_grad_error(cfg: dict, out: Path, workers: int = 1) -> dict:
    estimators = _check_estimators(cfg.get("estimators", list(ESTIMATORS)), ESTIMATORS)
    actions = _nonempty("actions", [int(a) for a in cfg.get("actions", [])])
    trajectories = _nonempty("trajectories", [int(n) for n in cfg.get("trajectories", [])])
    spec, policy = _instance(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _write_instance(out, spec, policy)
    cells = [pg.SweepCell(e, n, m) for n in trajectories for e in estimators for m in actions]
    map_fn, pool = _mapper(workers)
    try:
        rows = pg.error_sweep(spec, policy.K, cells, cfg["seeds"], map_fn=map_fn)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    agg.write_csv(out / "grad_error.csv", rows, pg.SWEEP_FIELDS)
    agg.write_csv(out / "grad_error_summary.csv", _sweep_summary(rows, ["estimator", "trajectories", "actions"]), GRAD_SUMMARY_FIELDS)
    checks = grad_error_checks(rows, estimators)
    agg.write_csv(out / "grad_error_checks.csv", checks, GRAD_CHECK_FIELDS)
    agg.write_plot_script(out, "lqr-grad-error")
    return {"rows": rows, "checks": checks}


NOISE_SUMMARY_FIELDS = ["estimator", "alpha", "freq", "metric"] + agg.AGG_FIELDS
SLOPE_FIELDS = ["estimator", "alpha", "metric", "points", "slope", "stderr", "p_positive", "significant_positive", "p_positive_seedwise"]


def slope_tests(rows: Sequence[dict], level: float = 0.95) -> list[dict]:
    """Slope of the per-frequency mean error on log10(f), per (estimator, alpha, metric).

    ``p_positive_seedwise`` repeats the test on the individual seed rows
    (same slope, within-cell noise in the standard error).
    """
    out = []
    ests = list(dict.fromkeys(r["estimator"] for r in rows))
    alphas = list(dict.fromkeys(r["alpha"] for r in rows))
    for est in ests:
        for alpha in alphas:
            sub = [r for r in rows if r["estimator"] == est and r["alpha"] == alpha]
            if not sub:
                continue
            freqs = sorted({r["freq"] for r in sub})
            if len(freqs) < 3:
                continue
            for metric in ("cos_dist", "rel_abs_err"):
                x = np.log10(freqs)
                y = np.array([np.mean([r[metric] for r in sub if r["freq"] == f]) for f in freqs])
                t = pg.slope_test(x, y, level)
                ts = pg.slope_test(np.log10([r["freq"] for r in sub]), np.array([r[metric] for r in sub]), level)
                out.append(
                    {
                        "estimator": est,
                        "alpha": alpha,
                        "metric": metric,
                        "points": len(freqs),
                        "slope": t["slope"],
                        "stderr": t["stderr"],
                        "p_positive": t["p_positive"],
                        "significant_positive": t["significant_positive"],
                        "p_positive_seedwise": ts["p_positive"],
                    }
                )
    return out


def _actions_for(cfg, spec, default_scale):
    if "actions" in cfg:
        acts = _nonempty("actions", [int(a) for a in cfg["actions"]])
        if len(acts) != 1:
            raise ConfigError("this subcommand takes a single actions-per-state value")
        return acts[0]
    return int(cfg.get("actions_per_action_dim", default_scale)) * spec.n_actions


def cmd_lqr_critic_noise(cfg: dict, out: Path, workers: int = 1) -> dict:
    estimators = _check_estimators(cfg.get("estimators", list(ESTIMATORS)), ESTIMATORS)
    alphas = _nonempty("alpha", [float(a) for a in cfg.get("alpha", [])])
    freqs = _nonempty("freq", _freq_grid(cfg.get("freq", [])))
    trajectories = _nonempty("trajectories", [int(n) for n in cfg.get("trajectories", [10])])
    if any(a < 0 for a in alphas) or any(f < 0 for f in freqs):
        raise ConfigError("alpha and freq must be non-negative")
    spec, policy = _instance(cfg)
    M = _actions_for(cfg, spec, 20)
    out.mkdir(parents=True, exist_ok=True)
    _write_instance(out, spec, policy)
    cells = [pg.SweepCell(e, n, M, a, f) for n in trajectories for e in estimators for a in alphas for f in freqs]
    map_fn, pool = _mapper(workers)
    try:
        rows = pg.error_sweep(spec, policy.K, cells, cfg["seeds"], map_fn=map_fn)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    agg.write_csv(out / "critic_noise.csv", rows, pg.SWEEP_FIELDS)
    agg.write_csv(out / "critic_noise_summary.csv", _sweep_summary(rows, ["estimator", "alpha", "freq"]), NOISE_SUMMARY_FIELDS)
    slopes = slope_tests(rows)
    agg.write_csv(out / "slope_tests.csv", slopes, SLOPE_FIELDS)
    agg.write_plot_script(out, "lqr-critic-noise")
    return {"rows": rows, "slopes": slopes}


LEARNING_SUMMARY_FIELDS = [
    "estimator",
    "alpha",
    "freq",
    "seeds",
    "diverged",
    "within_5pct",
    "median_final_return",
    "mean_final_return",
    "optimal_return",
]


def _learning_job(job):
    spec, K0, est, alpha, freq, seed, n, M, step, iters, every = job
    streams = pg.seed_streams(seed)
    corruption = lqr.CorruptionSpec.sample(spec.n_actions, alpha, freq, streams["corruption"])
    config = pg.PolicyGradConfig(est, n, M, critic="corrupted" if alpha > 0 else "true", corruption=corruption if alpha > 0 else None)
    curve = pg.lqr_learning_run(spec, K0, config, step, iters, streams["actions"], record_every=every)
    return [
        {"estimator": est, "alpha": alpha, "freq": freq, "seed": seed, "env_steps": s, "return": r}
        for s, r in zip(curve.env_steps, curve.returns)
    ], curve.diverged


def learning_cells(alphas, freqs) -> list[tuple]:
    """``alpha x freq``; with alpha = 0 the frequency is irrelevant and collapses to 0."""
    cells = []
    for a in alphas:
        for f in [0.0] if a == 0 else freqs:
            if (a, f) not in cells:
                cells.append((a, f))
    return cells


def cmd_lqr_learning(cfg: dict, out: Path, workers: int = 1) -> dict:
    estimators = _check_estimators(cfg.get("estimators", list(ESTIMATORS)), ESTIMATORS)
    alphas = _nonempty("alpha", [float(a) for a in cfg.get("alpha", [])])
    freqs = _nonempty("freq", _freq_grid(cfg.get("freq", [])))
    trajectories = _nonempty("trajectories", [int(n) for n in cfg.get("trajectories", [1])])
    if len(trajectories) != 1:
        raise ConfigError("lqr-learning takes a single trajectory count")
    _require(cfg, "step_size", "iterations")
    step, iters = float(cfg["step_size"]), int(cfg["iterations"])
    every = int(cfg.get("record_every", 1))
    if step <= 0 or iters < 0 or every < 1:
        raise ConfigError("step_size > 0, iterations >= 0, record_every >= 1")
    spec, policy = _instance(cfg)
    M = _actions_for(cfg, spec, 2)
    out.mkdir(parents=True, exist_ok=True)
    _write_instance(out, spec, policy)
    cells = learning_cells(alphas, freqs)
    jobs = [(spec, policy.K, e, a, f, s, trajectories[0], M, step, iters, every) for (a, f) in cells for e in estimators for s in cfg["seeds"]]
    results = _run_jobs(_learning_job, jobs, workers)
    rows = [r for res, _ in results for r in res]
    agg.write_csv(out / "learning.csv", rows, pg.LEARNING_FIELDS)
    J_opt = lqr.expected_cost(spec, lqr.solve_dare(spec).K)
    summary = []
    for a, f in cells:
        for e in estimators:
            finals = [res[-1]["return"] for res, _ in results if res[0]["estimator"] == e and res[0]["alpha"] == a and res[0]["freq"] == f]
            divs = [d for res, d in results if res[0]["estimator"] == e and res[0]["alpha"] == a and res[0]["freq"] == f]
            summary.append(
                {
                    "estimator": e,
                    "alpha": a,
                    "freq": f,
                    "seeds": len(finals),
                    "diverged": sum(divs),
                    "within_5pct": sum(r >= -1.05 * J_opt for r in finals),
                    "median_final_return": float(np.median(finals)),
                    "mean_final_return": float(np.mean(finals)),
                    "optimal_return": -J_opt,
                }
            )
    agg.write_csv(out / "learning_summary.csv", summary, LEARNING_SUMMARY_FIELDS)
    agg.write_plot_script(out, "lqr-learning")
    return {"rows": rows, "summary": summary}


# -- SAC ---------------------------------------------------------------------

SAC_SUMMARY_FIELDS = ["algo", "env", "seeds", "failed", "final_mean", "final_ci95", "final_median", "solved", "random_return", "critic_gradient_calls"]
SAC_FAILURE_FIELDS = ["algo", "env", "seed", "reason"]


def _make_sac_env(cfg):
    name = cfg.get("env", "pendulum")
    if name == "lqr":
        return envs.make_env("lqr", instance_seed=int(cfg.get("lqr_instance", 0)))
    if name != "pendulum":
        raise ConfigError(f"unknown environment {name!r}")
    return envs.make_env(name)


def _sac_job(job):
    variant, seed, cfg = job
    env = _make_sac_env(cfg)
    config = sac.variant_config(variant, env.act_dim, steps=int(cfg["steps"]), **cfg.get("hyper", {}))
    try:
        curve = sac.train(config, env, seed)
    except sac.TrainingFailed as exc:
        return variant, seed, None, str(exc)
    return variant, seed, curve, None


def cmd_sac(cfg: dict, out: Path, workers: int = 1) -> dict:
    variants = _check_estimators(cfg.get("estimators", list(sac.VARIANTS)), sac.VARIANTS)
    _require(cfg, "steps")
    env = _make_sac_env(cfg)
    # validate hyperparameters before any training
    try:
        for v in variants:
            sac.variant_config(v, env.act_dim, steps=int(cfg["steps"]), **cfg.get("hyper", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad SAC configuration: {exc}") from exc
    threshold = float(cfg.get("solved_threshold", -300.0))
    out.mkdir(parents=True, exist_ok=True)
    eval_rows, failures, summary, timing = [], [], [], {}
    episodes = int(cfg.get("hyper", {}).get("eval_episodes", sac.SacConfig.eval_episodes))
    for v in variants:
        results = _run_jobs(_sac_job, [(v, s, cfg) for s in cfg["seeds"]], workers)
        finals, grad_calls, secs = [], 0, []
        for variant, seed, curve, reason in results:
            if curve is None:
                failures.append({"algo": variant, "env": env.name, "seed": seed, "reason": reason})
                continue
            est = sac.variant_config(variant, env.act_dim).estimator
            for s, r in zip(curve.env_steps, curve.returns):
                eval_rows.append({"algo": variant, "estimator": est, "env": env.name, "seed": seed, "env_steps": s, "eval_return": r})
            finals.append(curve.final_return)
            grad_calls += curve.critic_gradient_calls
            secs.append(curve.seconds_per_update)
        mean, half = agg.mean_ci(finals) if finals else (float("nan"), None)
        rand = float(np.mean([sac.random_policy_return(_make_sac_env(cfg), episodes, s) for s in cfg["seeds"]]))
        summary.append(
            {
                "algo": v,
                "env": env.name,
                "seeds": len(cfg["seeds"]),
                "failed": len(cfg["seeds"]) - len(finals),
                "final_mean": mean,
                "final_ci95": half,
                "final_median": float(np.median(finals)) if finals else float("nan"),
                "solved": sum(f > threshold for f in finals),
                "random_return": rand,
                "critic_gradient_calls": grad_calls,
            }
        )
        timing[v] = float(np.nanmean(secs)) if secs else None
        # written after every variant so a later failure keeps earlier results
        agg.write_csv(out / "sac_eval.csv", eval_rows, sac.EVAL_FIELDS)
        agg.write_csv(out / "sac_summary.csv", summary, SAC_SUMMARY_FIELDS)
        agg.write_csv(out / "sac_failures.csv", failures, SAC_FAILURE_FIELDS)
    if "sac-mvd" in timing and "sac-reparam" in timing and timing["sac-reparam"]:
        timing["mvd_over_reparam"] = timing["sac-mvd"] / timing["sac-reparam"]
    # wall-clock numbers are not reproducible, so they stay out of the CSVs
    (out / "timing.json").write_text(json.dumps({"seconds_per_update": timing}, indent=2, sort_keys=True) + "\n")
    agg.write_plot_script(out, "sac")
    return {"eval": eval_rows, "summary": summary, "failures": failures, "timing": timing}


COMMANDS = {
    "testfuncs": cmd_testfuncs,
    "lqr-grad-error": cmd_lqr_grad_error,
    "lqr-critic-noise": cmd_lqr_critic_noise,
    "lqr-learning": cmd_lqr_learning,
    "sac": cmd_sac,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvdlab", description="Gradient-estimator experiments: test functions, LQR and SAC.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (default: packaged config)")
        p.add_argument("--out", help="output directory (default: results/<command>)")
        p.add_argument("--seeds", help='seed count "25", range "3-7" or list "1,4,9"')
        p.add_argument("--seed", type=int, help="run a single seed")
        p.add_argument("--estimator", help="comma-separated estimators (or SAC variants)")
        p.add_argument("--alpha", help="comma-separated corruption amplitudes")
        p.add_argument("--freq", help="comma-separated corruption frequencies")
        p.add_argument("--actions", help="comma-separated actions per state")
        p.add_argument("--trajectories", help="comma-separated trajectory counts")
        p.add_argument("--env", help="SAC environment: pendulum or lqr")
        p.add_argument("--steps", type=int, help="ascent steps, learning iterations or SAC env steps")
        p.add_argument("--workers", type=int, default=1, help="worker processes (1 = single-threaded)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = apply_overrides(args.command, load_config(args.command, args.config), args)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else Path("results") / args.command
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_config(out, args.command, cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            COMMANDS[args.command](cfg, out, args.workers)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure; partial outputs stay on disk
        print(f"runtime failure in {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: outputs in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
