"""Command line entry point: ``matchcomplete <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bandits, harness
from .enhancement import EnhanceConfig, double_enhance
from .errors import ConfigError, DataError, MatchCompleteError
from .estimators import (
    NuclearSolverConfig,
    default_lambda,
    estimate_noise_sd,
    fit_nuclear,
)
from .matching import total_reward
from .rng import NOISE, TRUTH, RandomSource, stream_for
from .sampling import (
    generate_synthetic_truth,
    load_log,
    load_matrix,
    save_log,
    save_matching,
    save_matrix,
    simulate_observations,
)
from .solvers import gale_shapley, max_weight_matching

log = logging.getLogger("matchcomplete")


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


# ------------------------------------------------------------ subcommands


def cmd_generate(args) -> int:
    truth, _ = generate_synthetic_truth(
        args.n_workers, args.n_jobs, args.rank, RandomSource(args.seed, stream_for(0, TRUTH))
    )
    obs = simulate_observations(truth, args.n_matchings, args.sigma, RandomSource(args.seed, stream_for(0, NOISE)))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_matrix(truth.entries, out / "truth.csv")
    save_log(obs, out / "log.csv")
    print(f"wrote {out / 'truth.csv'} and {out / 'log.csv'} ({obs.n} matchings)")
    return 0


def _solver_setup(args, n_fit):
    obs = load_log(args.log)
    truth = load_matrix(args.truth) if args.truth else None
    if truth is not None and truth.shape != (obs.n_workers, obs.n_jobs):
        raise DataError(f"truth shape {truth.shape} does not match the log ({obs.n_workers}, {obs.n_jobs})")
    sigma = args.sigma
    if sigma is None:
        sigma = obs.noise_sd if obs.noise_sd is not None else estimate_noise_sd(obs)
    bound = args.entry_bound
    if bound is None:
        bound = truth.entry_bound if truth is not None else float(np.abs(obs.rewards).max(initial=0.0)) or 1.0
    lam = args.lam
    if lam is None:
        lam = default_lambda(sigma, n_fit(obs), obs.n_workers, obs.n_jobs, args.c_lambda)
    cfg = NuclearSolverConfig(rank_cap=args.rank, lam=lam, entry_bound=bound, max_iters=args.max_iters)
    return obs, truth, sigma, cfg


def _write_estimate(args, report, extra: dict) -> None:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_matrix(report.estimate, out)
    diag = {**report.diagnostics(), **extra}
    diag_path = out.with_name(out.stem + ".diagnostics.jsonl")
    diag_path.write_text(_dump(diag) + "\n")
    print(_dump(diag))


def cmd_estimate(args) -> int:
    obs, truth, sigma, cfg = _solver_setup(args, lambda o: o.n)
    report = fit_nuclear(obs, cfg, truth=truth)
    _write_estimate(args, report, {"sigma": sigma, "n": obs.n, "entry_bound": cfg.entry_bound})
    return 0


def cmd_enhance(args) -> int:
    obs, truth, sigma, cfg = _solver_setup(args, lambda o: max(o.n // 2, 1))
    report = double_enhance(obs, EnhanceConfig(cfg, column_fallback=args.column_fallback), truth=truth)
    extra = {"sigma": sigma, "n": obs.n, "entry_bound": cfg.entry_bound}
    if report.first_stage.metrics is not None:
        extra["first_stage_metrics"] = report.first_stage.metrics
    _write_estimate(args, report, extra)
    return 0


def cmd_match(args) -> int:
    theta = np.array(load_matrix(args.theta).entries)
    if args.mode == "optimal":
        m = max_weight_matching(theta)
    else:
        if not args.phi:
            raise ConfigError("--mode stable needs --phi")
        phi = np.array(load_matrix(args.phi).entries)
        m = gale_shapley(theta, phi, strict=args.strict)
    save_matching(m, args.out)
    print(_dump({"mode": args.mode, "assignment": m.assignment.tolist(), "value": total_reward(m, theta)}))
    return 0


def _write_trace(trace: bandits.RegretTrace, path: Path) -> None:
    if trace.stable:
        lines = ["t,worker,cum_regret"]
        n, t_len = trace.cumulative.shape
        for t in range(t_len):
            lines.extend(f"{t + 1},{i},{harness._f(trace.cumulative[i, t])}" for i in range(n))
    else:
        lines = ["t,cum_regret"]
        lines.extend(f"{t + 1},{harness._f(v)}" for t, v in enumerate(trace.cumulative))
    path.write_text("\n".join(lines) + "\n")


def cmd_simulate(args) -> int:
    cfg = _experiment_config(args, mode_from_algos=True)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stable = cfg.mode == "stable"
    summary = ["algo,horizon,trial,final_regret,commit_step"]
    for horizon in cfg.horizons:
        for trial in range(cfg.trials):
            for algo in cfg.algos:
                env = harness.make_environment(cfg, horizon, trial, stable)
                trace = harness.run_algorithm(cfg, algo, env, trial)
                _write_trace(trace, out / f"trace_{algo}_T{horizon}_trial{trial}.csv")
                commit = "" if trace.commit_step is None else trace.commit_step
                summary.append(f"{algo},{horizon},{trial},{harness._f(trace.final())},{commit}")
    (out / "simulate_summary.csv").write_text("\n".join(summary) + "\n")
    print(f"wrote {len(summary) - 1} traces to {out}")
    return 0


def cmd_tune(args) -> int:
    cfg = _experiment_config(args)
    result = harness.tune_c_lambda(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.write(out / "tuning.csv")
    print(_dump({"best_c_lambda": result.best, "grid": result.grid, "scores": result.scores}))
    return 0


def cmd_report(args) -> int:
    cfg = _experiment_config(args)
    agg = harness.run_experiment(cfg)
    out = Path(cfg.out_dir)
    paths = agg.write(out)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    if not args.no_figures:
        from .plotting import render_figures

        xlabel = "number of matchings n" if cfg.mode == "offline" else "horizon T"
        rows = harness.read_plot_data(paths["plot_data"])
        render_figures(rows, out, xlabel=xlabel, prefix=f"{cfg.mode}_")
    if agg.failures:
        log.warning("%d trial(s) failed; see failures.csv", len(agg.failures))
    for x, algo, metric, s, failed in agg.rows:
        print(f"{x},{algo},{metric},{s.mean:.6g},{s.ci_half:.6g},{s.n},{failed}")
    return 0


# ------------------------------------------------------------ config plumbing

# flag dest -> ExperimentConfig field
_EXPERIMENT_FLAGS = {
    "mode": "mode",
    "n_workers": "n_workers",
    "n_jobs": "n_jobs",
    "rank": "rank",
    "sigma": "sigma",
    "sample_sizes": "sample_sizes",
    "horizons": "horizons",
    "trials": "trials",
    "seed": "seed",
    "c_lambda": "c_lambda",
    "c_lambda_grid": "c_lambda_grid",
    "algorithms": "algorithms",
    "estimators": "estimators",
    "truth": "truth_path",
    "max_iters": "max_iters",
    "out_dir": "out_dir",
    "threads": "threads",
    "preset": "preset",
    "q_optimal": "q_optimal",
    "q_stable": "q_stable",
}


def _experiment_config(args, mode_from_algos: bool = False) -> harness.ExperimentConfig:
    overrides = {}
    for dest, key in _EXPERIMENT_FLAGS.items():
        val = getattr(args, dest, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "horizon", None) is not None:
        overrides["horizons"] = args.horizon
    if getattr(args, "q", None) is not None:
        overrides["q_stable" if _stable_algos(args) else "q_optimal"] = args.q
    if mode_from_algos and args.algorithms:
        overrides["mode"] = "stable" if _stable_algos(args) else "optimal"
    if args.config:
        return harness.ExperimentConfig.from_file(args.config, overrides)
    return harness.ExperimentConfig.from_dict(overrides)


def _stable_algos(args) -> bool:
    algos = set(args.algorithms or [])
    if algos & set(harness.STABLE_ALGOS) and algos & set(harness.OPTIMAL_ALGOS):
        raise ConfigError("cannot mix optimal-mode and stable-mode algorithms in one run")
    return bool(algos & set(harness.STABLE_ALGOS))


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_estimator_args(p):
    p.add_argument("--log", required=True, help="observation CSV (t,i,j,y)")
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--c-lambda", type=float, default=1e-3)
    p.add_argument("--lambda", dest="lam", type=float, help="use this lambda instead of the default schedule")
    p.add_argument("--sigma", type=float, help="noise standard deviation (default: from the log)")
    p.add_argument("--entry-bound", type=float, help="entry bound b (default: from --truth or max |y|)")
    p.add_argument("--truth", help="truth matrix CSV for error metrics")
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--out", required=True, help="estimate matrix CSV")


def _add_experiment_args(p, simulate: bool = False):
    p.add_argument("--config", help="JSON file of ExperimentConfig fields")
    p.add_argument("--preset", choices=sorted(harness.PRESETS))
    if not simulate:
        p.add_argument("--mode", choices=["offline", "optimal", "stable"])
        p.add_argument("--sample-sizes", type=_int_list)
        p.add_argument("--horizons", type=_int_list)
        p.add_argument("--algorithms", type=_str_list, help="comma-separated algorithm names")
        p.add_argument("--estimators", type=_str_list, help="lowrank,naive,enhanced")
    p.add_argument("--n-workers", type=int)
    p.add_argument("--n-jobs", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--sigma", type=float, help="noise standard deviation")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--c-lambda", type=float)
    p.add_argument("--c-lambda-grid", type=_float_list)
    p.add_argument("--truth", help="truth matrix CSV used in place of synthetic draws")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matchcomplete", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a synthetic truth and an observation log")
    p.add_argument("--n-workers", type=int, required=True)
    p.add_argument("--n-jobs", type=int, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--sigma", type=float, default=math.sqrt(0.1), help="noise standard deviation")
    p.add_argument("--n-matchings", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("estimate", help="nuclear-norm estimate from a log")
    _add_estimator_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("enhance", help="double-enhanced estimate from a log")
    _add_estimator_args(p)
    p.add_argument("--column-fallback", choices=["first_stage", "ridge"], default="first_stage")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("match", help="optimal or stable matching of a matrix")
    p.add_argument("--theta", required=True, help="worker-side value matrix CSV")
    p.add_argument("--phi", help="job-side value matrix CSV (stable mode)")
    p.add_argument("--mode", choices=["optimal", "stable"], default="optimal")
    p.add_argument("--strict", action="store_true", help="fail on tied preferences")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("simulate", help="run bandit policies and write regret traces")
    p.add_argument("--algo", dest="algorithms", type=_str_list, required=True,
                   help="comblrb|cucb|cts|complrb|compb (comma-separated for several)")
    p.add_argument("--horizon", type=_int_list, help="one horizon or a comma-separated list")
    p.add_argument("--q", type=float, help="exploration multiplier")
    _add_experiment_args(p, simulate=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune", help="sweep the c_lambda grid on the offline task")
    _add_experiment_args(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report", help="run an experiment and write aggregates, plot data and figures")
    _add_experiment_args(p)
    p.add_argument("--q-optimal", type=float)
    p.add_argument("--q-stable", type=float)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except MatchCompleteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
