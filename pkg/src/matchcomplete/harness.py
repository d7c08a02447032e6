"""Experiment orchestration: seeded trials, aggregation, and CSV reports.

Each trial draws its randomness from streams keyed by (seed, trial, purpose),
so a trial's truth, noise, and exploration draws do not depend on which
algorithm runs, on the grid point, or on the order trials finish in.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import bandits
from .enhancement import EnhanceConfig, double_enhance
from .errors import ConfigError, MatchCompleteError
from .estimators import NuclearSolverConfig, default_lambda, error_metrics, fit_naive, fit_nuclear
from .matching import RewardMatrix
from .rng import JOB_PREFS, NOISE, POLICY, TRUTH, RandomSource, stream_for
from .sampling import generate_synthetic_truth, load_matrix, simulate_observations

log = logging.getLogger(__name__)

C_LAMBDA_GRID = (3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0)
OFFLINE_ESTIMATORS = ("lowrank", "naive", "enhanced")
OPTIMAL_ALGOS = ("comblrb", "cucb", "cts")
STABLE_ALGOS = ("complrb", "compb")
PROFILE_GROUP = 5  # trials sharing one job-preference profile


@dataclass
class ExperimentConfig:
    mode: str = "offline"
    n_workers: int = 20
    n_jobs: int = 20
    rank: int = 2
    sigma: float = math.sqrt(0.1)
    sample_sizes: list = field(default_factory=lambda: [20, 40, 60, 80, 100])
    horizons: list = field(default_factory=lambda: [200, 400, 600, 800, 1000])
    trials: int = 20
    seed: int = 0
    c_lambda: float = 1e-3
    c_lambda_grid: list = field(default_factory=lambda: list(C_LAMBDA_GRID))
    q_optimal: float = 1.0
    q_stable: float = 40.0
    algorithms: Optional[list] = None
    estimators: list = field(default_factory=lambda: ["lowrank", "naive"])
    truth_path: Optional[str] = None
    max_iters: int = 2000
    out_dir: str = "results"
    threads: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in ("offline", "optimal", "stable"):
            raise ConfigError(f"mode must be offline, optimal or stable, got {self.mode!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n_workers > self.n_jobs:
            raise ConfigError("need n_workers <= n_jobs")
        if not 1 <= self.rank <= self.n_workers:
            raise ConfigError("rank must lie in [1, n_workers]")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        grid = self.sample_sizes if self.mode == "offline" else self.horizons
        if not grid:
            raise ConfigError("grid is empty")
        if not self.c_lambda_grid:
            raise ConfigError("c_lambda grid is empty")
        if self.mode == "offline":
            bad = set(self.estimators) - set(OFFLINE_ESTIMATORS)
            if bad or not self.estimators:
                raise ConfigError(f"unknown estimators {sorted(bad)}")
            if "enhanced" in self.estimators and min(self.sample_sizes) < 2:
                raise ConfigError("the enhanced estimator needs sample sizes >= 2")
        else:
            allowed = OPTIMAL_ALGOS if self.mode == "optimal" else STABLE_ALGOS
            algos = self.algorithms or list(allowed)
            bad = set(algos) - set(allowed)
            if bad:
                raise ConfigError(f"algorithms {sorted(bad)} do not run in {self.mode} mode")

    @property
    def algos(self) -> list:
        if self.mode == "offline":
            return list(self.estimators)
        return list(self.algorithms or (OPTIMAL_ALGOS if self.mode == "optimal" else STABLE_ALGOS))

    @property
    def grid(self) -> list:
        return list(self.sample_sizes if self.mode == "offline" else self.horizons)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "sigma2" in data:
            if "sigma" in data:
                raise ConfigError("give sigma or sigma2, not both")
            s2 = float(data.pop("sigma2"))
            if s2 < 0:
                raise ConfigError("sigma2 must be >= 0")
            data["sigma"] = math.sqrt(s2)
        known = {f.name for f in fields(cls)}
        extra = set(data) - known - {"preset"}
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "preset" in data and data["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {data['preset']!r}")
        base = PRESETS[data["preset"]] if "preset" in data else {}
        merged = {**base, **{k: v for k, v in data.items() if k != "preset"}}
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path, overrides: Optional[dict] = None) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a flat JSON object")
        data.update(overrides or {})
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "desk": {},
    "paper-f": {
        "n_workers": 100,
        "n_jobs": 100,
        "rank": 3,
        "sigma": math.sqrt(0.1),
        "trials": 50,
        "sample_sizes": [20, 40, 60, 80, 100],
        "horizons": [200, 400, 600, 800, 1000],
    },
}


# ------------------------------------------------------------ aggregation


@dataclass(frozen=True)
class Summary:
    mean: float
    se: float
    ci_half: float
    n: int
    low: float
    high: float


def summarize(values) -> Summary:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return Summary(math.nan, math.nan, math.nan, 0, math.nan, math.nan)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return Summary(float(v.mean()), se, 1.96 * se, int(v.size), float(v.min()), float(v.max()))


@dataclass
class AggregateResult:
    """Per (grid point, algorithm, metric) summaries plus the raw trial values."""

    mode: str
    rows: list = field(default_factory=list)  # (x, algo, metric, Summary, failed)
    raw: list = field(default_factory=list)  # (x, trial, algo, metric, value)
    failures: list = field(default_factory=list)  # (x, trial, message)

    def lookup(self, x, algo, metric) -> Summary:
        for rx, ra, rm, s, _ in self.rows:
            if rx == x and ra == algo and rm == metric:
                return s
        raise KeyError((x, algo, metric))

    def means(self, algo, metric) -> list:
        return [s.mean for x, a, m, s, _ in self.rows if a == algo and m == metric]

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "aggregate": out / "aggregate.csv",
            "trials": out / "trials.csv",
            "plot_data": out / "plot_data.csv",
        }
        with open(paths["aggregate"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "algo", "metric", "mean", "se", "ci_half", "n", "failed"])
            for x, a, m, s, failed in self.rows:
                w.writerow([x, a, m, _f(s.mean), _f(s.se), _f(s.ci_half), s.n, failed])
        with open(paths["trials"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "trial", "algo", "metric", "value"])
            for x, t, a, m, v in self.raw:
                w.writerow([x, t, a, m, _f(v)])
        emit_plot_data(self, paths["plot_data"])
        if self.failures:
            paths["failures"] = out / "failures.csv"
            with open(paths["failures"], "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["x", "trial", "error"])
                w.writerows(self.failures)
        return paths


def _f(x: float) -> str:
    return format(float(x), ".17g")


def emit_plot_data(agg: AggregateResult, path) -> Path:
    """Long-format ``x,algo,metric,mean,ci_low,ci_high`` CSV."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "algo", "metric", "mean", "ci_low", "ci_high"])
    for x, a, m, s, _ in agg.rows:
        w.writerow([x, a, m, _f(s.mean), _f(s.mean - s.ci_half), _f(s.mean + s.ci_half)])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def read_plot_data(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("mean", "ci_low", "ci_high"):
            r[k] = float(r[k])
        r["x"] = float(r["x"])
    return rows


def _aggregate(cfg: ExperimentConfig, results) -> AggregateResult:
    """``results``: iterable of (x, trial, {(algo, metric): value} | error string)."""
    agg = AggregateResult(cfg.mode)
    results = sorted(results, key=lambda r: (r[0], r[1]))
    for x in cfg.grid:
        here = [r for r in results if r[0] == x]
        ok = [r for r in here if isinstance(r[2], dict)]
        failed = len(here) - len(ok)
        for r in here:
            if not isinstance(r[2], dict):
                agg.failures.append((x, r[1], r[2]))
        keys = []
        for r in ok:
            for key in r[2]:
                if key not in keys:
                    keys.append(key)
        for algo, metric in keys:
            vals = [r[2][(algo, metric)] for r in ok if (algo, metric) in r[2]]
            agg.rows.append((x, algo, metric, summarize(vals), failed))
            agg.raw.extend((x, r[1], algo, metric, r[2][(algo, metric)]) for r in ok if (algo, metric) in r[2])
    return agg


# ------------------------------------------------------------ trials


def trial_truth(cfg: ExperimentConfig, trial: int) -> RewardMatrix:
    if cfg.truth_path:
        return load_matrix(cfg.truth_path)
    truth, _ = generate_synthetic_truth(
        cfg.n_workers, cfg.n_jobs, cfg.rank, RandomSource(cfg.seed, stream_for(trial, TRUTH))
    )
    return truth


def trial_job_prefs(cfg: ExperimentConfig, trial: int, shape) -> np.ndarray:
    """Each column a random permutation of the worker indices; 5 trials share a profile."""
    gen = RandomSource(cfg.seed, stream_for(trial // PROFILE_GROUP, JOB_PREFS)).generator()
    n, k = shape
    return np.column_stack([gen.permutation(n) for _ in range(k)]).astype(float)


def offline_trial(cfg: ExperimentConfig, n: int, trial: int, c_lambda: Optional[float] = None) -> dict:
    c = cfg.c_lambda if c_lambda is None else c_lambda
    truth = trial_truth(cfg, trial)
    n_w, n_j = truth.shape
    obs = simulate_observations(truth, n, cfg.sigma, RandomSource(cfg.seed, stream_for(trial, NOISE)))
    out = {}

    def record(name, est):
        m = error_metrics(est, truth)
        out[(name, "rel_frob")] = m["rel_frob"]
        out[(name, "rel_inf")] = m["rel_inf"]

    b = truth.entry_bound
    if "lowrank" in cfg.estimators:
        lam = default_lambda(cfg.sigma, n, n_w, n_j, c)
        nuc = NuclearSolverConfig(rank_cap=cfg.rank, lam=lam, entry_bound=b, max_iters=cfg.max_iters)
        record("lowrank", fit_nuclear(obs, nuc).estimate)
    if "naive" in cfg.estimators:
        record("naive", fit_naive(obs))
    if "enhanced" in cfg.estimators:
        lam = default_lambda(cfg.sigma, n // 2, n_w, n_j, c)
        nuc = NuclearSolverConfig(rank_cap=cfg.rank, lam=lam, entry_bound=b, max_iters=cfg.max_iters)
        rep = double_enhance(obs, EnhanceConfig(nuc), truth=truth)
        record("enhanced", rep.estimate)
        record("first_stage", rep.first_stage.estimate)
    return out


def make_environment(cfg: ExperimentConfig, horizon: int, trial: int, stable: bool):
    truth = trial_truth(cfg, trial)
    prefs = trial_job_prefs(cfg, trial, truth.shape) if stable else None
    return bandits.MatchingEnvironment(
        truth, cfg.sigma, RandomSource(cfg.seed, stream_for(trial, NOISE)), horizon, job_prefs=prefs
    )


def run_algorithm(cfg: ExperimentConfig, algo: str, env, trial: int) -> bandits.RegretTrace:
    policy = RandomSource(cfg.seed, stream_for(trial, POLICY))
    horizon = env.horizon
    if algo == "comblrb":
        e_h = bandits.comblrb_exploration(horizon, cfg.q_optimal)
        solver = bandits.comblrb_config(env, e_h, cfg.rank, cfg.c_lambda, max_iters=cfg.max_iters)
        return bandits.run_comblrb(env, e_h, solver, rng=policy)
    if algo == "cucb":
        return bandits.run_cucb(env)
    if algo == "cts":
        return bandits.run_cts(env, rng=policy)
    if algo == "complrb":
        e_h = bandits.complrb_exploration(horizon, cfg.q_stable)
        solver = bandits.complrb_config(env, e_h, cfg.rank, cfg.c_lambda, max_iters=cfg.max_iters)
        return bandits.run_complrb(env, e_h, solver, rng=policy)
    if algo == "compb":
        return bandits.run_compb(env, bandits.complrb_exploration(horizon, cfg.q_stable), rng=policy)
    raise ConfigError(f"unknown algorithm {algo!r}")


def online_trial(cfg: ExperimentConfig, horizon: int, trial: int, keep_traces: bool = False):
    stable = cfg.mode == "stable"
    metric = "max_worker_regret" if stable else "regret"
    out, traces = {}, {}
    for algo in cfg.algos:
        env = make_environment(cfg, horizon, trial, stable)
        trace = run_algorithm(cfg, algo, env, trial)
        out[(algo, metric)] = trace.final()
        if keep_traces:
            traces[algo] = trace
    return (out, traces) if keep_traces else out


def _run_task(task):
    kind, cfg, x, trial, extra = task
    try:
        if kind == "offline":
            return x, trial, offline_trial(cfg, x, trial, extra)
        return x, trial, online_trial(cfg, x, trial)
    except (MatchCompleteError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("trial %s at x=%s failed: %s", trial, x, exc)
        return x, trial, f"{type(exc).__name__}: {exc}"


def thread_count(cfg: ExperimentConfig) -> int:
    if cfg.threads:
        return max(1, int(cfg.threads))
    env = os.environ.get("MATCHCOMPLETE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"MATCHCOMPLETE_THREADS must be an integer, got {env!r}") from None
    return 1


def _farm(cfg: ExperimentConfig, tasks) -> list:
    workers = thread_count(cfg)
    if workers == 1 or len(tasks) == 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_task, tasks))


def run_offline_experiment(cfg: ExperimentConfig, c_lambda: Optional[float] = None) -> AggregateResult:
    if cfg.mode != "offline":
        raise ConfigError("run_offline_experiment needs mode=offline")
    tasks = [("offline", cfg, n, trial, c_lambda) for n in cfg.grid for trial in range(cfg.trials)]
    return _aggregate(cfg, _farm(cfg, tasks))


def run_online_experiment(cfg: ExperimentConfig) -> AggregateResult:
    if cfg.mode not in ("optimal", "stable"):
        raise ConfigError("run_online_experiment needs mode=optimal or mode=stable")
    tasks = [("online", cfg, h, trial, None) for h in cfg.grid for trial in range(cfg.trials)]
    return _aggregate(cfg, _farm(cfg, tasks))


def run_experiment(cfg: ExperimentConfig) -> AggregateResult:
    if cfg.mode == "offline":
        return run_offline_experiment(cfg)
    return run_online_experiment(cfg)


@dataclass
class TuningResult:
    grid: list
    scores: list  # mean rel_frob of the low-rank estimator, averaged over the sample-size grid
    best: float

    def write(self, path) -> Path:
        lines = ["c_lambda,mean_rel_frob,selected"]
        for c, s in zip(self.grid, self.scores):
            lines.append(f"{_f(c)},{_f(s)},{int(c == self.best)}")
        path = Path(path)
        path.write_text("\n".join(lines) + "\n")
        return path


def tune_c_lambda(cfg: ExperimentConfig) -> TuningResult:
    """Sweep the c_lambda grid and pick the argmin of mean low-rank rel_frob."""
    base = replace(cfg, mode="offline", estimators=["lowrank"])
    scores = []
    for c in base.c_lambda_grid:
        agg = run_offline_experiment(base, c_lambda=c)
        means = agg.means("lowrank", "rel_frob")
        scores.append(float(np.mean(means)) if means else math.inf)
    best = base.c_lambda_grid[int(np.argmin(scores))]
    return TuningResult(list(base.c_lambda_grid), scores, best)
