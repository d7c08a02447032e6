"""Online matching simulation: environment, low-rank ETC policies, and baselines.

Optimal mode scores a policy by the total-reward gap to the max-weight
matching of the truth. Stable mode scores each worker separately against the
worker-optimal stable matching of (truth, job preferences).

The environment pre-draws its noise as a T x N array keyed only by the step
index, so two policies run on equal environments see identical noise
whatever matchings they choose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .enhancement import EnhanceConfig, double_enhance
from .errors import ConfigError, DataError
from .estimators import NuclearSolverConfig, fit_naive, fit_nuclear
from .matching import Matching, RewardMatrix, validate_matching
from .rng import RandomSource
from .sampling import ObservationLog, sample_uniform_matching
from .solvers import gale_shapley, max_weight_matching


@dataclass(eq=False)
class MatchingEnvironment:
    truth: np.ndarray
    noise_sd: float
    rng: RandomSource
    horizon: int
    job_prefs: Optional[np.ndarray] = None
    entry_bound: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.truth, RewardMatrix):
            if self.entry_bound is None:
                self.entry_bound = self.truth.entry_bound
            self.truth = np.array(self.truth.entries)
        self.truth = np.asarray(self.truth, dtype=float)
        n, k = self.truth.shape
        if n > k:
            raise DataError(f"need N <= K, got N={n} K={k}")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.job_prefs is not None:
            self.job_prefs = np.asarray(self.job_prefs, dtype=float)
            if self.job_prefs.shape != self.truth.shape:
                raise DataError("job preference matrix must match the truth's shape")
        if self.entry_bound is None:
            self.entry_bound = float(np.abs(self.truth).max()) or 1.0
        gen = self.rng.generator()
        if self.noise_sd > 0:
            self._noise = gen.normal(0.0, self.noise_sd, size=(self.horizon, n))
        else:
            self._noise = np.zeros((self.horizon, n))

    @property
    def n_workers(self) -> int:
        return self.truth.shape[0]

    @property
    def n_jobs(self) -> int:
        return self.truth.shape[1]

    @property
    def stable_mode(self) -> bool:
        return self.job_prefs is not None

    def optimal_matching(self) -> Matching:
        return max_weight_matching(self.truth)

    def stable_benchmark(self) -> Matching:
        if self.job_prefs is None:
            raise ConfigError("stable mode needs job preferences")
        return gale_shapley(self.truth, self.job_prefs, strict=False)

    def delta_min(self) -> float:
        """Smallest gap between two job values within any worker's row."""
        if self.n_jobs < 2:
            return math.inf
        return float(np.diff(np.sort(self.truth, axis=1), axis=1).min())


def env_step(env: MatchingEnvironment, m: Matching, t: int) -> np.ndarray:
    """Noisy rewards of the N matched pairs of ``m`` at step ``t`` (0-based)."""
    if not 0 <= t < env.horizon:
        raise ConfigError(f"step {t} outside horizon {env.horizon}")
    problems = validate_matching(m, env.n_workers, env.n_jobs)
    if problems:
        raise DataError(f"invalid matching at t={t}: {'; '.join(problems)}")
    a = m.assignment
    return env.truth[np.arange(env.n_workers), a] + env._noise[t]


@dataclass
class RegretTrace:
    """Chosen matchings and cumulative regret over the horizon.

    ``cumulative`` has shape (T,) in optimal mode and (N, T) in stable mode.
    """

    algorithm: str
    choices: np.ndarray
    cumulative: np.ndarray
    commit_step: Optional[int] = None
    delta_min: Optional[float] = None
    info: dict = field(default_factory=dict)

    @property
    def per_step_choice(self) -> list[Matching]:
        return [Matching(a) for a in self.choices]

    @property
    def stable(self) -> bool:
        return self.cumulative.ndim == 2

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.cumulative, axis=-1, prepend=0.0)

    def final(self) -> float:
        """Final regret; in stable mode the maximum over workers."""
        last = self.cumulative[..., -1]
        return float(np.max(last))


class _Recorder:
    def __init__(self, env: MatchingEnvironment, algorithm: str):
        self.env = env
        self.algorithm = algorithm
        t, n = env.horizon, env.n_workers
        self.choices = np.empty((t, n), dtype=np.int64)
        rows = np.arange(n)
        if env.stable_mode:
            best = env.truth[rows, env.stable_benchmark().assignment]
            self._regret = lambda a: best - env.truth[rows, a]
            self.steps = np.empty((n, t))
        else:
            best = env.truth[rows, env.optimal_matching().assignment].sum()
            self._regret = lambda a: best - env.truth[rows, a].sum()
            self.steps = np.empty(t)
        self.log_a = np.empty((t, n), dtype=np.int64)
        self.log_y = np.empty((t, n))

    def play(self, m: Matching, t: int) -> np.ndarray:
        y = env_step(self.env, m, t)
        self.choices[t] = m.assignment
        self.steps[..., t] = self._regret(m.assignment)
        self.log_a[t] = m.assignment
        self.log_y[t] = y
        return y

    def observations(self, upto: int) -> ObservationLog:
        return ObservationLog(
            self.env.n_workers, self.env.n_jobs, self.log_a[:upto], self.log_y[:upto], self.env.noise_sd
        )

    def trace(self, **kw) -> RegretTrace:
        kw.setdefault("delta_min", self.env.delta_min() if self.env.stable_mode else None)
        return RegretTrace(self.algorithm, self.choices, np.cumsum(self.steps, axis=-1), **kw)


def _policy_rng(env: MatchingEnvironment, rng) -> np.random.Generator:
    if rng is None:
        rng = RandomSource(env.rng.seed, env.rng.stream + 1)
    return rng.generator() if isinstance(rng, RandomSource) else rng


def _explore_then_commit(env, e_h, commit_fn: Callable[[ObservationLog], Matching], name, rng, min_e_h=1):
    if not min_e_h <= e_h <= env.horizon:
        raise ConfigError(f"{name}: exploration length {e_h} outside [{min_e_h}, {env.horizon}]")
    gen = _policy_rng(env, rng)
    rec = _Recorder(env, name)
    for t in range(e_h):
        rec.play(sample_uniform_matching(env.n_workers, env.n_jobs, gen), t)
    info = {}
    if e_h < env.horizon:
        committed, info = commit_fn(rec.observations(e_h))
        for t in range(e_h, env.horizon):
            rec.play(committed, t)
    return rec.trace(commit_step=e_h, info=info)


# ------------------------------------------------------------ schedules


def comblrb_exploration(horizon: int, q: float = 1.0) -> int:
    """ceil(q * T^(2/3)), kept inside [1, T]."""
    return int(min(horizon, max(1, math.ceil(q * horizon ** (2.0 / 3.0) - 1e-9))))


def complrb_exploration(horizon: int, q: float = 40.0) -> int:
    """ceil(q * ln T), kept inside [2, T]."""
    return int(min(horizon, max(2, math.ceil(q * math.log(horizon) - 1e-9))))


def comblrb_lambda(c_lambda, sigma, n_workers, n_jobs, horizon, e_h) -> float:
    return c_lambda * sigma * math.log(n_workers * (n_workers + n_jobs) * horizon) / math.sqrt(e_h)


def complrb_lambda(c_lambda, sigma, n_workers, n_jobs, horizon, e_h) -> float:
    nk = n_workers + n_jobs
    return c_lambda * sigma * math.log(nk * (3 * nk + 5) * horizon) / math.sqrt(e_h)


def comblrb_config(env: MatchingEnvironment, e_h: int, rank: int, c_lambda: float = 1e-3, **kw):
    lam = comblrb_lambda(c_lambda, env.noise_sd, env.n_workers, env.n_jobs, env.horizon, e_h)
    return NuclearSolverConfig(rank_cap=rank, lam=lam, entry_bound=env.entry_bound, **kw)


def complrb_config(env: MatchingEnvironment, e_h: int, rank: int, c_lambda: float = 1e-3, **kw):
    lam = complrb_lambda(c_lambda, env.noise_sd, env.n_workers, env.n_jobs, env.horizon, e_h)
    return EnhanceConfig(NuclearSolverConfig(rank_cap=rank, lam=lam, entry_bound=env.entry_bound, **kw))


# ------------------------------------------------------------ policies


def run_comblrb(env: MatchingEnvironment, e_h: int, cfg: NuclearSolverConfig, rng=None) -> RegretTrace:
    """Explore e_h uniform matchings, fit the nuclear estimate, commit to its argmax."""

    def commit(obs):
        rep = fit_nuclear(obs, cfg)
        return max_weight_matching(rep.estimate), rep.diagnostics()

    return _explore_then_commit(env, e_h, commit, "comblrb", rng)


def run_complrb(env: MatchingEnvironment, e_h: int, cfg: EnhanceConfig, rng=None) -> RegretTrace:
    """Explore e_h uniform matchings, double-enhance, commit to deferred acceptance."""
    if not env.stable_mode:
        raise ConfigError("complrb needs job preferences")

    def commit(obs):
        rep = double_enhance(obs, cfg)
        return gale_shapley(rep.estimate, env.job_prefs, strict=False), rep.diagnostics()

    return _explore_then_commit(env, e_h, commit, "complrb", rng, min_e_h=2)


def run_compb(env: MatchingEnvironment, e_h: int, rng=None) -> RegretTrace:
    """Explore-then-commit with entry-wise sample means."""
    if not env.stable_mode:
        raise ConfigError("compb needs job preferences")

    def commit(obs):
        return gale_shapley(fit_naive(obs), env.job_prefs, strict=False), {}

    return _explore_then_commit(env, e_h, commit, "compb", rng)


def run_fixed(env: MatchingEnvironment, m: Matching, name: str = "fixed") -> RegretTrace:
    """Play one matching every step (debugging and sanity baselines)."""
    rec = _Recorder(env, name)
    for t in range(env.horizon):
        rec.play(m, t)
    return rec.trace()


def run_cucb(env: MatchingEnvironment, unseen_bonus: Optional[float] = None) -> RegretTrace:
    """Combinatorial UCB: play the max-weight matching of mean + sqrt(1.5 ln t / count).

    Pairs never observed get the finite index ``10 * entry_bound``.
    """
    bonus = 10.0 * env.entry_bound if unseen_bonus is None else unseen_bonus
    n, k = env.n_workers, env.n_jobs
    rows = np.arange(n)
    counts = np.zeros((n, k))
    sums = np.zeros((n, k))
    rec = _Recorder(env, "cucb")
    for t in range(env.horizon):
        seen = counts > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            index = sums / counts + np.sqrt(1.5 * math.log(t + 1) / counts)
        index = np.where(seen, index, bonus)
        m = max_weight_matching(index)
        y = rec.play(m, t)
        counts[rows, m.assignment] += 1
        sums[rows, m.assignment] += y
    trace = rec.trace()
    trace.info["counts"] = counts
    return trace


def cts_posterior(counts, sums, prior_sd):
    """Gaussian posterior per pair: prior N(0, s^2), known noise variance s^2."""
    return sums / (counts + 1.0), prior_sd**2 / (counts + 1.0)


def run_cts(env: MatchingEnvironment, rng=None, prior_sd: Optional[float] = None) -> RegretTrace:
    """Combinatorial Thompson sampling with independent Gaussian posteriors."""
    s0 = env.entry_bound if prior_sd is None else prior_sd
    gen = _policy_rng(env, rng)
    n, k = env.n_workers, env.n_jobs
    rows = np.arange(n)
    counts = np.zeros((n, k))
    sums = np.zeros((n, k))
    rec = _Recorder(env, "cts")
    for t in range(env.horizon):
        mean, var = cts_posterior(counts, sums, s0)
        sample = mean + np.sqrt(var) * gen.standard_normal((n, k))
        m = max_weight_matching(sample)
        y = rec.play(m, t)
        counts[rows, m.assignment] += 1
        sums[rows, m.assignment] += y
    trace = rec.trace()
    trace.info["counts"] = counts
    return trace
