"""Nuclear-norm regularized completion under a rank cap and an entry bound.

The solver is proximal gradient on

    (1/n) sum_t ||Y_t - X_t(theta)||^2 + lam * ||theta||_*

subject to rank(theta) <= r and max|theta| <= b. Each iteration takes a
gradient step on the quadratic loss, soft-thresholds the singular values
(the nuclear prox), keeps the top r of them, and clips to the box. The last
two steps together are a heuristic projection onto a non-convex set, so the
result is a stationary point, not a certified global minimizer.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .sampling import ObservationLog

log = logging.getLogger(__name__)

RANK_TOL = 1e-9


@dataclass(frozen=True)
class NuclearSolverConfig:
    rank_cap: int
    lam: float = 0.0
    entry_bound: float = 1.0
    step_size: float = 0.5
    max_iters: int = 2000
    rel_tol: float = 1e-7
    init: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.rank_cap < 1:
            raise ConfigError("rank_cap must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.entry_bound <= 0:
            raise ConfigError("entry_bound must be > 0")
        if not 0 < self.step_size <= 1:
            raise ConfigError("step_size must lie in (0, 1]")
        if self.rel_tol <= 0:
            raise ConfigError("rel_tol must be > 0")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")


@dataclass
class EstimatorReport:
    estimate: np.ndarray
    iterations: int
    final_objective: float
    lambda_used: float
    converged: bool
    rank_cap: int
    metrics: Optional[dict] = None
    objective_history: list = field(default_factory=list, repr=False)
    first_stage: Optional["EstimatorReport"] = field(default=None, repr=False)

    def diagnostics(self) -> dict:
        out = {
            "iterations": self.iterations,
            "final_objective": self.final_objective,
            "lambda": self.lambda_used,
            "converged": self.converged,
            "rank_cap": self.rank_cap,
        }
        if self.metrics is not None:
            out["metrics"] = self.metrics
        return out


def _svd(m: np.ndarray):
    if not np.all(np.isfinite(m)):
        raise NumericalError("SVD of a matrix with non-finite entries")
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from exc


def svt(m, tau: float) -> np.ndarray:
    """Singular value soft-thresholding, the prox of ``tau * ||.||_*``."""
    m = np.asarray(m, dtype=float)
    u, s, vt = _svd(m)
    return (u * np.maximum(s - tau, 0.0)) @ vt


def numerical_rank_ok(m: np.ndarray, rank_cap: int, tol: float = RANK_TOL) -> bool:
    s = np.linalg.svd(m, compute_uv=False)
    return len(s) <= rank_cap or s[0] == 0 or s[rank_cap] < tol * s[0]


def project_feasible(m, rank_cap: int, entry_bound: float) -> np.ndarray:
    """Truncate to the top ``rank_cap`` singular values, then clip to [-b, b].

    Clipping can lift the numerical rank; when it does, the clipped matrix is
    truncated again and scaled down uniformly into the box, which keeps both
    the rank cap and the bound exact.
    """
    u, s, vt = _svd(np.asarray(m, dtype=float))
    return _feasible(u, s, vt, rank_cap, entry_bound)[0]


def _feasible(u, s, vt, rank_cap, entry_bound):
    """Projection from an SVD; also returns the singular values when known."""
    k = min(rank_cap, len(s))
    low = (u[:, :k] * s[:k]) @ vt[:k]
    if np.abs(low).max(initial=0.0) <= entry_bound:
        return low, s[:k]
    clipped = np.clip(low, -entry_bound, entry_bound)
    if numerical_rank_ok(clipped, rank_cap):
        return clipped, None
    u, s, vt = _svd(clipped)
    low = (u[:, :k] * s[:k]) @ vt[:k]
    peak = np.abs(low).max()
    if peak > entry_bound:
        return low * (entry_bound / peak), s[:k] * (entry_bound / peak)
    return low, s[:k]


class _Loss:
    """(1/n) sum_t ||Y_t - X_t(theta)||^2 with its diagonal-Hessian gradient."""

    def __init__(self, obs: ObservationLog):
        self.n = obs.n
        self.rows = np.broadcast_to(np.arange(obs.n_workers), obs.assignments.shape)
        self.cols = obs.assignments
        self.y = obs.rewards
        self.counts, self.sums = obs.entry_stats()

    def value(self, theta: np.ndarray) -> float:
        r = theta[self.rows, self.cols] - self.y
        return float(np.sum(r * r) / self.n)

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return (2.0 / self.n) * (self.counts * theta - self.sums)


def objective(obs: ObservationLog, theta, lam: float) -> float:
    theta = np.asarray(theta, dtype=float)
    nuc = np.linalg.svd(theta, compute_uv=False).sum() if lam else 0.0
    return _Loss(obs).value(theta) + lam * nuc


def fit_nuclear(obs: ObservationLog, cfg: NuclearSolverConfig, truth=None) -> EstimatorReport:
    """Proximal-gradient fit of the rank-capped nuclear-norm program.

    Stops when the relative objective change drops below ``cfg.rel_tol`` or
    after ``cfg.max_iters`` iterations. A step that would raise the objective
    is retried with a halved step (the composite projection is not exact).
    """
    if obs.n == 0:
        raise DataError("cannot fit an empty observation log")
    shape = (obs.n_workers, obs.n_jobs)
    if cfg.rank_cap > min(shape):
        raise ConfigError(f"rank_cap {cfg.rank_cap} exceeds min(N, K) = {min(shape)}")
    loss = _Loss(obs)
    lam, b, r = cfg.lam, cfg.entry_bound, cfg.rank_cap

    def total(theta, s=None):
        if s is None:
            s = np.linalg.svd(theta, compute_uv=False) if lam else np.zeros(1)
        return loss.value(theta) + lam * float(s.sum())

    def step(theta, eta):
        u, s, vt = _svd(theta - eta * loss.grad(theta))
        return _feasible(u, np.maximum(s - eta * lam, 0.0), vt, r, b)

    if cfg.init is None:
        theta = np.zeros(shape)
    else:
        theta = np.asarray(cfg.init, dtype=float).copy()
        if theta.shape != shape:
            raise ConfigError(f"warm start has shape {theta.shape}, expected {shape}")
        theta = project_feasible(theta, r, b)
    current = total(theta)
    history = [current]
    converged = False
    it = 0
    while it < cfg.max_iters:
        it += 1
        eta = cfg.step_size
        for _ in range(40):
            cand, svals = step(theta, eta)
            value = total(cand, svals)
            if value <= current + 1e-12 * max(1.0, abs(current)):
                break
            eta *= 0.5
        else:
            converged = True
            break
        change = current - value
        theta, current = cand, value
        history.append(current)
        if abs(change) <= cfg.rel_tol * abs(history[-2]) or current == 0.0:
            converged = True
            break
    if not converged:
        log.info("nuclear fit hit max_iters=%d (objective %.6g)", cfg.max_iters, current)
    report = EstimatorReport(
        estimate=theta,
        iterations=it,
        final_objective=current,
        lambda_used=lam,
        converged=converged,
        rank_cap=r,
        objective_history=history,
    )
    if truth is not None:
        report.metrics = error_metrics(theta, truth)
    return report


def default_lambda(sigma, n_fit, n_workers, n_jobs, c_lambda=1e-3, alpha=None) -> float:
    """c_lambda * sigma * (alpha + ln(N + K)) / sqrt(n_fit); alpha defaults to ln(N + K)."""
    if n_fit < 1:
        raise ConfigError("n_fit must be >= 1")
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    logdim = math.log(n_workers + n_jobs)
    if alpha is None:
        alpha = logdim
    return c_lambda * sigma * (alpha + logdim) / math.sqrt(n_fit)


def fit_naive(obs: ObservationLog) -> np.ndarray:
    """Entry-wise sample mean; unobserved entries take the mean of their row."""
    counts, sums = obs.entry_stats()
    row_counts = counts.sum(axis=1, keepdims=True)
    if np.any(row_counts == 0):
        raise DataError("every worker needs at least one observation")
    row_means = sums.sum(axis=1, keepdims=True) / row_counts
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts
    return np.where(counts > 0, means, row_means)


def estimate_noise_sd(obs: ObservationLog) -> float:
    """Pooled within-entry standard deviation over entries seen at least twice."""
    counts, sums = obs.entry_stats()
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    rows = np.broadcast_to(np.arange(obs.n_workers), obs.assignments.shape)
    keep = counts[rows, obs.assignments] >= 2
    if not keep.any():
        return 1.0
    resid = (obs.rewards - means[rows, obs.assignments])[keep]
    dof = keep.sum() - np.count_nonzero(counts >= 2)
    return float(np.sqrt(np.sum(resid**2) / dof))


def error_metrics(estimate, truth) -> dict:
    est = np.asarray(estimate, dtype=float)
    ref = np.asarray(truth, dtype=float)
    if est.shape != ref.shape:
        raise DataError(f"estimate shape {est.shape} != truth shape {ref.shape}")
    delta = est - ref
    frob = float(np.linalg.norm(delta))
    inf = float(np.abs(delta).max())
    ref_frob = float(np.linalg.norm(ref))
    ref_inf = float(np.abs(ref).max())
    if ref_frob == 0:
        raise DataError("relative errors are undefined for a zero truth matrix")
    return {"frob": frob, "inf": inf, "rel_frob": frob / ref_frob, "rel_inf": inf / ref_inf}
