"""Double enhancement: sharpen a nuclear-norm estimate to entry-wise accuracy.

The first half of the matchings fits a rank-r nuclear estimate and fixes its
singular subspaces. The second half refits every row in the right subspace
and every column in the left subspace by small r-dimensional least squares,
then the two refits are glued together through the polar factor of the row
refit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .estimators import EstimatorReport, NuclearSolverConfig, error_metrics, fit_nuclear
from .sampling import ObservationLog


@dataclass(frozen=True)
class EnhanceConfig:
    nuclear: NuclearSolverConfig
    ridge_epsilon: float = 1e-8
    # columns with fewer than r second-half samples: "first_stage" reuses the
    # corresponding row of V_hat D_hat, "ridge" solves the ridge system anyway
    column_fallback: str = "first_stage"

    def __post_init__(self):
        if self.ridge_epsilon < 0:
            raise ConfigError("ridge_epsilon must be >= 0")
        if self.column_fallback not in ("first_stage", "ridge"):
            raise ConfigError(f"unknown column_fallback {self.column_fallback!r}")


def split_log(obs: ObservationLog) -> tuple[ObservationLog, ObservationLog]:
    """First floor(n/2) matchings, then the rest."""
    if obs.n < 2:
        raise DataError(f"double enhancement needs at least 2 matchings, got {obs.n}")
    n1 = obs.n // 2
    return obs.subset(slice(0, n1)), obs.subset(slice(n1, obs.n))


def least_squares_r(features, targets, ridge_epsilon: float = 0.0) -> np.ndarray:
    """Solve (F^T F + eps I) g = F^T y."""
    f = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if f.shape[0] == 0:
        raise DataError("least squares needs at least one sample")
    gram = f.T @ f + ridge_epsilon * np.eye(f.shape[1])
    return np.linalg.solve(gram, f.T @ y)


def _batched_solve(gram, rhs, eps):
    r = gram.shape[-1]
    return np.linalg.solve(gram + eps * np.eye(r), rhs[..., None])[..., 0]


def enhance_from_estimate(
    theta_hat,
    second: ObservationLog,
    rank: int,
    ridge_epsilon: float = 1e-8,
    column_fallback: str = "first_stage",
    factors=None,
):
    """Run the row and column refits against a fixed first-stage estimate.

    ``factors`` may supply ``(U_hat, V_hat)`` directly (orthonormal columns,
    N x r and K x r) instead of taking them from the SVD of ``theta_hat``.
    Returns ``(theta_tilde, U_tilde, V_tilde)``.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    n_workers, n_jobs = theta_hat.shape
    if factors is None:
        u, s, vt = np.linalg.svd(theta_hat, full_matrices=False)
        u_hat, d_hat, v_hat = u[:, :rank], s[:rank], vt[:rank].T
    else:
        u_hat, v_hat = (np.asarray(f, dtype=float) for f in factors)
        d_hat = np.diag(u_hat.T @ theta_hat @ v_hat)
    a, y = second.assignments, second.rewards

    # rows: y_t(i) ~ V_hat[j_t(i)] . beta_i over t in the second half
    feats = v_hat[a]  # (n2, N, r)
    row_gram = np.einsum("tir,tis->irs", feats, feats)
    row_rhs = np.einsum("tir,ti->ir", feats, y)
    u_tilde = _batched_solve(row_gram, row_rhs, ridge_epsilon)

    # columns: y_t(i) ~ U_hat[i] . alpha_j over pairs (t, i) with j_t(i) = j
    cols = a.ravel()
    ufeat = np.broadcast_to(u_hat, (second.n, n_workers, rank)).reshape(-1, rank)
    col_gram = np.zeros((n_jobs, rank, rank))
    col_rhs = np.zeros((n_jobs, rank))
    np.add.at(col_gram, cols, ufeat[:, :, None] * ufeat[:, None, :])
    np.add.at(col_rhs, cols, ufeat * y.ravel()[:, None])
    v_tilde = _batched_solve(col_gram, col_rhs, ridge_epsilon)
    if column_fallback == "first_stage":
        starved = np.bincount(cols, minlength=n_jobs) < rank
        v_tilde[starved] = (v_hat * d_hat)[starved]

    left, _, q = np.linalg.svd(u_tilde, full_matrices=False)
    theta_tilde = left @ q @ v_tilde.T
    return theta_tilde, u_tilde, v_tilde


def double_enhance(obs: ObservationLog, cfg: EnhanceConfig, truth=None) -> EstimatorReport:
    """Split, fit the first half, refit rows and columns on the second half.

    The returned estimate is not clipped; its rank is at most r by
    construction. ``first_stage`` on the report holds the nuclear fit.
    """
    first, second = split_log(obs)
    stage1 = fit_nuclear(first, cfg.nuclear, truth=truth)
    theta_tilde, _, _ = enhance_from_estimate(
        stage1.estimate,
        second,
        cfg.nuclear.rank_cap,
        cfg.ridge_epsilon,
        cfg.column_fallback,
    )
    report = EstimatorReport(
        estimate=theta_tilde,
        iterations=stage1.iterations,
        final_objective=stage1.final_objective,
        lambda_used=stage1.lambda_used,
        converged=stage1.converged,
        rank_cap=cfg.nuclear.rank_cap,
        first_stage=stage1,
    )
    if truth is not None:
        report.metrics = error_metrics(theta_tilde, truth)
    return report
