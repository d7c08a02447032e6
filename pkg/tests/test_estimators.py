import math
from collections import defaultdict

import numpy as np
import pytest

from matchcomplete.errors import ConfigError, DataError, NumericalError
from matchcomplete.estimators import (
    NuclearSolverConfig,
    default_lambda,
    error_metrics,
    estimate_noise_sd,
    fit_naive,
    fit_nuclear,
    objective,
    project_feasible,
    svt,
)
from matchcomplete.rng import RandomSource
from matchcomplete.sampling import ObservationLog, generate_synthetic_truth, simulate_observations


def cyclic_log(theta):
    """n = K cyclic-shift matchings of a square matrix; every entry observed once."""
    n = theta.shape[0]
    a = np.array([(np.arange(n) + s) % n for s in range(n)])
    y = theta[np.arange(n), a]
    return ObservationLog(n, n, a, y, 0.0)


def numerical_rank_within(m, r, tol=1e-9):
    s = np.linalg.svd(m, compute_uv=False)
    return len(s) <= r or s[0] == 0 or s[r] < tol * s[0]


# ------------------------------------------------------------ svt


def test_svt_diagonal():
    np.testing.assert_allclose(svt([[3, 0], [0, 1]], 1.0), [[2, 0], [0, 0]], atol=1e-12)


def test_svt_zero_tau_identity():
    m = np.random.default_rng(0).normal(size=(4, 6))
    np.testing.assert_allclose(svt(m, 0.0), m, atol=1e-12)


def test_svt_antidiagonal():
    np.testing.assert_allclose(svt([[0, 2], [2, 0]], 1.0), [[0, 1], [1, 0]], atol=1e-12)


def test_svt_singular_values_property():
    rng = np.random.default_rng(1)
    for _ in range(50):
        m = rng.normal(size=(5, 7))
        tau = rng.uniform(0, 2)
        got = np.linalg.svd(svt(m, tau), compute_uv=False)
        want = np.maximum(np.linalg.svd(m, compute_uv=False) - tau, 0)
        np.testing.assert_allclose(got, want, atol=1e-10)


def test_svt_non_finite():
    with pytest.raises(NumericalError):
        svt([[np.inf, 0], [0, 1]], 1.0)


# ------------------------------------------------------------ projection


def test_project_rank_one_unchanged():
    m = np.outer([1.0, 2.0, -1.0], [0.5, 1.0, 3.0])
    np.testing.assert_allclose(project_feasible(m, 1, 100.0), m, atol=1e-10)


def test_project_clips():
    np.testing.assert_allclose(project_feasible([[2.0]], 1, 1.0), [[1.0]])


def test_project_keeps_top_singular_value():
    np.testing.assert_allclose(project_feasible(np.diag([3.0, 1.0]), 1, 5.0), [[3, 0], [0, 0]], atol=1e-12)


def test_project_always_feasible():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n, k = rng.integers(2, 7, size=2)
        n, k = min(n, k), max(n, k)
        r = int(rng.integers(1, n + 1))
        b = float(rng.uniform(0.1, 2.0))
        out = project_feasible(rng.normal(scale=2.0, size=(n, k)), r, b)
        assert np.abs(out).max() <= b + 1e-12
        assert numerical_rank_within(out, r)


# ------------------------------------------------------------ solver


def test_exact_recovery_cyclic():
    theta = np.outer([0.3, 0.8, 0.5], [0.9, 0.2, 0.6])
    rep = fit_nuclear(cyclic_log(theta), NuclearSolverConfig(rank_cap=1, lam=1e-6))
    assert error_metrics(rep.estimate, theta)["rel_frob"] <= 1e-3


def test_large_lambda_gives_zero():
    truth, _ = generate_synthetic_truth(3, 4, 1, RandomSource(0))
    log = simulate_observations(truth, 5, 0.1, RandomSource(1))
    b = truth.entry_bound
    rep = fit_nuclear(log, NuclearSolverConfig(rank_cap=1, lam=10 * log.n * 3 * b, entry_bound=b))
    np.testing.assert_array_equal(rep.estimate, 0.0)


def test_single_scalar_observation():
    # one worker, one matching: only entry (0, 0) is observed
    log = ObservationLog(1, 2, [[0]], [[0.5]])
    rep = fit_nuclear(log, NuclearSolverConfig(rank_cap=1, lam=0.0))
    assert rep.estimate[0, 0] == pytest.approx(0.5, abs=1e-6)
    assert rep.estimate[0, 1] == 0.0


def test_single_matching_two_workers():
    log = ObservationLog(2, 2, [[0, 1]], [[0.5, 0.0]])
    rep = fit_nuclear(log, NuclearSolverConfig(rank_cap=1, lam=0.0))
    np.testing.assert_allclose(rep.estimate, [[0.5, 0], [0, 0]], atol=1e-6)


def _random_problem(seed, sigma=0.3):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 8))
    k = int(rng.integers(n, 10))
    r = int(rng.integers(1, min(3, n) + 1))
    truth, _ = generate_synthetic_truth(n, k, r, RandomSource(seed))
    log = simulate_observations(truth, int(rng.integers(2, 15)), sigma, RandomSource(seed, 1))
    lam = float(rng.choice([0.0, 1e-3, 0.05]))
    return truth, log, NuclearSolverConfig(rank_cap=r, lam=lam, entry_bound=truth.entry_bound)


@pytest.mark.parametrize("seed", range(20))
def test_monotone_descent_and_feasibility(seed):
    truth, log, cfg = _random_problem(seed)
    rep = fit_nuclear(log, cfg)
    hist = np.array(rep.objective_history)
    assert np.all(np.diff(hist) <= 1e-10)
    assert np.abs(rep.estimate).max() <= cfg.entry_bound + 1e-12
    assert numerical_rank_within(rep.estimate, cfg.rank_cap)
    assert rep.final_objective <= objective(log, np.zeros(rep.estimate.shape), cfg.lam) + 1e-12
    assert rep.final_objective == pytest.approx(objective(log, rep.estimate, cfg.lam), rel=1e-9, abs=1e-12)


def test_max_iters_reports_nonconvergence():
    truth, log, cfg = _random_problem(3)
    rep = fit_nuclear(log, NuclearSolverConfig(rank_cap=cfg.rank_cap, lam=0.0, entry_bound=cfg.entry_bound, max_iters=1))
    assert rep.iterations == 1 and rep.converged is False


def test_warm_start_at_truth_stays_near_truth():
    theta = np.outer([0.3, 0.8, 0.5], [0.9, 0.2, 0.6])
    rep = fit_nuclear(cyclic_log(theta), NuclearSolverConfig(rank_cap=1, lam=0.0, init=theta))
    np.testing.assert_allclose(rep.estimate, theta, atol=1e-12)


def test_metrics_attached_with_truth():
    truth, log, cfg = _random_problem(4)
    rep = fit_nuclear(log, cfg, truth=truth)
    assert set(rep.metrics) == {"frob", "inf", "rel_frob", "rel_inf"}
    assert rep.diagnostics()["metrics"] == rep.metrics


def test_config_validation():
    with pytest.raises(ConfigError):
        NuclearSolverConfig(rank_cap=0)
    with pytest.raises(ConfigError):
        NuclearSolverConfig(rank_cap=1, step_size=1.5)
    with pytest.raises(ConfigError):
        NuclearSolverConfig(rank_cap=1, rel_tol=0)
    with pytest.raises(ConfigError):
        NuclearSolverConfig(rank_cap=1, lam=-1)


def test_empty_log_rejected():
    with pytest.raises(DataError):
        fit_nuclear(ObservationLog.empty(2, 2), NuclearSolverConfig(rank_cap=1))


def test_rank_cap_above_dimension_rejected():
    with pytest.raises(ConfigError):
        fit_nuclear(ObservationLog(1, 2, [[0]], [[0.5]]), NuclearSolverConfig(rank_cap=2))


# ------------------------------------------------------------ lambda


def test_default_lambda_example():
    lam = default_lambda(math.sqrt(0.1), 50, 100, 100, 1e-3, alpha=math.log(200))
    assert lam == pytest.approx(4.74e-4, rel=1e-3)
    assert default_lambda(math.sqrt(0.1), 50, 100, 100, 1e-3) == lam


def test_default_lambda_zero_sigma_and_scaling():
    assert default_lambda(0.0, 10, 3, 4) == 0.0
    a = default_lambda(0.5, 10, 3, 4, 0.01)
    b = default_lambda(0.5, 20, 3, 4, 0.01)
    assert b == pytest.approx(a / math.sqrt(2), rel=1e-15)


# ------------------------------------------------------------ naive


def test_naive_mean_with_row_imputation():
    log = ObservationLog(1, 2, [[0], [0]], [[0.5], [0.7]])
    np.testing.assert_allclose(fit_naive(log), [[0.6, 0.6]])


def test_naive_noiseless_full_coverage():
    theta = np.random.default_rng(3).uniform(size=(4, 4))
    np.testing.assert_array_equal(fit_naive(cyclic_log(theta)), theta)


def test_naive_single_matching():
    log = ObservationLog(2, 2, [[0, 1]], [[1.0, 0.0]])
    np.testing.assert_array_equal(fit_naive(log), [[1, 1], [0, 0]])


def test_naive_against_dict_accumulator():
    truth, _ = generate_synthetic_truth(4, 4, 2, RandomSource(8))
    log = simulate_observations(truth, 60, 0.5, RandomSource(9))
    acc = defaultdict(list)
    for t, i, j, y in log.records():
        acc[(i, j)].append(y)
    assert len(acc) == 16
    est = fit_naive(log)
    for (i, j), ys in acc.items():
        assert est[i, j] == pytest.approx(sum(ys) / len(ys), rel=1e-14, abs=1e-15)


def test_noise_sd_estimate():
    truth, _ = generate_synthetic_truth(3, 3, 1, RandomSource(1))
    log = simulate_observations(truth, 2000, 0.4, RandomSource(2))
    assert estimate_noise_sd(log) == pytest.approx(0.4, rel=0.05)
    assert estimate_noise_sd(ObservationLog(2, 2, [[0, 1]], [[1.0, 0.0]])) == 1.0


# ------------------------------------------------------------ metrics


def test_error_metric_examples():
    theta = np.eye(2)
    assert error_metrics(theta, theta) == {"frob": 0.0, "inf": 0.0, "rel_frob": 0.0, "rel_inf": 0.0}
    m = error_metrics(theta + np.array([[0.3, 0], [0, -0.4]]), theta)
    assert m["frob"] == pytest.approx(0.5) and m["inf"] == pytest.approx(0.4)
    z = error_metrics(np.zeros((2, 2)), theta)
    assert z["rel_frob"] == 1.0 and z["rel_inf"] == 1.0
    with pytest.raises(DataError):
        error_metrics(theta, np.zeros((2, 2)))
