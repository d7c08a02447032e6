import numpy as np
import pytest
from scipy.stats import ortho_group

from matchcomplete.enhancement import (
    EnhanceConfig,
    double_enhance,
    enhance_from_estimate,
    least_squares_r,
    split_log,
)
from matchcomplete.errors import ConfigError, DataError
from matchcomplete.estimators import NuclearSolverConfig
from matchcomplete.rng import RandomSource
from matchcomplete.sampling import ObservationLog, generate_synthetic_truth, simulate_observations


def _log(n, seed=0, shape=(4, 5), rank=2, sigma=0.2):
    truth, _ = generate_synthetic_truth(*shape, rank, RandomSource(seed))
    return truth, simulate_observations(truth, n, sigma, RandomSource(seed, 1))


@pytest.mark.parametrize("n, n1, n2", [(4, 2, 2), (5, 2, 3), (2, 1, 1)])
def test_split_sizes(n, n1, n2):
    _, log = _log(n)
    first, second = split_log(log)
    assert (first.n, second.n) == (n1, n2)
    np.testing.assert_array_equal(np.vstack([first.assignments, second.assignments]), log.assignments)


def test_split_needs_two():
    _, log = _log(1)
    with pytest.raises(DataError):
        split_log(log)


def test_least_squares_examples():
    np.testing.assert_allclose(least_squares_r([[1, 0], [0, 1]], [2, 3]), [2, 3])
    np.testing.assert_allclose(least_squares_r([[1, 1]], [2], 1e-8), [1, 1], atol=1e-6)
    np.testing.assert_array_equal(least_squares_r([[1, 2], [3, 1]], [0, 0], 1e-8), [0, 0])


def test_least_squares_matches_lstsq():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    np.testing.assert_allclose(least_squares_r(f, y), np.linalg.lstsq(f, y, rcond=None)[0], atol=1e-10)


def test_ideal_case_recovers_truth():
    theta = np.outer([0.4, 0.9, 0.7], [0.8, 0.3, 0.6])
    truth, log = None, simulate_observations(theta, 4, 0.0, RandomSource(5))
    cfg = EnhanceConfig(NuclearSolverConfig(rank_cap=1, lam=0.0, init=theta))
    rep = double_enhance(log, cfg, truth=theta)
    assert rep.first_stage.converged
    np.testing.assert_allclose(rep.first_stage.estimate, theta, atol=1e-12)
    np.testing.assert_allclose(rep.estimate, theta, atol=1e-6)


def test_noiseless_idempotence_rank_two():
    truth, log = _log(20, seed=3, shape=(6, 8), rank=2, sigma=0.0)
    theta = truth.entries
    _, second = split_log(log)
    est, u_t, v_t = enhance_from_estimate(theta, second, 2, ridge_epsilon=0.0)
    assert np.abs(est - theta).max() <= 1e-8
    # in the first-stage coordinates the refits are theta V_hat and theta^T U_hat
    u, _, vt = np.linalg.svd(theta, full_matrices=False)
    np.testing.assert_allclose(u_t, theta @ vt[:2].T, atol=1e-8)
    np.testing.assert_allclose(v_t, theta.T @ u[:, :2], atol=1e-8)


def test_minimal_split_smoke():
    truth, log = _log(2, seed=4)
    rep = double_enhance(log, EnhanceConfig(NuclearSolverConfig(rank_cap=2, entry_bound=2.0)), truth=truth)
    assert np.all(np.isfinite(rep.estimate))
    s = np.linalg.svd(rep.estimate, compute_uv=False)
    assert s[2] < 1e-9 * s[0]


@pytest.mark.parametrize("seed", range(10))
def test_construction_rank(seed):
    truth, log = _log(12, seed=seed, shape=(6, 9), rank=2, sigma=0.5)
    rep = double_enhance(log, EnhanceConfig(NuclearSolverConfig(rank_cap=2, lam=1e-3, entry_bound=2.0)))
    s = np.linalg.svd(rep.estimate, compute_uv=False)
    assert s[2] < 1e-9 * s[0]


@pytest.mark.parametrize("seed", range(5))
def test_joint_rotation_invariance(seed):
    truth, log = _log(16, seed=seed, shape=(5, 7), rank=2, sigma=0.3)
    first, second = split_log(log)
    theta_hat = truth.entries + 0.05 * np.random.default_rng(seed).normal(size=truth.shape)
    u, s, vt = np.linalg.svd(theta_hat, full_matrices=False)
    u_hat, v_hat = u[:, :2], vt[:2].T
    rot = ortho_group.rvs(2, random_state=seed)
    base, _, _ = enhance_from_estimate(theta_hat, second, 2, column_fallback="ridge", factors=(u_hat, v_hat))
    turned, _, _ = enhance_from_estimate(
        theta_hat, second, 2, column_fallback="ridge", factors=(u_hat @ rot, v_hat @ rot)
    )
    np.testing.assert_allclose(turned, base, atol=1e-8)


def test_column_fallback_uses_first_stage_row():
    # one matching in the second half: each used column gets one sample, others none
    theta = np.outer([0.5, 0.9], [0.2, 0.4, 0.8, 0.6])
    second = ObservationLog(2, 4, [[0, 1]], [[0.1, 0.36]])
    u, s, vt = np.linalg.svd(theta, full_matrices=False)
    _, _, v_t = enhance_from_estimate(theta, second, 2, column_fallback="first_stage")
    vd = (vt[:2].T * s[:2])
    # with r=2 every column has fewer than 2 samples
    np.testing.assert_allclose(v_t, vd, atol=1e-12)


def test_every_worker_covered_in_second_half():
    _, log = _log(9)
    _, second = split_log(log)
    counts, _ = second.entry_stats()
    np.testing.assert_array_equal(counts.sum(axis=1), second.n)


def test_config_validation():
    nuc = NuclearSolverConfig(rank_cap=1)
    with pytest.raises(ConfigError):
        EnhanceConfig(nuc, ridge_epsilon=-1)
    with pytest.raises(ConfigError):
        EnhanceConfig(nuc, column_fallback="zero")
