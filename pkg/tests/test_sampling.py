import itertools

import numpy as np
import pytest
from scipy import stats

from matchcomplete.errors import DataError
from matchcomplete.matching import Matching, RewardMatrix, validate_matching
from matchcomplete.rng import RandomSource, stream_for
from matchcomplete.sampling import (
    ObservationLog,
    generate_synthetic_truth,
    load_log,
    load_matching,
    load_matrix,
    sample_uniform_matching,
    save_log,
    save_matching,
    save_matrix,
    simulate_observations,
)


def test_single_matching_always_zero():
    gen = RandomSource(1).generator()
    assert all(sample_uniform_matching(1, 1, gen) == Matching([0]) for _ in range(20))


def _chi_square_uniform(n_workers, n_jobs, draws, seed):
    gen = RandomSource(seed).generator()
    cells = list(itertools.permutations(range(n_jobs), n_workers))
    index = {c: i for i, c in enumerate(cells)}
    counts = np.zeros(len(cells))
    for _ in range(draws):
        counts[index[tuple(sample_uniform_matching(n_workers, n_jobs, gen))]] += 1
    return counts / draws, stats.chisquare(counts).pvalue


def test_uniform_2x2():
    freq, p = _chi_square_uniform(2, 2, 10_000, 11)
    assert np.all(np.abs(freq - 0.5) <= 0.02)
    assert p > 0.01


def test_uniform_2x3():
    freq, p = _chi_square_uniform(2, 3, 60_000, 12)
    assert len(freq) == 6
    assert np.all(np.abs(freq - 1 / 6) <= 0.01)
    assert p > 0.01


def test_pair_frequencies_4x4():
    n = 100_000
    gen = RandomSource(5).generator()
    counts = np.zeros((4, 4))
    for _ in range(n):
        counts[np.arange(4), gen.permutation(4)] += 1
    freq = counts / n
    se = np.sqrt(0.25 * 0.75 / n)
    assert np.all(np.abs(freq - 0.25) <= 3 * se)


def test_sampler_rejects_more_workers_than_jobs():
    with pytest.raises(DataError):
        sample_uniform_matching(3, 2, 0)


def test_synthetic_truth_rank_and_bounds():
    truth, factors = generate_synthetic_truth(100, 100, 3, RandomSource(0))
    s = np.linalg.svd(truth.entries, compute_uv=False)
    assert s[3] < 1e-10 * s[0] and s[2] > 1e-6 * s[0]
    assert truth.entry_bound == 3.0
    assert truth.entries.min() >= 0 and truth.entries.max() <= 3
    np.testing.assert_array_equal(factors.product(), truth.entries)


def test_synthetic_truth_full_rank_small():
    truth, _ = generate_synthetic_truth(2, 2, 2, RandomSource(3))
    assert np.linalg.matrix_rank(truth.entries) == 2


def test_synthetic_truth_deterministic():
    a, _ = generate_synthetic_truth(10, 12, 2, RandomSource(42))
    b, _ = generate_synthetic_truth(10, 12, 2, RandomSource(42))
    assert a.entries.tobytes() == b.entries.tobytes()


def test_streams_are_distinct():
    draws = {RandomSource(9, s).generator().random(64).tobytes() for s in range(50)}
    assert len(draws) == 50
    assert stream_for(0, 1) != stream_for(1, 0)


def test_noiseless_rewards_equal_truth():
    truth, _ = generate_synthetic_truth(4, 6, 2, RandomSource(1))
    log = simulate_observations(truth, 15, 0.0, RandomSource(2))
    for t, i, j, y in log.records():
        assert y == truth.entries[i, j]


def test_record_count():
    truth, _ = generate_synthetic_truth(3, 5, 1, RandomSource(1))
    log = simulate_observations(truth, 20, 0.1, RandomSource(2))
    assert len(list(log.records())) == 60


def test_noise_sd_recovered():
    truth, _ = generate_synthetic_truth(3, 3, 1, RandomSource(1))
    log = simulate_observations(truth, 10_000, np.sqrt(0.1), RandomSource(2))
    rows = np.arange(3)
    resid = log.rewards - truth.entries[rows, log.assignments]
    assert 0.31 <= resid.std(ddof=1) <= 0.325


def test_every_log_satisfies_interference():
    truth, _ = generate_synthetic_truth(5, 8, 2, RandomSource(1))
    log = simulate_observations(truth, 50, 0.3, RandomSource(2))
    for a in log.assignments:
        assert validate_matching(a, 5, 8) == []
        assert len(set(a.tolist())) == 5


def test_custom_sampler_and_noise_hook():
    truth = np.arange(6, dtype=float).reshape(2, 3)

    def fixed(n, k, gen):
        return Matching([2, 0])

    def shared(gen, n):
        return np.full(n, 1.0)

    log = simulate_observations(truth, 3, 0.5, 0, sampler=fixed, noise=shared)
    np.testing.assert_array_equal(log.rewards, np.tile([3.0, 4.0], (3, 1)))


def test_log_round_trip(tmp_path):
    truth, _ = generate_synthetic_truth(4, 6, 2, RandomSource(1))
    log = simulate_observations(truth, 12, 0.3, RandomSource(2))
    path = tmp_path / "log.csv"
    save_log(log, path)
    back = load_log(path)
    assert back == log


def test_empty_log_round_trip(tmp_path):
    path = tmp_path / "empty.csv"
    save_log(ObservationLog.empty(3, 4), path)
    back = load_log(path)
    assert back.n == 0 and back.n_workers == 3 and back.n_jobs == 4


def test_load_rejects_duplicate_job(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,i,j,y\n0,0,1,0.5\n0,1,1,0.2\n")
    with pytest.raises(DataError, match="matching interference violated at t=0"):
        load_log(path)


def test_load_reports_line_number(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,i,j,y\n0,0,1,0.5\n0,1,x,0.2\n")
    with pytest.raises(DataError, match="line 3"):
        load_log(path)


def test_matrix_and_matching_round_trip(tmp_path):
    theta = np.random.default_rng(0).normal(size=(3, 5))
    save_matrix(theta, tmp_path / "m.csv")
    back = load_matrix(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.entries, theta)
    m = Matching([4, 0, 2])
    save_matching(m, tmp_path / "x.csv")
    assert load_matching(tmp_path / "x.csv") == m


def test_matrix_header_mismatch(tmp_path):
    (tmp_path / "m.csv").write_text("# N=2 K=2\n1,2,3\n4,5,6\n")
    with pytest.raises(DataError):
        load_matrix(tmp_path / "m.csv")


def test_log_append_and_subset():
    log = ObservationLog.empty(2, 3)
    log = log.append(Matching([0, 2]), [1.0, 2.0]).append(Matching([1, 0]), [3.0, 4.0])
    assert log.n == 2
    assert log.subset(slice(1, 2)).matchings == [Matching([1, 0])]
    counts, sums = log.entry_stats()
    assert counts.sum() == 4 and sums[1, 2] == 2.0


def test_reward_matrix_from_truth_accepted():
    truth = RewardMatrix([[0.1, 0.2]], entry_bound=1.0)
    log = simulate_observations(truth, 2, 0.0, 0)
    assert log.n == 2
