"""Exact matching oracles: max-weight assignment and worker-proposing deferred acceptance.

``max_weight_matching`` pads the N x K reward matrix to K x K with constant
rows, runs a shortest-augmenting-path Hungarian method on the negated
matrix, and then uses the optimal dual to move to the lexicographically
smallest optimal assignment, so the result does not depend on the order in
which the solver happened to discover ties.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .matching import Matching, total_reward

BRUTE_FORCE_MAX_JOBS = 8


def _hungarian_min(cost: np.ndarray):
    """Min-cost perfect assignment of an n x m cost matrix (n <= m).

    Returns ``(row_to_col, u, v)`` with reduced costs ``cost - u[:,None] - v``
    non-negative and zero on the assignment.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j]: 1-based row holding column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            row_to_col[owner[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _augment(k, tight, row_to_col, col_to_row, locked, target, seen):
    """Kuhn-style search for an alternating path that rehomes row ``k`` and
    ends at column ``target``."""
    for j in np.flatnonzero(tight[k]):
        if seen[j]:
            continue
        seen[j] = True
        if j == target:
            row_to_col[k], col_to_row[j] = j, k
            return True
        k2 = col_to_row[j]
        if locked[k2]:
            continue
        if _augment(k2, tight, row_to_col, col_to_row, locked, target, seen):
            row_to_col[k], col_to_row[j] = j, k
            return True
    return False


def _lexicographic_optimum(tight, row_to_col, n_real):
    """Walk to the lexicographically smallest perfect matching of the equality graph."""
    size = len(row_to_col)
    row_to_col = row_to_col.copy()
    col_to_row = np.empty(size, dtype=np.int64)
    col_to_row[row_to_col] = np.arange(size)
    locked = np.zeros(size, dtype=bool)
    for i in range(n_real):
        for j in np.flatnonzero(tight[i, : row_to_col[i]]):
            k = col_to_row[j]
            if locked[k]:
                continue
            old = row_to_col[i]
            trial_r, trial_c = row_to_col.copy(), col_to_row.copy()
            trial_r[i], trial_c[j] = j, i
            locked[i] = True
            seen = np.zeros(size, dtype=bool)
            seen[j] = True
            if _augment(k, tight, trial_r, trial_c, locked, old, seen):
                row_to_col, col_to_row = trial_r, trial_c
                break
            locked[i] = False
        locked[i] = True
    return row_to_col


def max_weight_matching(theta) -> Matching:
    """Maximum total reward matching; lexicographically smallest among ties."""
    w = np.asarray(theta, dtype=float)
    if w.ndim != 2:
        raise DataError("reward matrix must be 2-d")
    n, k = w.shape
    if n > k:
        raise DataError(f"need N <= K, got N={n} K={k}")
    if not np.all(np.isfinite(w)):
        raise DataError("reward matrix has non-finite entries")
    lo, hi = w.min(), w.max()
    padded = np.vstack([w, np.full((k - n, k), lo - 1.0 - (hi - lo))])
    cost = -padded
    row_to_col, u, v = _hungarian_min(cost)
    reduced = cost - u[:, None] - v[None, :]
    tol = 1e-10 * k * max(hi - lo, np.abs(w).max(), 1e-300)
    tight = reduced <= tol
    tight[np.arange(k), row_to_col] = True
    best = _lexicographic_optimum(tight, row_to_col, n)
    return Matching(best[:n])


@dataclass(frozen=True)
class PreferenceProfile:
    """Worker values (rows rank jobs) and job values (columns rank workers)."""

    worker_values: np.ndarray
    job_values: np.ndarray

    def __post_init__(self):
        theta = np.array(self.worker_values, dtype=float)
        phi = np.array(self.job_values, dtype=float)
        if theta.shape != phi.shape or theta.ndim != 2:
            raise DataError(f"profile shapes differ: {theta.shape} vs {phi.shape}")
        if theta.shape[0] > theta.shape[1]:
            raise DataError("need N <= K")
        object.__setattr__(self, "worker_values", theta)
        object.__setattr__(self, "job_values", phi)

    @property
    def shape(self):
        return self.worker_values.shape

    def find_tie(self):
        """Return a description of the first tie, or None for strict preferences."""
        for i, row in enumerate(self.worker_values):
            if len(np.unique(row)) < len(row):
                return f"worker {i} has tied job values"
        for j, col in enumerate(self.job_values.T):
            if len(np.unique(col)) < len(col):
                return f"job {j} has tied worker values"
        return None

    def worker_ranks(self) -> np.ndarray:
        """rank[i, j] = position of job j in worker i's list (0 = favourite)."""
        order = np.lexsort((np.broadcast_to(np.arange(self.shape[1]), self.shape), -self.worker_values), axis=1)
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.arange(self.shape[1])[None, :], axis=1)
        return ranks

    def job_ranks(self) -> np.ndarray:
        """rank[i, j] = position of worker i in job j's list (0 = favourite)."""
        phi_t = self.job_values.T
        idx = np.broadcast_to(np.arange(self.shape[0]), phi_t.shape)
        order = np.lexsort((idx, -phi_t), axis=1)
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.arange(self.shape[0])[None, :], axis=1)
        return ranks.T


def _profile(profile_or_theta, phi=None) -> PreferenceProfile:
    if isinstance(profile_or_theta, PreferenceProfile):
        return profile_or_theta
    return PreferenceProfile(profile_or_theta, phi)


def gale_shapley(profile, phi=None, strict: bool = True) -> Matching:
    """Worker-proposing deferred acceptance.

    With ``strict=True`` a tie in any worker row or job column raises
    ``DataError``; otherwise ties go to the lower job index (workers) and the
    lower worker index (jobs).
    """
    p = _profile(profile, phi)
    if strict:
        tie = p.find_tie()
        if tie:
            raise DataError(f"preferences are not strict: {tie}")
    n, k = p.shape
    prefs = np.argsort(p.worker_ranks(), axis=1)  # prefs[i] = jobs, best first
    job_rank = p.job_ranks()
    next_choice = [0] * n
    holder = [-1] * k
    free = list(range(n - 1, -1, -1))
    while free:
        i = free.pop()
        j = int(prefs[i, next_choice[i]])
        next_choice[i] += 1
        cur = holder[j]
        if cur < 0:
            holder[j] = i
        elif job_rank[i, j] < job_rank[cur, j]:
            holder[j] = i
            free.append(cur)
        else:
            free.append(i)
    assignment = np.empty(n, dtype=np.int64)
    for j, i in enumerate(holder):
        if i >= 0:
            assignment[i] = j
    return Matching(assignment)


def blocking_pairs(m: Matching, profile, phi=None) -> list[tuple[int, int]]:
    """All (i, j) where worker i prefers j to its match and j would accept i."""
    p = _profile(profile, phi)
    n, k = p.shape
    wr, jr = p.worker_ranks(), p.job_ranks()
    a = np.asarray(m.assignment)
    holder = np.full(k, -1)
    holder[a] = np.arange(n)
    pairs = []
    for i in range(n):
        for j in np.flatnonzero(wr[i] < wr[i, a[i]]):
            h = holder[j]
            if h < 0 or jr[i, j] < jr[h, j]:
                pairs.append((i, int(j)))
    return pairs


def _injections(n, k):
    if k > BRUTE_FORCE_MAX_JOBS:
        raise ConfigError(f"brute force enumeration is limited to K <= {BRUTE_FORCE_MAX_JOBS}")
    return itertools.permutations(range(k), n)


def brute_force_optimal(theta) -> Matching:
    """Exhaustive max-weight matching; first (lexicographically smallest) optimum wins."""
    w = np.asarray(theta, dtype=float)
    best, best_val = None, -np.inf
    rows = np.arange(w.shape[0])
    for perm in _injections(*w.shape):
        val = w[rows, perm].sum()
        if val > best_val:
            best, best_val = perm, val
    return Matching(best)


def all_stable_matchings(profile, phi=None) -> list[Matching]:
    p = _profile(profile, phi)
    out = []
    for perm in _injections(*p.shape):
        m = Matching(perm)
        if not blocking_pairs(m, p):
            out.append(m)
    return out


def brute_force_stable_worker_optimal(profile, phi=None) -> Matching:
    """Enumerate stable matchings and return the one every worker likes best."""
    p = _profile(profile, phi)
    stable = all_stable_matchings(p)
    if not stable:
        raise DataError("no stable matching found")
    wr = p.worker_ranks()
    rows = np.arange(p.shape[0])
    ranks = np.array([wr[rows, s.assignment] for s in stable])
    best = ranks.min(axis=0)
    for s, r in zip(stable, ranks):
        if np.array_equal(r, best):
            return s
    raise DataError("stable matchings have no common worker-optimal element")


def optimal_value(theta) -> float:
    return total_reward(max_weight_matching(theta), theta)
