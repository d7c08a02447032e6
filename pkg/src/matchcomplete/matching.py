"""Value types for reward matrices and one-to-one matchings.

Indices are 0-based throughout: worker types are rows ``0..N-1`` and job
types are columns ``0..K-1``. A matching is stored as an assignment vector
``a`` with ``a[i]`` the job given to worker ``i``; the 0/1 matrix form is
built on demand by :meth:`Matching.to_matrix`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RewardMatrix:
    """Dense N x K reward matrix with an admissible magnitude cap."""

    entries: np.ndarray
    entry_bound: float = 1.0
    bounded: bool = False

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, copy=True)
        if a.ndim != 2 or 0 in a.shape:
            raise DataError(f"reward matrix must be a non-empty 2-d array, got shape {a.shape}")
        if a.shape[0] > a.shape[1]:
            raise DataError(f"need N <= K, got N={a.shape[0]} K={a.shape[1]}")
        if not np.all(np.isfinite(a)):
            raise DataError("reward matrix has non-finite entries")
        if self.entry_bound <= 0:
            raise DataError("entry_bound must be positive")
        if self.bounded and np.abs(a).max() > self.entry_bound:
            raise DataError(
                f"max |entry| {np.abs(a).max():.6g} exceeds entry_bound {self.entry_bound:.6g}"
            )
        object.__setattr__(self, "entries", _readonly(a))

    @property
    def n_workers(self) -> int:
        return self.entries.shape[0]

    @property
    def n_jobs(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


@dataclass(frozen=True)
class FactorPair:
    """Latent factors with ``left @ right.T`` giving an N x K matrix."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = _readonly(np.array(self.left, dtype=float, ndmin=2))
        right = _readonly(np.array(self.right, dtype=float, ndmin=2))
        if left.shape[1] != right.shape[1]:
            raise DataError("factor ranks disagree")
        if left.shape[1] > min(left.shape[0], right.shape[0]):
            raise DataError("factor rank exceeds min(N, K)")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def rank(self) -> int:
        return self.left.shape[1]

    def product(self) -> np.ndarray:
        return self.left @ self.right.T


@dataclass(frozen=True, eq=False)
class Matching:
    """Injective assignment of every worker type to a distinct job type."""

    assignment: np.ndarray = field()

    def __post_init__(self):
        a = np.array(self.assignment, dtype=np.int64, ndmin=1, copy=True)
        object.__setattr__(self, "assignment", _readonly(a))

    def __len__(self) -> int:
        return len(self.assignment)

    def __iter__(self):
        return iter(self.assignment.tolist())

    def __getitem__(self, i):
        return int(self.assignment[i])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Matching):
            return NotImplemented
        return np.array_equal(self.assignment, other.assignment)

    def __hash__(self) -> int:
        return hash(tuple(self.assignment.tolist()))

    def __repr__(self) -> str:
        return f"Matching({self.assignment.tolist()})"

    @property
    def n_workers(self) -> int:
        return len(self.assignment)

    def to_matrix(self, n_jobs: int) -> np.ndarray:
        x = np.zeros((len(self.assignment), n_jobs), dtype=np.int8)
        x[np.arange(len(self.assignment)), self.assignment] = 1
        return x

    @classmethod
    def from_matrix(cls, x) -> "Matching":
        x = np.asarray(x)
        if not np.all(x.sum(axis=1) == 1):
            raise DataError("every row of a matching matrix needs exactly one 1")
        return cls(np.argmax(x, axis=1))


@dataclass(frozen=True)
class MatchedObservation:
    t: int
    worker: int
    job: int
    reward: float


def validate_matching(m, n_workers: int, n_jobs: int) -> list[str]:
    """Return the list of violated matching constraints (empty when valid)."""
    a = np.asarray(m.assignment if isinstance(m, Matching) else m)
    violations = []
    if a.ndim != 1 or len(a) != n_workers:
        violations.append(f"assignment has length {a.size}, expected {n_workers}")
        a = a.ravel()
    bad = [int(j) for j in a if not 0 <= j < n_jobs]
    for j in bad:
        violations.append(f"job index out of range: {j} not in [0, {n_jobs})")
    values, counts = np.unique(a, return_counts=True)
    for j, c in zip(values, counts):
        if c > 1:
            violations.append(f"job {int(j)} assigned {'twice' if c == 2 else f'{c} times'}")
    return violations


def _check_shapes(m: Matching, theta: np.ndarray) -> np.ndarray:
    a = m.assignment if isinstance(m, Matching) else np.asarray(m, dtype=np.int64)
    if theta.ndim != 2 or len(a) != theta.shape[0]:
        raise DataError(
            f"matching covers {len(a)} workers but reward matrix has shape {theta.shape}"
        )
    if len(a) and (a.min() < 0 or a.max() >= theta.shape[1]):
        raise DataError("matching refers to a job outside the reward matrix")
    return a


def observe_operator(m: Matching, theta) -> np.ndarray:
    """Noiseless per-worker rewards of ``m``: ``theta[i, m[i]]`` for each i."""
    theta = np.asarray(theta, dtype=float)
    a = _check_shapes(m, theta)
    return theta[np.arange(len(a)), a]


def total_reward(m: Matching, theta) -> float:
    return float(observe_operator(m, theta).sum())


def compute_spikiness(theta) -> float:
    """sqrt(NK) * max|theta| / ||theta||_F; equals 1 for a flat matrix."""
    theta = np.asarray(theta, dtype=float)
    fro = np.linalg.norm(theta)
    if fro == 0:
        raise DataError("spikiness is undefined for the zero matrix")
    return float(np.sqrt(theta.size) * np.abs(theta).max() / fro)
