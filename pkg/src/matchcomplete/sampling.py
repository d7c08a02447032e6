"""Matching-interference sampling, synthetic truth, and observation logs.

An :class:`ObservationLog` holds ``n`` matchings and, for each, the ``N``
noisy rewards of its matched pairs. Within one matching every worker appears
once and no job appears twice, which is the dependence structure the
estimators are built around.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DataError
from .matching import FactorPair, Matching, RewardMatrix, validate_matching
from .rng import as_generator

Sampler = Callable[[int, int, np.random.Generator], Matching]
NoiseHook = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True, eq=False)
class ObservationLog:
    """Ordered matchings with per-pair rewards.

    ``assignments[t, i]`` is the job of worker ``i`` in matching ``t`` and
    ``rewards[t, i]`` the reward observed for that pair.
    """

    n_workers: int
    n_jobs: int
    assignments: np.ndarray
    rewards: np.ndarray
    noise_sd: Optional[float] = None

    def __post_init__(self):
        a = np.array(self.assignments, dtype=np.int64).reshape(-1, self.n_workers)
        y = np.array(self.rewards, dtype=float).reshape(-1, self.n_workers)
        if a.shape != y.shape:
            raise DataError(f"{a.shape[0]} matchings but {y.shape[0]} reward vectors")
        if self.n_workers > self.n_jobs:
            raise DataError(f"need N <= K, got N={self.n_workers} K={self.n_jobs}")
        if not np.all(np.isfinite(y)):
            raise DataError("rewards must be finite")
        for t, row in enumerate(a):
            problems = validate_matching(row, self.n_workers, self.n_jobs)
            if problems:
                raise DataError(f"matching interference violated at t={t}: {'; '.join(problems)}")
        a.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "assignments", a)
        object.__setattr__(self, "rewards", y)

    @property
    def n(self) -> int:
        return self.assignments.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def matchings(self) -> list[Matching]:
        return [Matching(row) for row in self.assignments]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObservationLog):
            return NotImplemented
        return (
            self.n_workers == other.n_workers
            and self.n_jobs == other.n_jobs
            and np.array_equal(self.assignments, other.assignments)
            and np.array_equal(self.rewards, other.rewards)
            and self.noise_sd == other.noise_sd
        )

    def subset(self, index) -> "ObservationLog":
        return ObservationLog(
            self.n_workers, self.n_jobs, self.assignments[index], self.rewards[index], self.noise_sd
        )

    def records(self):
        """Yield ``(t, i, j, y)`` sorted by (t, i)."""
        for t in range(self.n):
            for i in range(self.n_workers):
                yield t, i, int(self.assignments[t, i]), float(self.rewards[t, i])

    def entry_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-entry observation counts and reward sums, both N x K."""
        counts = np.zeros((self.n_workers, self.n_jobs))
        sums = np.zeros((self.n_workers, self.n_jobs))
        rows = np.broadcast_to(np.arange(self.n_workers), self.assignments.shape)
        np.add.at(counts, (rows, self.assignments), 1.0)
        np.add.at(sums, (rows, self.assignments), self.rewards)
        return counts, sums

    def append(self, m: Matching, y) -> "ObservationLog":
        return ObservationLog(
            self.n_workers,
            self.n_jobs,
            np.vstack([self.assignments, np.asarray(m.assignment)[None, :]]),
            np.vstack([self.rewards, np.asarray(y, dtype=float)[None, :]]),
            self.noise_sd,
        )

    @classmethod
    def empty(cls, n_workers: int, n_jobs: int, noise_sd: Optional[float] = None):
        z = np.zeros((0, n_workers))
        return cls(n_workers, n_jobs, z.astype(np.int64), z, noise_sd)


def sample_uniform_matching(n_workers: int, n_jobs: int, rng) -> Matching:
    """Uniform draw from all injections [N] -> [K] (first N of a random permutation)."""
    if n_workers > n_jobs:
        raise DataError(f"cannot match {n_workers} workers to {n_jobs} jobs")
    gen = as_generator(rng)
    return Matching(gen.permutation(n_jobs)[:n_workers])


def generate_synthetic_truth(n_workers: int, n_jobs: int, rank: int, rng):
    """Draw U (N x r) and V (K x r) iid Uniform[0, 1] and return (U V^T, factors).

    Entries of ``U V^T`` lie in [0, r], so the matrix carries ``entry_bound=r``.
    """
    if not 1 <= rank <= min(n_workers, n_jobs):
        raise DataError(f"rank must be in [1, {min(n_workers, n_jobs)}], got {rank}")
    gen = as_generator(rng)
    u = gen.uniform(0.0, 1.0, size=(n_workers, rank))
    v = gen.uniform(0.0, 1.0, size=(n_jobs, rank))
    factors = FactorPair(u, v)
    return RewardMatrix(factors.product(), entry_bound=float(rank), bounded=True), factors


def gaussian_noise(sd: float) -> NoiseHook:
    def draw(gen: np.random.Generator, size: int) -> np.ndarray:
        return gen.normal(0.0, sd, size=size) if sd > 0 else np.zeros(size)

    return draw


def simulate_observations(
    truth,
    n_matchings: int,
    noise_sd: float,
    rng,
    sampler: Optional[Sampler] = None,
    noise: Optional[NoiseHook] = None,
) -> ObservationLog:
    """Simulate ``n_matchings`` matchings of ``truth`` with additive noise.

    ``sampler`` defaults to the uniform distribution over matchings and
    ``noise`` to iid N(0, noise_sd^2). A custom ``noise`` hook receives the
    generator and N and may correlate the N draws of one matching.
    """
    theta = np.asarray(truth, dtype=float)
    if noise_sd < 0:
        raise DataError("noise_sd must be non-negative")
    if n_matchings < 1:
        raise DataError("n_matchings must be at least 1")
    n_workers, n_jobs = theta.shape
    gen = as_generator(rng)
    sampler = sampler or sample_uniform_matching
    noise = noise or gaussian_noise(noise_sd)
    assignments = np.empty((n_matchings, n_workers), dtype=np.int64)
    rewards = np.empty((n_matchings, n_workers))
    rows = np.arange(n_workers)
    for t in range(n_matchings):
        a = sampler(n_workers, n_jobs, gen).assignment
        assignments[t] = a
        rewards[t] = theta[rows, a] + noise(gen, n_workers)
    return ObservationLog(n_workers, n_jobs, assignments, rewards, float(noise_sd))


# ---------------------------------------------------------------- CSV formats

_HEADER_RE = re.compile(r"#\s*N\s*=\s*(\d+)\s+K\s*=\s*(\d+)(?:\s+noise_sd\s*=\s*(\S+))?")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_log(log: ObservationLog, path) -> None:
    """Write ``t,i,j,y`` rows sorted by (t, i) after a ``# N= K=`` comment line."""
    meta = f"# N={log.n_workers} K={log.n_jobs}"
    if log.noise_sd is not None:
        meta += f" noise_sd={_fmt(log.noise_sd)}"
    lines = [meta, "t,i,j,y"]
    lines.extend(f"{t},{i},{j},{_fmt(y)}" for t, i, j, y in log.records())
    Path(path).write_text("\n".join(lines) + "\n")


def load_log(path, n_workers: Optional[int] = None, n_jobs: Optional[int] = None) -> ObservationLog:
    """Parse an observation CSV; shape comes from the comment line or the data."""
    text = Path(path).read_text().splitlines()
    noise_sd = None
    rows: list[tuple[int, int, int, float]] = []
    seen_header = False
    for lineno, raw in enumerate(text, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER_RE.match(line)
            if m:
                n_workers = n_workers or int(m.group(1))
                n_jobs = n_jobs or int(m.group(2))
                if m.group(3) is not None:
                    noise_sd = float(m.group(3))
            continue
        if not seen_header:
            if [c.strip() for c in line.split(",")] != ["t", "i", "j", "y"]:
                raise DataError(f"line {lineno}: expected header 't,i,j,y', got {line!r}")
            seen_header = True
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            t, i, j = (int(p) for p in parts[:3])
            y = float(parts[3])
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if t < 0 or i < 0 or j < 0 or not math.isfinite(y):
            raise DataError(f"line {lineno}: negative index or non-finite reward")
        rows.append((t, i, j, y))
    if not seen_header:
        raise DataError("missing 't,i,j,y' header")
    if n_workers is None:
        n_workers = max((r[1] for r in rows), default=-1) + 1
    if n_jobs is None:
        n_jobs = max((r[2] for r in rows), default=-1) + 1
    n = max((r[0] for r in rows), default=-1) + 1
    if n_workers == 0:
        raise DataError("cannot infer N and K from an empty log without a '# N= K=' line")
    assignments = np.full((n, n_workers), -1, dtype=np.int64)
    rewards = np.zeros((n, n_workers))
    filled = np.zeros((n, n_workers), dtype=bool)
    for t, i, j, y in rows:
        if i >= n_workers:
            raise DataError(f"worker index {i} out of range at t={t}")
        if filled[t, i]:
            raise DataError(f"worker {i} appears twice at t={t}")
        filled[t, i] = True
        assignments[t, i] = j
        rewards[t, i] = y
    missing = np.argwhere(~filled)
    if len(missing):
        t, i = missing[0]
        raise DataError(f"matching interference violated at t={t}: worker {i} unmatched")
    return ObservationLog(n_workers, n_jobs, assignments, rewards, noise_sd)


def save_matrix(theta, path, header: bool = True) -> None:
    a = np.asarray(theta, dtype=float)
    lines = [f"# N={a.shape[0]} K={a.shape[1]}"] if header else []
    lines.extend(",".join(_fmt(x) for x in row) for row in a)
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix(path, entry_bound: Optional[float] = None) -> RewardMatrix:
    """Read a matrix CSV (optional ``# N= K=`` line, then K floats per row).

    The entry bound defaults to the observed max |entry| (or 1 if that is 0).
    """
    rows = []
    declared = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER_RE.match(line)
            if m:
                declared = (int(m.group(1)), int(m.group(2)))
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if len(rows[-1]) != len(rows[0]):
            raise DataError(f"line {lineno}: expected {len(rows[0])} values, got {len(rows[-1])}")
    if not rows:
        raise DataError(f"{path}: no matrix rows")
    a = np.array(rows)
    if declared is not None and declared != a.shape:
        raise DataError(f"{path}: header declares {declared} but data has shape {a.shape}")
    if entry_bound is None:
        entry_bound = float(np.abs(a).max()) or 1.0
    return RewardMatrix(a, entry_bound=entry_bound)


def save_matching(m: Matching, path, t: int = 0) -> None:
    lines = ["t,i,j"] + [f"{t},{i},{j}" for i, j in enumerate(m)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_matching(path) -> Matching:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    pairs = {}
    for lineno, line in enumerate(lines, start=1):
        if line.startswith("#") or line.replace(" ", "") == "t,i,j":
            continue
        try:
            _, i, j = (int(x) for x in line.split(","))
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        pairs[i] = j
    return Matching([pairs[i] for i in range(len(pairs))])
