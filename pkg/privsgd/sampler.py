"""Uniform index sampling, the fresh-index set and the stopping time τ.

The loop guard is "continue while |F| ≤ n/2": a run stops at the first step
whose unique count exceeds ⌊n/2⌋.
"""

import logging
import math
from concurrent import futures
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
import pandas as pd

from privsgd.errors import ConfigurationError, SamplerIndexError
from privsgd.rng import derive_rng

logger = logging.getLogger(__name__)


def sample_index(rng: np.random.Generator, n: int) -> int:
    if n < 1:
        raise ConfigurationError("cannot sample from an empty index set", field="n")
    return int(rng.integers(0, n))


class FreshSet:
    """Indices seen so far. Single-owner; mutated in place."""

    def __init__(self, n: int) -> None:
        if n < 1:
            raise ConfigurationError("n must be >= 1", field="n")
        self.n = int(n)
        self.seen = np.zeros(self.n, dtype=bool)
        self.count = 0

    def record(self, idx: int) -> bool:
        if not 0 <= idx < self.n:
            raise SamplerIndexError(f"index {idx} outside [0, {self.n})")
        if self.seen[idx]:
            return False
        self.seen[idx] = True
        self.count += 1
        return True

    def should_stop(self) -> bool:
        return self.count > self.n // 2

    def __len__(self) -> int:
        return self.count


def record(fresh: FreshSet, idx: int) -> bool:
    return fresh.record(idx)


def should_stop(fresh: FreshSet) -> bool:
    return fresh.should_stop()


def expected_tau(n: int) -> float:
    """E[τ] = Σ_{k=0}^{⌊n/2⌋} n/(n−k) (draws until ⌊n/2⌋+1 distinct indices)."""
    return float(sum(n / (n - k) for k in range(n // 2 + 1)))


def tau_tail_bound(n: int) -> float:
    """P[τ > 2n] ≤ 2·exp(−n/16) for n ≥ 16."""
    return 2.0 * math.exp(-n / 16.0)


def unique_count_path(indices: Sequence[int], n: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    first = np.zeros(len(indices), dtype=bool)
    _, pos = np.unique(indices, return_index=True)
    first[pos] = True
    return np.cumsum(first)


# ---- Stopping-time simulation ----

def _tau_one(rng: np.random.Generator, n: int) -> int:
    """Draw indices in blocks; τ is the step of the (⌊n/2⌋+1)-th first occurrence."""
    target = n // 2 + 1
    drawn = np.empty(0, dtype=np.int64)
    block = max(2 * n, 16)
    while True:
        drawn = np.concatenate([drawn, rng.integers(0, n, size=block)])
        _, first_pos = np.unique(drawn, return_index=True)
        if first_pos.shape[0] >= target:
            return int(np.partition(first_pos, target - 1)[target - 1]) + 1
        block *= 2


@dataclass
class TauStats:
    n: int
    trials: int
    tau_samples: np.ndarray

    @property
    def mean_tau(self) -> float:
        return float(np.mean(self.tau_samples))

    @property
    def max_tau(self) -> int:
        return int(np.max(self.tau_samples))

    @property
    def frac_exceed_2n(self) -> float:
        return float(np.mean(self.tau_samples > 2 * self.n))

    def summary(self) -> Dict[str, float]:
        return {
            "n": self.n,
            "trials": self.trials,
            "mean_tau": self.mean_tau,
            "max_tau": self.max_tau,
            "frac_exceed_2n": self.frac_exceed_2n,
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"trial": np.arange(self.trials), "tau": self.tau_samples})


def _tau_chunk(seed: int, n: int, trials: Sequence[int]) -> np.ndarray:
    return np.array([_tau_one(derive_rng(seed, n, t), n) for t in trials], dtype=np.int64)


def simulate_tau(n: int, trials: int, seed: int, workers: int = 1) -> TauStats:
    """Monte-Carlo τ with one stream per (seed, n, trial)."""
    if n < 1 or trials < 1:
        raise ConfigurationError("simulate_tau needs n >= 1 and trials >= 1", field="trials")
    chunks = np.array_split(np.arange(trials), max(1, workers))
    if workers > 1:
        with futures.ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_tau_chunk, [seed] * len(chunks), [n] * len(chunks), chunks))
    else:
        parts = [_tau_chunk(seed, n, c) for c in chunks]
    stats = TauStats(n=n, trials=trials, tau_samples=np.concatenate(parts))
    logger.info("tau n=%d trials=%d mean=%.3f max=%d", n, trials, stats.mean_tau, stats.max_tau)
    return stats
