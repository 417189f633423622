"""Block-parallel Monte Carlo driver.

Paths are cut into fixed-size blocks whose boundaries depend only on the
path count.  Each block draws from the per-path streams of its own indices,
so the concatenated per-path arrays, and every reduction taken over them, are
identical for any number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

DEFAULT_BLOCK = 2048


def blocks(n_paths: int, block_size: int = DEFAULT_BLOCK) -> list[tuple[int, int]]:
    """(start, count) pairs covering ``range(n_paths)`` in order."""
    if n_paths < 0:
        raise ValueError("n_paths must be non-negative")
    return [(s, min(block_size, n_paths - s)) for s in range(0, n_paths, block_size)]


def _concat(parts: list[dict]) -> dict:
    if not parts:
        return {}
    out = {}
    for key in parts[0]:
        vals = [p[key] for p in parts]
        if isinstance(vals[0], np.ndarray):
            out[key] = np.concatenate(vals, axis=0)
        else:
            out[key] = vals
    return out


def run_blocks(task, n_paths: int, workers: int = 1, block_size: int = DEFAULT_BLOCK) -> dict:
    """Evaluate ``task(start, count) -> dict of per-path arrays`` over all blocks.

    ``task`` must be picklable when ``workers > 1``.  Results are concatenated
    in path order.
    """
    plan = blocks(n_paths, block_size)
    if workers <= 1 or len(plan) <= 1:
        parts = [task(s, c) for s, c in plan]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(task, s, c) for s, c in plan]
            parts = [f.result() for f in futs]
    return _concat(parts)


@dataclass(frozen=True)
class MeanEstimate:
    mean: float
    stderr: float
    n: int

    def z_score(self, target: float = 0.0) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.mean == target else math.copysign(math.inf, self.mean - target)
        return (self.mean - target) / self.stderr


def mean_se(x) -> MeanEstimate:
    """Sample mean and its standard error (numpy pairwise summation)."""
    x = np.ascontiguousarray(x, dtype=float)
    n = x.shape[0]
    if n == 0:
        return MeanEstimate(math.nan, math.nan, 0)
    m = float(np.sum(x) / n)
    if n == 1:
        return MeanEstimate(m, math.inf, 1)
    var = float(np.sum((x - m) ** 2) / (n - 1))
    return MeanEstimate(m, math.sqrt(var / n), n)
