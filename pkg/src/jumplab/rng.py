"""Counter-based random streams.

Every Monte Carlo path owns an independent Philox stream whose key is the
master seed and whose counter block is the path index.  A path therefore
draws the same numbers regardless of how paths are split across workers.
"""

from __future__ import annotations

import numpy as np


def path_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Generator for path ``index`` of substream ``stream`` under ``seed``.

    ``stream`` separates independent sample sets drawn under the same seed
    (for example the two arms of a two-sample test).
    """
    if seed < 0 or index < 0 or stream < 0:
        raise ValueError("seed, index and stream must be non-negative")
    counter = np.array([0, 0, index & 0xFFFFFFFFFFFFFFFF, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=int(seed), counter=counter))


def sub_seed(seed: int, *labels: int) -> int:
    """Derive a deterministic 63-bit seed from ``seed`` and integer labels."""
    ss = np.random.SeedSequence([int(seed), *[int(x) for x in labels]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
