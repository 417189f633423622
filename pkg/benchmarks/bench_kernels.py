"""Time the compiled flow kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--paths N] [--repeat R]

Both backends integrate the same batch of jump paths of the sine model; the
script reports the best wall time of each, the speedup, and the largest
difference between their terminal states.
"""

import argparse
import time

import numpy as np

from jumplab.flow import catalog
from jumplab.kernels import _numba as nbk
from jumplab.kernels import _numpy as npk
from jumplab.levy import StableLikeMeasure, sample_batch


def batch_args(n_paths: int, theta0: float):
    m = StableLikeMeasure(theta0=theta0)
    model = catalog("sine")
    b = sample_batch(m, 1.0, 0, 0, n_paths)
    return (model.kind_code, model.P, model.B, np.zeros(2), np.array([0.5, 0.25]), 1.0, 1e-3,
            b.offsets.astype(np.int64), np.ascontiguousarray(b.times), np.ascontiguousarray(b.marks),
            m.alpha, m.eta, np.asarray(m.w, float))


def best_time(fn, args, repeat: int):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=200)
    ap.add_argument("--theta0", type=float, default=0.25)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args(argv)
    args = batch_args(a.paths, a.theta0)
    t0 = time.perf_counter()
    nbk.flow_batch(*batch_args(2, a.theta0))  # compile
    compile_s = time.perf_counter() - t0
    t_nb, out_nb = best_time(nbk.flow_batch, args, a.repeat)
    t_np, out_np = best_time(npk.flow_batch, args, a.repeat)
    diff = max(float(np.abs(x - y).max()) for x, y in zip(out_nb, out_np))
    print(f"paths={a.paths} theta0={a.theta0}")
    print(f"numba  {t_nb:9.4f} s  (first call incl. compile {compile_s:.2f} s)")
    print(f"numpy  {t_np:9.4f} s")
    print(f"speedup {t_np / t_nb:7.1f}x  max |difference| {diff:.2e}")


if __name__ == "__main__":
    main()
