"""Acceptance criteria 1-10, one PASS/FAIL line each.

Run through pytest (lines are repeated in the terminal summary) or directly
with ``python tests/test_acceptance.py``.
"""

import math
import sys
import time
import warnings
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from scipy import linalg

from jumplab import cli, conditions, experiments
from jumplab.config import build_config
from jumplab.flow import (catalog, initial_state, integrate_between_jumps, inversion_error,
                          linear_model, norm_bound_ratio, solve_path)
from jumplab.levy import StableLikeMeasure, sample_path
from jumplab.malliavin import (TestFunction, directional_derivative, ibp_residual,
                               malliavin_record, perturbed_replay, quadratic_form_minimum,
                               smallest_eigenvalue)
from jumplab.rng import path_rng

sys.path.insert(0, str(Path(__file__).parent))
from conftest import record_acceptance  # noqa: E402

PARTS = {}


def report(number: int, part: str, passed: bool, detail: str) -> None:
    """Record one part of a criterion and reprint the combined line."""
    PARTS.setdefault(number, {})[part] = (bool(passed), detail)
    parts = PARTS[number]
    record_acceptance(number, all(p for p, _ in parts.values()),
                      "; ".join(f"{k}: {d}" for k, (_, d) in parts.items()))


# ---------------------------------------------------------------------------
# 1. void probability


def test_criterion_01_void_probability():
    t0 = time.perf_counter()
    r = experiments.void_probability_check(StableLikeMeasure(theta0=1.0), 0.1, 1e-5, 0.2,
                                           100_000, seed=0)
    elapsed = time.perf_counter() - t0
    anchor = math.isclose(r.exact, math.exp(-5.655), rel_tol=1e-3) and math.isclose(r.r_lo, 0.1)
    ok = r.passed and anchor and elapsed < 60.0
    report(1, "void", ok, f"empirical {r.empirical:.5f} vs exact {r.exact:.5f}, z = {r.z_score:+.2f}, "
           f"{elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 2. integration by parts


def test_criterion_02_integration_by_parts():
    t0 = time.perf_counter()
    res = ibp_residual(catalog("kalman"), TestFunction("cos", (1.0, 1.0)), 1.0, 100_000, seed=0,
                       measure=StableLikeMeasure(theta0=0.3), x0=(0.5, 0.25))
    elapsed = time.perf_counter() - t0
    zs = [r.z_score for r in res]
    ok = all(abs(z) <= 3.0 for z in zs) and elapsed < 300.0
    report(2, "ibp", ok, "z = " + ", ".join(f"{z:+.2f}" for z in zs) + f", {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 3. derivative oracle


def _fd_errors(model, n_paths, eps_grid, seed):
    m = StableLikeMeasure(theta0=1.0)
    x0 = np.array([0.5, 0.25])
    errs = np.zeros((len(eps_grid), 2))
    scale = 0.0
    for p in range(n_paths):
        traj = solve_path(model, x0, sample_path(m, 1.0, path_rng(seed, p)))
        for i in range(2):
            dv = directional_derivative(traj, i)
            scale = max(scale, float(np.abs(dv).max()))
            for k, eps in enumerate(eps_grid):
                fd = (perturbed_replay(model, x0, traj, i, eps) - traj.terminal.X) / eps
                errs[k, i] += float(np.abs(fd - dv).max()) / n_paths
    return errs, scale


def test_criterion_03_derivative_oracle():
    t0 = time.perf_counter()
    eps_grid = (1e-2, 1e-3, 1e-4)
    flat, scale = _fd_errors(catalog("degenerate"), 10, eps_grid, seed=3)
    exact = bool(flat.max() <= 1e-9 * max(scale, 1.0))
    errs, _ = _fd_errors(catalog("sine"), 10, eps_grid, seed=3)
    slopes = [float(np.polyfit(np.log(eps_grid), np.log(errs[:, i]), 1)[0]) for i in range(2)]
    elapsed = time.perf_counter() - t0
    ok = exact and all(abs(s - 1.0) <= 0.2 for s in slopes) and elapsed < 60.0
    report(3, "derivative", ok, f"zero-drift error {flat.max():.2e}, nonlinear slopes "
           + ", ".join(f"{s:.3f}" for s in slopes) + f", {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 4. flow suite


def test_criterion_04_flow_suite():
    rng = np.random.default_rng(4)
    worst_k = 0.0
    for _ in range(100):
        A = rng.standard_normal((2, 2))
        A *= rng.uniform(0.1, 2.0) / np.linalg.norm(A, 2)
        model = linear_model(A, np.eye(2))
        s = integrate_between_jumps(initial_state(model, rng.standard_normal(2)), 1.0, model)
        worst_k = max(worst_k, float(np.abs(s.K - linalg.expm(-A)).max()))
    m = StableLikeMeasure(theta0=1.0)
    worst_inv, worst_ratio = 0.0, 0.0
    for name in ("kalman", "sine", "degenerate"):
        model = catalog(name)
        for p in range(20):
            traj = solve_path(model, np.array([0.5, 0.25]), sample_path(m, 1.0, path_rng(4, p)))
            worst_inv = max(worst_inv, inversion_error(traj))
            worst_ratio = max(worst_ratio, norm_bound_ratio(traj))
    ok = worst_inv <= 1e-8 and worst_k <= 1e-8 and worst_ratio <= 1.0 + 1e-12
    report(4, "flow", ok, f"|JK - I| {worst_inv:.1e}, |K - expm| {worst_k:.1e}, "
           f"norm ratio {worst_ratio:.4f}")
    assert ok


# ---------------------------------------------------------------------------
# 5. Malliavin identities


def test_criterion_05_malliavin_identities():
    m = StableLikeMeasure(theta0=1.0)
    rng = np.random.default_rng(5)
    worst_rel, worst_gap, below = 0.0, 0.0, True
    for name in ("kalman", "sine"):
        model = catalog(name)
        for p in range(500):
            traj = solve_path(model, np.array([0.5, 0.25]), sample_path(m, 1.0, path_rng(5, p)))
            rec = malliavin_record(traj)
            JM = traj.terminal.J @ traj.M
            scale = max(float(np.abs(JM).max()), 1e-300)
            worst_rel = max(worst_rel, float(np.abs(rec.DVX - JM).max()) / scale)
            q, _ = quadratic_form_minimum(rec.M, 1000, rng)
            lam = smallest_eigenvalue(rec.M)
            tol = 1e-6 + 1e-10 * float(np.abs(rec.M).max())
            worst_gap = max(worst_gap, abs(q - lam))
            below &= lam <= q + tol and abs(q - lam) <= tol
    ok = worst_rel <= 1e-8 and below
    report(5, "malliavin", ok, f"DVX vs JM relative {worst_rel:.1e}, |lambda_min - min u'Mu| "
           f"{worst_gap:.1e} on 1000 paths")
    assert ok


# ---------------------------------------------------------------------------
# 6. eigenvalue tail


def test_criterion_06_eigenvalue_tail():
    t0 = time.perf_counter()
    rep = experiments.eigenvalue_tail_experiment(build_config({}, "tail"))
    elapsed = time.perf_counter() - t0
    probs = ", ".join(f"{e.probability:.4f}" for e in rep.estimates)
    ok = rep.passed and elapsed < 600.0
    report(6, "kalman", ok, f"P = [{probs}], c = {rep.c:.4g}, slopes "
           + ", ".join(f"{s:.2f}" for s in rep.local_slopes) + f", {elapsed:.0f} s")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ctrl = experiments.eigenvalue_tail_experiment(build_config({}, "tail", model="degenerate",
                                                                   paths=10_000))
    ctrl_ok = ctrl.all_zero and all(e.probability == 1.0 for e in ctrl.estimates)
    report(6, "degenerate control", ctrl_ok, f"P = 1 on the whole grid: {ctrl_ok}")
    assert ok and ctrl_ok


# ---------------------------------------------------------------------------
# 7. exponential moments


@lru_cache(maxsize=None)
def _moment_report():
    cfg = build_config({}, "moments")
    return cfg, experiments.exp_moment_experiment(cfg)


def test_criterion_07_cutoff_moment_and_literal_control():
    cfg, rep = _moment_report()
    row = rep.rows[-1]
    ok_h = row.stable and abs(row.mean_2n - row.analytic) / row.analytic < 0.05
    sweep = experiments.literal_cutoff_control(cfg)
    lit = ", ".join(f"{r.analytic_literal:.3g}" for r in sweep.rows)
    ok = ok_h and sweep.converges and sweep.literal_diverges
    report(7, "int h dN", ok_h, f"rel change {row.rel_change:.1e}")
    report(7, "literal control", sweep.converges and sweep.literal_diverges,
           f"literal moments {lit} diverge, cutoff moment {sweep.rows[-1].analytic:.6f} converges")
    assert ok


@pytest.mark.xfail(strict=True, reason="exp(|delta(V)|) at lam = 1 is not sample-stable at any "
                   "usable intensity: the per-jump divergence term reaches 12, so the second "
                   "moment of exp(|delta|) is astronomically large (see README)")
def test_criterion_07_skorohod_moment_stability():
    _, rep = _moment_report()
    rows = rep.rows[:-1]
    ok = all(r.stable for r in rows)
    report(7, "exp|delta(V)|", ok, ", ".join(f"rel change {r.rel_change:.2f}" for r in rows))
    assert ok


# ---------------------------------------------------------------------------
# 8. Girsanov suite


def test_criterion_08_girsanov_suite():
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = cli.run_girsanov(build_config({}, "girsanov"))
    elapsed = time.perf_counter() - t0
    mz = res.summary["max_abs_z"]
    ok = res.passed and elapsed < 600.0
    report(8, "girsanov", ok, ", ".join(f"{k} {v}" for k, v in res.checks.items())
           + f"; max|z| weighted {mz['weighted']:.2f}, unweighted {mz['unweighted']:.1f}; "
           f"{elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# 9. conditions suite


def test_criterion_09_conditions_suite():
    expect = {"kalman": True, "degenerate": False, "sine": True, "isotropic": True}
    got = {}
    for name, want in expect.items():
        reps = conditions.condition_suite(catalog(name), seed=9)
        got[name] = all(r.passed for r in reps) == want
    rng = np.random.default_rng(9)
    agree = 0
    for k in range(50):
        A = rng.standard_normal((2, 2))
        B = rng.standard_normal((2, 2))
        if k % 2 == 0:
            B[:, 1] = 0.0
        if k % 7 == 0:
            A = np.outer(B[:, 0], rng.standard_normal(2)) * (k % 14 == 0)
        try:
            conditions.linear_hormander_equals_kalman1(A, B, rng=rng)
            agree += 1
        except Exception:  # noqa: BLE001 - counted as disagreement
            pass
    sweep = conditions.persistence_sweep(1000, seed=9)
    ok = all(got.values()) and agree == 50 and sweep.passed
    report(9, "conditions", ok, f"catalog {got}, agreement {agree}/50, persistence "
           f"counterexamples {sweep.counterexamples}/1000")
    assert ok


# ---------------------------------------------------------------------------
# 10. reproducibility


@pytest.mark.parametrize("sub,extra", [
    ("simulate", ["--paths", "5000"]),
    ("void", ["--paths", "10000"]),
    ("moments", ["--paths", "5000"]),
])
def test_criterion_10_reproducibility(tmp_path, sub, extra):
    outs = []
    for w in (1, 4):
        d = tmp_path / f"w{w}"
        code = cli.main([sub, "--seed", "7", "--workers", str(w), "--out-dir", str(d), *extra])
        assert code in (0, 1)
        files = sorted(p for p in d.iterdir() if not p.name.endswith("_manifest.json"))
        outs.append({p.name: p.read_bytes() for p in files})
    same = outs[0] == outs[1] and len(outs[0]) >= 2
    report(10, sub, same, f"{len(outs[0])} files byte-identical" if same else "files differ")
    assert same


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
