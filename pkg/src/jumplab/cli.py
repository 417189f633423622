"""Command line entry point.

``jumplab <subcommand> [--config FILE] [--seed N] [--paths N] [--workers N]
[--out-dir DIR] [--format csv|json]``

Each run writes its data tables, a ``<subcommand>_summary.json`` with the
checks and fitted quantities, and a ``<subcommand>_manifest.json``
(:class:`RunManifest`).  The exit status is 0 when every check passes, 1
when a check fails, 2 for configuration errors and 3 for numeric or domain
errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, conditions, experiments, girsanov, kernels
from .config import build_config, config_digest, parse_config
from .errors import ConfigError, DomainError, NumericError
from .levy import total_rate
from .malliavin import FlowTask, TestFunction, ibp_from_samples
from .montecarlo import mean_se, run_blocks

SUBCOMMANDS = ("simulate", "tail", "ibp", "girsanov", "conditions", "charfn", "moments", "void")
EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class Table:
    name: str
    columns: list
    rows: list = field(default_factory=list)


@dataclass
class RunResult:
    tables: list
    summary: dict
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


@dataclass
class RunManifest:
    subcommand: str
    config_digest: str
    seed: int
    version: str
    backend: str
    workers: int
    timings: dict
    outputs: list

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# formatting


def fmt_value(v) -> str:
    """CSV cell: 17 significant digits for reals, lowercase booleans."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    return obj


def write_table(table: Table, out_dir: Path, fmt: str) -> Path:
    if fmt == "csv":
        path = out_dir / f"{table.name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.columns)
            for row in table.rows:
                w.writerow([fmt_value(v) for v in row])
    else:
        path = out_dir / f"{table.name}.json"
        data = {"columns": table.columns, "rows": _jsonable(table.rows)}
        path.write_text(json.dumps(data, indent=1) + "\n")
    return path


# ---------------------------------------------------------------------------
# subcommands


def run_simulate(cfg) -> RunResult:
    model, measure = cfg.model_spec(), cfg.measure()
    task = FlowTask(model, measure, tuple(cfg.x0), cfg.horizon, cfg.seed, 0, cfg.hmax, True)
    res = run_blocks(task, cfg.paths, cfg.workers)
    d = model.d
    cols = ["path"] + [f"x{i + 1}" for i in range(d)] + ["lambda_min"] + \
        [f"delta_{i + 1}" for i in range(d)] + ["h_sum", "n_events"]
    rows = [[p, *res["X"][p], res["lambda_min"][p], *res["skorohod"][p], res["h_sum"][p],
             res["n_events"][p]] for p in range(cfg.paths)]
    rate = total_rate(measure, measure.trunc) * cfg.horizon
    count = mean_se(res["n_events"])
    z_count = (count.mean - rate) / math.sqrt(rate / cfg.paths) if rate > 0 else 0.0
    z_delta = [mean_se(res["skorohod"][:, i]).z_score() for i in range(d)]
    checks = {
        "finite": bool(np.all(np.isfinite(res["X"]))),
        "event_count_mean": abs(z_count) <= 3.0,
        "skorohod_mean_zero": all(abs(z) <= 3.0 for z in z_delta),
    }
    summary = {"mean_events": count.mean, "expected_events": rate, "z_events": z_count,
               "z_skorohod_mean": z_delta}
    return RunResult([Table("simulate", cols, rows)], summary, checks)


def run_tail(cfg) -> RunResult:
    rep = experiments.eigenvalue_tail_experiment(cfg)
    cols = ["epsilon", "count", "n", "probability", "ci_lo", "ci_hi", "c", "C"]
    rows = [[e.epsilon, e.count, e.n, e.probability, e.ci_lo, e.ci_hi, e.c, e.C] for e in rep.estimates]
    summary = {"c": rep.c, "C": rep.C, "r_squared": rep.r_squared, "local_slopes": rep.local_slopes,
               "probability_monotone": rep.probability_monotone,
               "slopes_increasing": rep.slopes_increasing, "shape_monotone": rep.shape_monotone,
               "all_zero": rep.all_zero, "fit_skipped": rep.fit_skipped,
               "condition_passed": rep.condition_passed, "notes": rep.notes,
               "ell": cfg.ell, "gamma": cfg.gamma}
    if rep.all_zero:
        checks = {"degenerate_control": rep.passed}
    else:
        checks = {"probability_monotone": rep.probability_monotone,
                  "slopes_increasing": rep.slopes_increasing,
                  "fitted_c_positive": (not rep.fit_skipped) and rep.c > 0.0}
    return RunResult([Table("tail", cols, rows)], summary, checks)


def run_ibp(cfg) -> RunResult:
    model = cfg.model_spec()
    task = FlowTask(model, cfg.measure(), tuple(cfg.x0), cfg.horizon, cfg.seed, 0, cfg.hmax, False)
    res = run_blocks(task, cfg.paths, cfg.workers)
    f = TestFunction("cos", tuple(cfg.test_k))
    cols = ["direction", "sign", "lhs", "rhs", "residual", "stderr", "z"]
    rows, checks, control = [], {}, []
    for sign in (-1.0, 1.0):
        for i in range(model.d):
            r = ibp_from_samples(res["X"], res["DVX"], res["skorohod"], f, i, sign)
            rows.append([i + 1, sign, r.lhs, r.rhs, r.residual, r.stderr, r.z_score])
            if sign < 0:
                checks[f"direction_{i + 1}"] = abs(r.z_score) <= 3.0
            else:
                control.append(r.z_score)
    summary = {"test_function": f"cos<{tuple(cfg.test_k)}, x>", "opposite_sign_z": control}
    return RunResult([Table("ibp", cols, rows)], summary, checks)


def run_girsanov(cfg, test_names=None) -> RunResult:
    measure = cfg.measure()
    spec = girsanov.PerturbationSpec(tuple(cfg.xi), cfg.epsilon, cfg.xi_kind)
    fns = girsanov.law_test_functions(cfg.d)
    if test_names:
        fns = [(n, g) for n, g in fns if n in test_names]
        if not fns:
            raise ConfigError(f"no test function matches {test_names}")
    law = girsanov.law_equality_test(measure, spec, cfg.horizon, cfg.paths, cfg.seed, fns,
                                     cfg.workers)
    law_t = Table("girsanov_law", ["test", "variant", "mean_a", "se_a", "mean_b", "se_b", "z"],
                  [[r.name, r.variant, r.mean_a, r.se_a, r.mean_b, r.se_b, r.z_score]
                   for r in law.rows])
    mom_t = Table("girsanov_weight", ["t", "n", "mean_n", "stderr_n", "mean_2n", "second_n",
                                      "second_2n", "z"])
    zs = []
    for t in (0.5 * cfg.horizon, cfg.horizon):
        m = girsanov.weight_moments(measure, spec, t, cfg.paths // 2, cfg.seed, cfg.workers)
        zs.append(m.mean_z)
        mom_t.rows.append([t, m.n, m.mean_n, m.stderr_n, m.mean_2n, m.second_n, m.second_2n, m.mean_z])
    lim = girsanov.ibp_limit_check(measure, spec, cfg.limit_grid, cfg.horizon, cfg.limit_paths,
                                   cfg.seed, cfg.workers)
    lim_t = Table("girsanov_limit", ["epsilon", "gap", "stderr"],
                  [[r.epsilon, r.gap, r.stderr] for r in lim.rows])
    checks = {
        "law_equality": law.passed("weighted"),
        "weight_mean_one": all(abs(z) <= 3.0 for z in zs if math.isfinite(z)),
        "limit_decreasing": lim.decreasing,
    }
    if cfg.epsilon > 0.0:
        checks["unweighted_detected"] = law.max_abs_z("unweighted") > 3.0
    summary = {"epsilon": cfg.epsilon, "compensator": law.compensator,
               "compensator_without_determinant": law.compensator_nodet,
               "weight_mean": law.weight_mean, "weight_stderr": law.weight_se,
               "max_abs_z": {v: law.max_abs_z(v) for v in girsanov.VARIANTS},
               "limit_slope": lim.slope}
    return RunResult([law_t, mom_t, lim_t], summary, checks)


def run_conditions(cfg, n_random: int = 50, n_draws: int = 1000) -> RunResult:
    model = cfg.model_spec()
    reports = conditions.condition_suite(model, cfg.seed)
    sweep = conditions.persistence_sweep(n_draws, cfg.seed, d=model.d)
    rng = np.random.default_rng(cfg.seed)
    agree = 0
    for k in range(n_random):
        A = rng.standard_normal((model.d, model.d))
        B = rng.standard_normal((model.d, model.d))
        if k % 3 == 0:
            B[:, 1:] = 0.0
        if k % 5 == 0:
            A[:] = 0.0
        try:
            conditions.linear_hormander_equals_kalman1(A, B, rng=rng)
            agree += 1
        except NumericError:
            pass
    taylor_bad = 0
    for _ in range(n_draws):
        A = rng.standard_normal((model.d, model.d))
        A *= rng.uniform(0.0, 2.0) / max(np.linalg.norm(A, 2), 1e-300)
        rep = conditions.taylor_flow_remainder(A, rng.standard_normal(model.d), rng.uniform(0.0, 1.0),
                                               int(rng.integers(1, 5)))
        taylor_bad += not rep.passed
    rows = [[r.kind, r.value, r.passed] for r in reports]
    rows += [["persistence_sweep", sweep.counterexamples, sweep.passed],
             ["kalman_hormander_agreement", agree, agree == n_random],
             ["taylor_sweep", taylor_bad, taylor_bad == 0]]
    checks = {row[0]: bool(row[2]) for row in rows}
    summary = {"model": cfg.model, "reports": [r.as_dict() for r in reports],
               "persistence_worst_margin": sweep.worst_margin}
    return RunResult([Table("conditions", ["check", "value", "passed"], rows)], summary, checks)


def run_charfn(cfg) -> RunResult:
    model = cfg.model_spec()
    task = FlowTask(model, cfg.measure(), tuple(cfg.x0), cfg.horizon, cfg.seed, 0, cfg.hmax, False)
    X = run_blocks(task, cfg.paths, cfg.workers)["X"]
    rep = experiments.charfn_decay(cfg, X=X)
    rows = [[r.direction + 1, r.k, r.modulus, r.stderr] for r in rep.rows]
    checks = {}
    for j in range(model.d):
        if np.ptp(X[:, j]) == 0.0:
            checks[f"axis_{j + 1}_deterministic"] = all(abs(r.modulus - 1.0) <= 1e-12
                                                        for r in rep.profile(j))
        else:
            checks[f"axis_{j + 1}_decreasing"] = rep.decreasing(j)
    return RunResult([Table("charfn", ["direction", "k", "modulus", "stderr"], rows)], {}, checks)


def run_moments(cfg) -> RunResult:
    rep = experiments.exp_moment_experiment(cfg)
    sweep = experiments.literal_cutoff_control(cfg)
    m_t = Table("moments", ["quantity", "mean_n", "mean_2n", "rel_change", "analytic", "overflow",
                            "stable"],
                [[r.name, r.mean_n, r.mean_2n, r.rel_change, r.analytic, r.overflow, r.stable]
                 for r in rep.rows])
    s_t = Table("moments_truncation", ["trunc", "analytic", "analytic_literal", "sample",
                                       "sample_literal"],
                [[r.trunc, r.analytic, r.analytic_literal, r.sample, r.sample_literal]
                 for r in sweep.rows])
    checks = {f"stable[{r.name}]": r.stable for r in rep.rows}
    checks["truncation_converges"] = sweep.converges
    checks["literal_cutoff_diverges"] = sweep.literal_diverges
    return RunResult([m_t, s_t], {"lam": rep.lam, "n": rep.n}, checks)


def run_void(cfg) -> RunResult:
    r = experiments.void_probability_check(cfg.measure(), cfg.delta_time, cfg.void_eps, cfg.ell,
                                           cfg.paths, cfg.seed, cfg.workers)
    row = [r.r_lo, r.delta_time, r.n_trials, r.empirical, r.exact, r.stderr, r.z_score]
    t = Table("void", ["r_lo", "delta_time", "n_trials", "empirical", "exact", "stderr", "z"], [row])
    return RunResult([t], {}, {"within_3_stderr": r.passed})


RUNNERS = {
    "simulate": run_simulate,
    "tail": run_tail,
    "ibp": run_ibp,
    "girsanov": run_girsanov,
    "conditions": run_conditions,
    "charfn": run_charfn,
    "moments": run_moments,
    "void": run_void,
}


# ---------------------------------------------------------------------------
# driver


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--paths", type=int, help="Monte Carlo path count (overrides the config)")
    common.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    common.add_argument("--out-dir", default="jumplab_out", help="directory for outputs")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="data file format")
    common.add_argument("--model", help="catalog model (overrides the config)")
    parser = argparse.ArgumentParser(prog="jumplab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"jumplab {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "girsanov":
            p.add_argument("--epsilon", type=float, help="perturbation size")
            p.add_argument("--eps-grid", help="comma-separated decreasing grid for the limit check")
            p.add_argument("--tests", help="comma-separated test-function names to keep")
    return parser


def _error(out_dir: Path, sub: str, exc: Exception, code: int, seed, elapsed: float) -> int:
    payload = {"subcommand": sub, "error": type(exc).__name__, "message": str(exc), "exit": code}
    print(json.dumps(payload), file=sys.stderr)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{sub}_error.json"
        path.write_text(json.dumps(payload, indent=2) + "\n")
        RunManifest(sub, "", seed, __version__, "numba" if kernels.USING_NUMBA else "numpy", 0,
                    {"total": elapsed}, [path.name]).write(out_dir / f"{sub}_manifest.json")
    except OSError:
        pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    sub = args.subcommand
    out_dir = Path(args.out_dir)
    t0 = time.perf_counter()
    try:
        overrides = {"seed": args.seed, "paths": args.paths, "workers": args.workers,
                     "model": args.model}
        if sub == "girsanov":
            overrides["epsilon"] = args.epsilon
            if args.eps_grid:
                try:
                    overrides["limit_grid"] = tuple(float(v) for v in args.eps_grid.split(","))
                except ValueError:
                    raise ConfigError(f"--eps-grid: cannot parse {args.eps_grid!r}") from None
        if args.config:
            cfg = parse_config(args.config, sub, **overrides)
        else:
            cfg = build_config(None, sub, **overrides)
        t_cfg = time.perf_counter()
        if sub == "girsanov" and args.tests:
            result = run_girsanov(cfg, [s.strip() for s in args.tests.split(",")])
        else:
            result = RUNNERS[sub](cfg)
    except ConfigError as exc:
        return _error(out_dir, sub, exc, EXIT_CONFIG, args.seed, time.perf_counter() - t0)
    except (NumericError, DomainError, FloatingPointError) as exc:
        return _error(out_dir, sub, exc, EXIT_NUMERIC, args.seed, time.perf_counter() - t0)
    t_run = time.perf_counter()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{sub}_error.json").unlink(missing_ok=True)
    outputs = [write_table(t, out_dir, args.format) for t in result.tables]
    summary_path = out_dir / f"{sub}_summary.json"
    summary = {"subcommand": sub, "passed": result.passed, "checks": result.checks,
               "config_digest": config_digest(cfg), "seed": cfg.seed, "results": result.summary}
    summary_path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    outputs.append(summary_path)
    manifest = RunManifest(sub, config_digest(cfg), cfg.seed, __version__,
                           "numba" if kernels.USING_NUMBA else "numpy", cfg.workers,
                           {"config": t_cfg - t0, "run": t_run - t_cfg,
                            "write": time.perf_counter() - t_run},
                           [p.name for p in outputs])
    manifest.write(out_dir / f"{sub}_manifest.json")
    status = "PASS" if result.passed else "FAIL"
    print(f"{sub}: {status} " + " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in result.checks.items()))
    return EXIT_OK if result.passed else EXIT_CHECKS


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
