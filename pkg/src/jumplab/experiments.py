"""Monte Carlo drivers: eigenvalue tails, exponential moments, void
probabilities and a characteristic-function decay profile.

All drivers take an :class:`ExperimentConfig`, draw every path from its own
counter-based stream and reduce in path order, so results do not depend on
the number of workers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import optimize
from scipy.stats import binomtest

from . import conditions
from .errors import ConfigError, DomainError
from .flow import CATALOG, DEFAULT_HMAX, ModelSpec, catalog
from .levy import StableLikeMeasure, cutoff_h, literal_cutoff_h, sample_batch
from .malliavin import FlowTask
from .montecarlo import run_blocks

DEFAULT_EPS_GRID = tuple(2.0**-k for k in range(3, 11))
DEFAULT_K_GRID = (0.0, 1.0, 2.0, 4.0, 8.0)


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters shared by the experiment drivers and the command line.

    ``gamma`` and ``ell`` shape the fitted tail bound
    ``C exp(-c / (eps^(alpha ell) |log eps|^gamma))``.  The void check uses
    the annulus ``[void_eps^ell, 1]``.
    """

    model: str = "kalman"
    d: int = 2
    alpha: float = 1.0
    theta0: float = 1.0
    trunc: float = 0.05
    outer_law: str = "power"
    outer_radius: float = math.inf
    horizon: float = 1.0
    paths: int = 10_000
    seed: int = 0
    workers: int = 1
    hmax: float = DEFAULT_HMAX
    x0: tuple = (0.0, 0.0)
    eps_grid: tuple = DEFAULT_EPS_GRID
    ell: float = 0.2
    gamma: float = 0.25
    lam: float = 1.0
    trunc_sweep: tuple = (0.1, 0.05, 0.025, 0.0125)
    k_grid: tuple = DEFAULT_K_GRID
    delta_time: float = 0.1
    void_eps: float = 1e-5
    test_k: tuple = (1.0, 1.0)
    epsilon: float = 0.1
    xi: tuple = (1.0, 0.0)
    xi_kind: str = "constant"
    limit_grid: tuple = (0.1, 0.05, 0.025, 0.0125)
    limit_paths: int = 20_000
    out_dir: str = "."

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Range checks; raises :class:`ConfigError` naming the offending field."""
        if self.model not in CATALOG:
            raise ConfigError(f"model: unknown catalog model {self.model!r}; choose from {CATALOG}")
        if self.model != "isotropic" and self.d != 2:
            raise ConfigError(f"d: model {self.model!r} is two-dimensional, got d = {self.d}")
        if not 0.0 < self.alpha < 2.0:
            raise ConfigError(f"alpha: must lie in (0, 2), got {self.alpha}")
        if self.theta0 < 0.0:
            raise ConfigError(f"theta0: amplitude must be non-negative, got {self.theta0}")
        if not 0.0 < self.trunc < 1.0:
            raise ConfigError(f"trunc: must lie in (0, 1), got {self.trunc}")
        if not 0.0 < self.ell < 0.25:
            raise ConfigError(f"ell: must lie in (0, 1/4), got {self.ell}")
        if not self.gamma > 0.0:
            raise ConfigError(f"gamma: must be positive, got {self.gamma}")
        if self.paths < 1000:
            raise ConfigError(f"paths: need at least 1000 paths, got {self.paths}")
        if self.horizon < 0.0 or self.delta_time < 0.0:
            raise ConfigError("horizon and delta_time must be non-negative")
        if self.workers < 1:
            raise ConfigError(f"workers: must be at least 1, got {self.workers}")
        if not self.hmax > 0.0:
            raise ConfigError(f"hmax: must be positive, got {self.hmax}")
        for name in ("eps_grid", "limit_grid", "trunc_sweep"):
            g = getattr(self, name)
            if not g or min(g) <= 0.0 or any(b >= a for a, b in zip(g[:-1], g[1:])):
                raise ConfigError(f"{name}: must be positive and strictly decreasing, got {g}")
        if max(self.trunc_sweep) >= 1.0:
            raise ConfigError("trunc_sweep: truncation radii must lie in (0, 1)")
        if any(b < a for a, b in zip(self.k_grid[:-1], self.k_grid[1:])):
            raise ConfigError("k_grid: magnitudes must be increasing")
        if len(self.x0) != self.d or len(self.xi) != self.d or len(self.test_k) != self.d:
            raise ConfigError(f"x0, xi and test_k must have length d = {self.d}")
        if self.lam < 0.0:
            raise ConfigError(f"lam: must be non-negative, got {self.lam}")
        if self.xi_kind not in ("constant", "sinusoidal"):
            raise ConfigError(f"xi_kind: expected constant or sinusoidal, got {self.xi_kind!r}")
        if self.epsilon < 0.0:
            raise ConfigError(f"epsilon: must be non-negative, got {self.epsilon}")
        if not 0.0 < self.void_eps < 1.0:
            raise ConfigError(f"void_eps: must lie in (0, 1), got {self.void_eps}")

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def measure(self, trunc: float | None = None) -> StableLikeMeasure:
        return StableLikeMeasure(self.d, self.alpha, self.theta0,
                                 self.trunc if trunc is None else trunc, self.outer_law,
                                 self.outer_radius)

    def model_spec(self) -> ModelSpec:
        return catalog(self.model, self.d)


def _flow_samples(cfg: ExperimentConfig, eigen: bool, n_paths: int | None = None,
                  stream: int = 0) -> dict:
    task = FlowTask(cfg.model_spec(), cfg.measure(), tuple(float(v) for v in cfg.x0),
                    float(cfg.horizon), int(cfg.seed), stream, cfg.hmax, eigen)
    return run_blocks(task, cfg.paths if n_paths is None else n_paths, cfg.workers)


# ---------------------------------------------------------------------------
# eigenvalue tail


@dataclass
class TailEstimate:
    epsilon: float
    count: int
    n: int
    probability: float
    ci_lo: float
    ci_hi: float
    c: float = math.nan
    C: float = math.nan


@dataclass
class TailReport:
    model: str
    horizon: float
    estimates: list
    c: float
    C: float
    r_squared: float
    local_slopes: list
    probability_monotone: bool
    slopes_increasing: bool
    shape_monotone: bool
    all_zero: bool
    fit_skipped: bool
    condition_passed: bool
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        if self.all_zero:
            return all(e.probability == 1.0 for e in self.estimates)
        return (self.probability_monotone and self.slopes_increasing and not self.fit_skipped
                and self.c > 0.0)


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def tail_shape(eps, alpha: float, ell: float, gamma: float) -> np.ndarray:
    """x(eps) = -(eps^(alpha ell) |log eps|^gamma)^(-1); log P is fitted as log C + c x."""
    eps = np.asarray(eps, dtype=float)
    return -1.0 / (eps ** (alpha * ell) * np.abs(np.log(eps)) ** gamma)


def tail_estimates(lam, eps_grid) -> list[TailEstimate]:
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[0]
    out = []
    for e in eps_grid:
        k = int(np.count_nonzero(lam <= e))
        lo, hi = wilson_interval(k, n)
        out.append(TailEstimate(float(e), k, n, k / n, lo, hi))
    return out


def fit_tail(estimates, alpha: float, ell: float, gamma: float):
    """Least-squares fit of log P on the bound shape; returns (c, C, r2) or None."""
    eps = np.array([e.epsilon for e in estimates])
    p = np.array([e.probability for e in estimates])
    keep = p > 0.0
    if np.count_nonzero(keep) < 2:
        return None
    x = tail_shape(eps[keep], alpha, ell, gamma)
    y = np.log(p[keep])
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return float(coef[1]), float(math.exp(coef[0])), r2


def local_slopes(estimates) -> list[float]:
    """d log P / d log eps between consecutive grid points (nan where P = 0)."""
    out = []
    for a, b in zip(estimates[:-1], estimates[1:]):
        if a.probability > 0.0 and b.probability > 0.0:
            out.append(math.log(a.probability / b.probability) / math.log(a.epsilon / b.epsilon))
        else:
            out.append(math.nan)
    return out


def _model_condition(model: ModelSpec, seed: int) -> bool:
    if model.linear is not None:
        return conditions.kalman_rank(model.linear, model.B) == model.d
    rep = conditions.hormander_infimum(model, conditions.catalog_box(model), rng=np.random.default_rng(seed))
    return rep.passed


def eigenvalue_tail_experiment(cfg: ExperimentConfig, lam=None) -> TailReport:
    """Empirical P(lambda_min(t) <= eps) over ``cfg.eps_grid`` with Wilson intervals.

    ``lam`` may supply precomputed smallest eigenvalues.  Grids are sorted
    decreasing, so ``P`` should fall and the local slopes should rise along
    the grid.
    """
    model = cfg.model_spec()
    ok = _model_condition(model, cfg.seed)
    notes = []
    if not ok:
        warnings.warn(f"model {cfg.model!r} fails the rank/Hörmander check; expect a degenerate tail",
                      RuntimeWarning, stacklevel=2)
        notes.append("rank or Hörmander condition fails for this model")
    if lam is None:
        lam = _flow_samples(cfg, eigen=True)["lambda_min"]
    est = tail_estimates(lam, cfg.eps_grid)
    all_zero = bool(np.all(np.asarray(lam) == 0.0))
    probs = [e.probability for e in est]
    mono = all(b <= a for a, b in zip(probs[:-1], probs[1:]))
    slopes = local_slopes(est)
    finite = [s for s in slopes if math.isfinite(s)]
    increasing = len(finite) == len(slopes) and all(b > a for a, b in zip(finite[:-1], finite[1:]))
    x = tail_shape(cfg.eps_grid, cfg.alpha, cfg.ell, cfg.gamma)
    shape_mono = bool(np.all(np.diff(x) < 0.0))
    if not shape_mono:
        notes.append("bound shape is not monotone on this grid; fitted c is not meaningful")
    fit = None if all_zero else fit_tail(est, cfg.alpha, cfg.ell, cfg.gamma)
    if all_zero:
        notes.append("lambda_min vanishes on every path; fit skipped")
    c, C, r2 = fit if fit else (math.nan, math.nan, math.nan)
    for e in est:
        e.c, e.C = c, C
    return TailReport(cfg.model, cfg.horizon, est, c, C, r2, slopes, mono, increasing, shape_mono,
                      all_zero, fit is None, ok, notes)


def _h_scalar(r: float) -> float:
    a = math.exp(-1.0 / (2.0 - r)) if r < 2.0 else 0.0
    b = math.exp(-1.0 / (r - 1.0)) if r > 1.0 else 0.0
    return r**4 * a / (a + b)


@lru_cache(maxsize=1)
def _h_peak() -> float:
    return optimize.minimize_scalar(lambda r: -_h_scalar(r), bounds=(1.0, 2.0), method="bounded",
                                    options={"xatol": 1e-12}).x


def _h_collar_root(y: float) -> float:
    """Radius on the falling part of the collar where h equals ``y`` (0 < y < 1)."""
    return optimize.brentq(lambda r: _h_scalar(r) - y, _h_peak(), 2.0, xtol=1e-15, rtol=1e-15)


def h_sum_cdf(measure: StableLikeMeasure, t: float, eps: float, n_grid: int = 2000):
    """Bracket for P(sum_j h(z_j) <= eps) over [0, t] by Panjer recursion.

    Jumps with ``h > eps`` must be absent; the remaining compound Poisson sum
    is discretised on ``n_grid`` cells of width ``eps / n_grid``.  Rounding
    the jump sizes up gives a lower bound and rounding down an upper bound.
    Isotropic measures and ``0 < eps < 1`` only.
    """
    if not measure.isotropic:
        raise DomainError("the h-sum law is implemented for isotropic measures")
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    dlt = measure.trunc

    def cum(y):
        # t * nu({h <= y} restricted to |z| >= trunc)
        if y <= 0.0:
            return t * measure.mass(2.0)
        inner = measure.mass(dlt, y**0.25) if y**0.25 > dlt else 0.0
        return t * (inner + measure.mass(_h_collar_root(y)))

    lam_out = t * measure.mass(dlt) - cum(eps)
    step = eps / n_grid
    C = np.array([cum(k * step) for k in range(n_grid + 1)])
    up = np.diff(C)  # mass of h in ((k-1) step, k step] -> lattice point k
    down = np.append(up[1:], 0.0)  # same cells sent to k - 1; cell 1 goes to 0 and drops out
    out = []
    for m in (np.concatenate([[0.0], up]), np.concatenate([[0.0], down])):
        p = np.zeros(n_grid + 1)
        p[0] = math.exp(-m.sum())
        jm = np.arange(n_grid + 1) * m
        for k in range(1, n_grid + 1):
            p[k] = np.dot(jm[1:k + 1], p[k - 1::-1][:k]) / k
        out.append(math.exp(-lam_out) * float(p.sum()))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# void probability


@dataclass(frozen=True)
class AnnulusCountTask:
    measure: StableLikeMeasure
    horizon: float
    r_lo: float
    r_hi: float
    seed: int

    def __call__(self, start: int, count: int) -> dict:
        b = sample_batch(self.measure, self.horizon, self.seed, start, count, 5)
        r = np.linalg.norm(b.marks, axis=1)
        hit = ((r >= self.r_lo) & (r <= self.r_hi)).astype(np.int64)
        return {"hits": b.path_sums(hit)}


@dataclass
class VoidResult:
    r_lo: float
    delta_time: float
    n_trials: int
    empirical: float
    exact: float
    stderr: float
    z_score: float

    @property
    def passed(self) -> bool:
        return abs(self.z_score) <= 3.0


def void_probability_check(measure: StableLikeMeasure, delta_time: float, eps: float, ell: float,
                           n_trials: int, seed: int = 0, workers: int = 1) -> VoidResult:
    """Fraction of windows [0, delta_time] with no mark in {eps^ell <= |z| <= 1}.

    Compared with ``exp(-delta_time * nu(eps^ell <= |z| <= 1))`` using the
    binomial standard error at the exact probability.

    Raises
    ------
    ConfigError
        If ``eps^ell`` is not inside (trunc, 1).
    """
    r_lo = eps**ell
    if not measure.trunc < r_lo < 1.0:
        raise ConfigError(f"annulus inner radius {r_lo:.6g} must lie in (trunc={measure.trunc}, 1)")
    exact = math.exp(-delta_time * measure.mass(r_lo, 1.0))
    if n_trials < 1:
        raise ConfigError(f"n_trials must be positive, got {n_trials}")
    res = run_blocks(AnnulusCountTask(measure, float(delta_time), r_lo, 1.0, int(seed)), n_trials,
                     workers)
    emp = float(np.count_nonzero(res["hits"] == 0)) / n_trials
    se = math.sqrt(exact * (1.0 - exact) / n_trials)
    z = (emp - exact) / se if se > 0 else (0.0 if emp == exact else math.inf)
    return VoidResult(r_lo, float(delta_time), n_trials, emp, exact, se, z)


# ---------------------------------------------------------------------------
# exponential moments


@dataclass
class MomentRow:
    name: str
    mean_n: float
    mean_2n: float
    rel_change: float
    analytic: float = math.nan
    overflow: bool = False

    @property
    def stable(self) -> bool:
        return not self.overflow and math.isfinite(self.rel_change) and self.rel_change < 0.05


@dataclass
class MomentReport:
    lam: float
    n: int
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.stable for r in self.rows)


def _doubling_row(name: str, values, n: int, lam: float, analytic: float = math.nan) -> MomentRow:
    with np.errstate(over="ignore"):
        e = np.exp(lam * np.asarray(values, dtype=float))
    if not np.all(np.isfinite(e)):
        return MomentRow(name, math.inf, math.inf, math.inf, analytic, True)
    a = float(np.sum(e[:n]) / n)
    b = float(np.sum(e) / e.shape[0])
    return MomentRow(name, a, b, abs(b - a) / a, analytic)


def h_exp_moment(measure: StableLikeMeasure, t: float, lam: float, literal: bool = False) -> float:
    """E exp(lam * int h dN) = exp(t * int (e^(lam h) - 1) dnu) over the simulated support."""
    f = (lambda r: math.expm1(lam * float(literal_cutoff_h(np.array([r]))))) if literal \
        else (lambda r: math.expm1(lam * float(cutoff_h(np.array([r])))))
    with np.errstate(over="ignore"):
        return math.exp(t * measure.radial_integral(f, r_hi=2.0))


def exp_moment_experiment(cfg: ExperimentConfig, lam: float | None = None,
                          samples: dict | None = None) -> MomentReport:
    """Sample means of exp(lam |delta(V_i)|) and exp(lam int h dN) on n and 2n paths.

    ``n = cfg.paths``; each row passes when the relative change is below 5%
    and nothing overflowed.
    """
    lam = cfg.lam if lam is None else float(lam)
    if lam < 0.0:
        raise ConfigError(f"lam must be non-negative, got {lam}")
    n = cfg.paths
    res = samples if samples is not None else _flow_samples(cfg, eigen=False, n_paths=2 * n,
                                                             stream=4)
    rows = []
    for i in range(cfg.d):
        rows.append(_doubling_row(f"exp|delta(V_{i + 1})|", np.abs(res["skorohod"][:, i]), n, lam))
    rows.append(_doubling_row("exp(int h dN)", res["h_sum"], n, lam,
                              h_exp_moment(cfg.measure(), cfg.horizon, lam)))
    return MomentReport(lam, n, rows)


@dataclass(frozen=True)
class CutoffSumTask:
    measure: StableLikeMeasure
    horizon: float
    seed: int

    def __call__(self, start: int, count: int) -> dict:
        b = sample_batch(self.measure, self.horizon, self.seed, start, count, 6)
        return {"h": b.path_sums(cutoff_h(b.marks)), "h_literal": b.path_sums(literal_cutoff_h(b.marks))}


@dataclass
class TruncationRow:
    trunc: float
    analytic: float
    analytic_literal: float
    sample: float
    sample_literal: float


@dataclass
class TruncationReport:
    lam: float
    rows: list

    @property
    def converges(self) -> bool:
        """The exact moment with h settles: successive log-ratios shrink."""
        logs = [math.log(r.analytic) for r in self.rows]
        steps = [abs(b - a) for a, b in zip(logs[:-1], logs[1:])]
        return all(b < a for a, b in zip(steps[:-1], steps[1:])) and steps[-1] < 1e-3 * max(1.0, abs(logs[-1]))

    @property
    def literal_diverges(self) -> bool:
        """With h = 1 on the unit ball the log-moment at least doubles as trunc halves."""
        logs = [math.log(r.analytic_literal) if r.analytic_literal < math.inf else math.inf
                for r in self.rows]
        return all(b >= 1.9 * a for a, b in zip(logs[:-1], logs[1:]))


def literal_cutoff_control(cfg: ExperimentConfig, lam: float | None = None,
                           n_paths: int | None = None) -> TruncationReport:
    """Exponential moment of int h dN as the truncation shrinks, for h and for the
    cutoff equal to 1 on the unit ball.

    The moment with h converges as the truncation is removed; the literal
    cutoff has infinite mass near the origin, so its moment grows like
    exp(const / trunc).
    """
    lam = cfg.lam if lam is None else float(lam)
    n = cfg.paths if n_paths is None else n_paths
    rows = []
    for tr in cfg.trunc_sweep:
        m = cfg.measure(trunc=tr)
        res = run_blocks(CutoffSumTask(m, cfg.horizon, cfg.seed), n, cfg.workers)
        with np.errstate(over="ignore"):
            s = float(np.mean(np.exp(lam * res["h"])))
            sl = float(np.mean(np.exp(lam * res["h_literal"])))
        rows.append(TruncationRow(tr, h_exp_moment(m, cfg.horizon, lam),
                                  h_exp_moment(m, cfg.horizon, lam, literal=True), s, sl))
    return TruncationReport(lam, rows)


# ---------------------------------------------------------------------------
# characteristic function profile


@dataclass
class CharfnRow:
    direction: int
    k: float
    modulus: float
    stderr: float


@dataclass
class CharfnReport:
    model: str
    rows: list

    def profile(self, direction: int) -> list[CharfnRow]:
        return [r for r in self.rows if r.direction == direction]

    def decreasing(self, direction: int) -> bool:
        m = [r.modulus for r in self.profile(direction) if r.k > 0.0]
        return all(b < a for a, b in zip(m[:-1], m[1:]))


def charfn_modulus(x, k: float):
    """|mean exp(i k x)| with a delta-method standard error."""
    x = np.asarray(x, dtype=float)
    c, s = np.cos(k * x), np.sin(k * x)
    mc, ms = float(np.mean(c)), float(np.mean(s))
    mod = math.hypot(mc, ms)
    n = x.shape[0]
    if mod == 0.0 or n < 2:
        return mod, math.inf
    g = (mc * (c - mc) + ms * (s - ms)) / mod
    return mod, float(np.std(g, ddof=1) / math.sqrt(n))


def charfn_decay(cfg: ExperimentConfig, k_grid=None, directions=None, X=None) -> CharfnReport:
    """|E exp(i k <e_j, X_t>)| for k in ``k_grid`` along coordinate axes."""
    k_grid = cfg.k_grid if k_grid is None else tuple(k_grid)
    if any(b < a for a, b in zip(k_grid[:-1], k_grid[1:])):
        raise ConfigError("k_grid magnitudes must be increasing")
    if X is None:
        X = _flow_samples(cfg, eigen=False)["X"]
    dirs = range(cfg.d) if directions is None else directions
    rows = []
    for j in dirs:
        for k in k_grid:
            mod, se = charfn_modulus(X[:, j], k)
            rows.append(CharfnRow(int(j), float(k), mod, se))
    return CharfnReport(cfg.model, rows)
