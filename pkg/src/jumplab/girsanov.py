"""Mark perturbations and the Radon-Nikodym weight that undoes them.

A perturbation moves every mark by ``v^eps(z, s) = z + eps h(z) xi(s)``.
With ``u^eps`` its inverse, the pushforward of nu has density ratio

    phi^eps(z, s) = rho(u^eps) |det du^eps/dz| / rho(z),

and ``Z^eps_t = prod_j phi^eps(z_j, s_j) * exp(-int (phi^eps - 1) dnu ds)``.
Reweighting by ``Z^eps`` turns the law of ``L`` into the law of the perturbed
process ``L^eps``, so ``E[Z^eps_T g(L_T)] = E[g(L^eps_T)]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .errors import ConfigError, DomainError, NumericError
from .levy import (StableLikeMeasure, _radial_h, cutoff_h, cutoff_lipschitz, grad_cutoff_h,
                   levy_density_loggrad, sample_batch, sample_mark)
from .montecarlo import mean_se, run_blocks
from .rng import path_rng

CONTRACTION_LIMIT = 1.0
DEFAULT_ORDERS = (64, 64, 64)
_NEWTON_ABS = 1e-16


class QuadratureWarning(RuntimeWarning):
    """The compensator quadrature moved by more than its tolerance on refinement."""


@lru_cache(maxsize=None)
def cutoff_max() -> float:
    """max of h, attained on the collar."""
    res = optimize.minimize_scalar(lambda r: -float(_radial_h(r)), bounds=(1.0, 2.0),
                                   method="bounded", options={"xatol": 1e-12})
    return -float(res.fun)


@dataclass(frozen=True)
class PerturbationSpec:
    """Deterministic direction field ``xi(s)`` and strength ``epsilon``.

    ``kind="constant"`` uses ``xi(s) = xi``; ``kind="sinusoidal"`` uses
    ``xi(s) = xi * cos(omega * s)``.  Either way ``sup |xi(s)| = |xi|``.
    """

    xi: tuple = (1.0, 0.0)
    epsilon: float = 0.1
    kind: str = "constant"
    omega: float = 2.0 * math.pi

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoidal"):
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        if self.epsilon < 0.0:
            raise ConfigError(f"epsilon must be non-negative, got {self.epsilon}")
        object.__setattr__(self, "xi", tuple(float(x) for x in self.xi))

    @property
    def d(self) -> int:
        return len(self.xi)

    @property
    def sup_xi(self) -> float:
        return float(np.linalg.norm(self.xi))

    @property
    def contraction(self) -> float:
        """eps * sup|xi| * Lip(h); below 1 the map v^eps is a diffeomorphism."""
        return self.epsilon * self.sup_xi * cutoff_lipschitz()

    def with_epsilon(self, eps: float) -> "PerturbationSpec":
        return replace(self, epsilon=float(eps))

    def xi_at(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        base = np.asarray(self.xi)
        if self.kind == "constant":
            return np.broadcast_to(base, s.shape + base.shape).copy()
        return np.cos(self.omega * s)[..., None] * base


def check_contraction(spec: PerturbationSpec, limit: float = CONTRACTION_LIMIT) -> None:
    if spec.contraction >= limit:
        raise ConfigError(
            f"eps * sup|xi| * Lip(h) = {spec.contraction:.4g} must be below {limit}; "
            f"reduce epsilon below {limit / (spec.sup_xi * cutoff_lipschitz()):.4g}")


def forward_perturbation(z, s, spec: PerturbationSpec) -> np.ndarray:
    """v^eps(z, s) = z + eps h(z) xi(s)."""
    z = np.asarray(z, dtype=float)
    return z + spec.epsilon * cutoff_h(z)[..., None] * spec.xi_at(s)


def _solve_tau(z, xi, eps):
    """Solve tau = eps h(z - tau xi) row-wise by safeguarded Newton.

    G(tau) = tau - eps h(z - tau xi) is strictly increasing under the
    contraction condition, so a bracket [0, eps max h] is kept and Newton
    steps leaving it are replaced by bisection.  Rows stop individually.
    """
    tau = eps * cutoff_h(z)
    act = np.flatnonzero(tau > 0.0)
    lo = np.zeros(act.shape[0])
    hi = np.full(act.shape[0], eps * cutoff_max() * (1.0 + 1e-12))
    t = tau[act]
    za, xa = z[act], xi[act]
    for _ in range(200):
        if act.size == 0:
            break
        u = za - t[:, None] * xa
        G = t - eps * cutoff_h(u)
        dG = 1.0 + eps * np.einsum("na,na->n", grad_cutoff_h(u), xa)
        lo = np.where(G < 0.0, t, lo)
        hi = np.where(G > 0.0, t, hi)
        step = t - G / dG
        bad = ~((step > lo) & (step < hi))
        nxt = np.where(bad, 0.5 * (lo + hi), step)
        done = (np.abs(G) <= _NEWTON_ABS) | (np.abs(nxt - t) <= 2.0 * np.spacing(t))
        tau[act] = np.where(done, t, nxt)
        keep = ~done
        act, t, lo, hi, za, xa = act[keep], nxt[keep], lo[keep], hi[keep], za[keep], xa[keep]
    return tau


def inverse_perturbation(z, s, spec: PerturbationSpec, check: bool = True) -> np.ndarray:
    """u^eps(z, s), the solution of ``u + eps h(u) xi(s) = z``.

    When ``eps sup|xi| Lip(h) < 1/2`` the result is also checked against
    ``|u - z| <= 2 eps sup|xi| |z|^4`` on the unit ball; beyond that regime
    the factor 2 is not guaranteed and only the defining equation is checked.

    Raises
    ------
    ConfigError
        If the contraction condition fails.
    """
    check_contraction(spec)
    z = np.asarray(z, dtype=float)
    flat = z.reshape(-1, z.shape[-1])
    if spec.epsilon == 0.0:
        return z.copy()
    xi = np.broadcast_to(spec.xi_at(s), z.shape).reshape(flat.shape)
    tau = _solve_tau(flat, xi, spec.epsilon)
    u = flat - tau[:, None] * xi
    resid = np.abs(u + spec.epsilon * cutoff_h(u)[:, None] * xi - flat).max(initial=0.0)
    if resid > 1e-12 * max(1.0, float(np.abs(flat).max(initial=0.0))):
        raise NumericError(f"inverse perturbation residual {resid:.3g} above 1e-12")
    if check and spec.contraction < 0.5:
        r = np.linalg.norm(flat, axis=1)
        inner = r <= 1.0
        dev = np.linalg.norm(u - flat, axis=1)
        cap = 2.0 * spec.epsilon * spec.sup_xi * r**4
        if np.any(dev[inner] > cap[inner] + 1e-15):
            raise NumericError("inverse perturbation violates |u - z| <= 2 eps sup|xi| |z|^4")
    return u.reshape(z.shape)


def _log_rho_ratio(measure, u, z):
    ru = np.sqrt(np.sum(u * u, axis=-1))
    rz = np.sqrt(np.sum(z * z, axis=-1))
    out = -(measure.d + measure.alpha) * (np.log(ru) - np.log(rz))
    if not measure.isotropic:
        out = out + np.log(measure.amplitude(u)) - np.log(measure.amplitude(z))
    return out


def _log_phi_parts(z, s, spec, measure):
    """(log rho(u)/rho(z), log |det du/dz|) with zeros where the map is the identity."""
    z = np.asarray(z, dtype=float)
    if spec.epsilon == 0.0:
        zero = np.zeros(z.shape[:-1])
        return zero, zero
    u = inverse_perturbation(z, s, spec)
    xi = np.broadcast_to(spec.xi_at(s), z.shape)
    r = np.sqrt(np.sum(z * z, axis=-1))
    moved = (r < 2.0) & (r > 0.0)
    safe_u = np.where(moved[..., None], u, 1.0)
    safe_z = np.where(moved[..., None], z, 1.0)
    lrho = np.where(moved, _log_rho_ratio(measure, safe_u, safe_z), 0.0)
    jac = 1.0 + spec.epsilon * np.einsum("...a,...a->...", grad_cutoff_h(safe_u), xi)
    if np.any(jac[moved] <= 0.0):
        raise NumericError("non-positive Jacobian in the perturbed mark density")
    ldet = np.where(moved, -np.log(jac), 0.0)
    if not (np.all(np.isfinite(lrho)) and np.all(np.isfinite(ldet))):
        raise NumericError("non-finite mark density ratio")
    return lrho, ldet


def log_rn_mark_density(z, s, spec: PerturbationSpec, measure: StableLikeMeasure,
                        jacobian: bool = True) -> np.ndarray:
    """log phi^eps(z, s); ``jacobian=False`` drops the determinant factor."""
    lrho, ldet = _log_phi_parts(z, s, spec, measure)
    return lrho + ldet if jacobian else lrho


def rn_mark_density(z, s, spec: PerturbationSpec, measure: StableLikeMeasure,
                    jacobian: bool = True) -> np.ndarray:
    """phi^eps(z, s) = rho(u^eps) |det du^eps/dz| / rho(z)."""
    return np.exp(log_rn_mark_density(z, s, spec, measure, jacobian))


# ---------------------------------------------------------------------------
# compensator


def _nodes(measure: StableLikeMeasure, n_r: int, n_theta: int):
    x, w = special.roots_legendre(n_r)
    rs, ws = [], []
    for a, b in ((measure.trunc, 1.0), (1.0, 2.0)):
        rs.append(0.5 * (b - a) * x + 0.5 * (b + a))
        ws.append(0.5 * (b - a) * w)
    r = np.concatenate(rs)
    wr = np.concatenate(ws) * measure.theta0 * r ** (-1.0 - measure.alpha)
    if measure.d == 1:
        dirs, wa = np.array([[1.0], [-1.0]]), np.ones(2)
    elif measure.d == 2:
        th = 2.0 * math.pi * np.arange(n_theta) / n_theta
        dirs = np.column_stack([np.cos(th), np.sin(th)])
        wa = np.full(n_theta, 2.0 * math.pi / n_theta)
    else:
        raise DomainError("the compensator quadrature supports d <= 2")
    return r, wr, dirs, wa


def _compensator_raw(spec, measure, t, n_r, n_theta, n_t, jacobian):
    r, wr, dirs, wa = _nodes(measure, n_r, n_theta)
    z = r[:, None, None] * dirs[None, :, :]
    amp = measure.amplitude(z) / measure.theta0 if not measure.isotropic else 1.0
    if spec.kind == "constant" or t == 0.0:
        ts, wt = np.array([0.0]), np.array([t])
    else:
        ts = np.linspace(0.0, t, n_t)
        wt = np.full(n_t, t / (n_t - 1))
        wt[0] = wt[-1] = 0.5 * t / (n_t - 1)
    total = 0.0
    scale = 0.0
    for s, w_s in zip(ts, wt):
        f = np.expm1(log_rn_mark_density(z, np.full(z.shape[:-1], s), spec, measure, jacobian))
        f = f * amp
        total += w_s * float(np.einsum("r,a,ra->", wr, wa, f))
        scale += w_s * float(np.einsum("r,a,ra->", wr, wa, np.abs(f)))
    return total, scale


def _shell_radius(dirs, xi, eps, trunc):
    """Radius r* along each direction with |v^eps(r* e)| = trunc (Newton from trunc)."""
    r = np.full(dirs.shape[0], trunc)
    for _ in range(50):
        y = r[:, None] * dirs
        h = cutoff_h(y)
        v = y + eps * h[:, None] * xi
        nv = np.linalg.norm(v, axis=1)
        dv = dirs + eps * np.einsum("na,n->na", xi, np.einsum("na,na->n", grad_cutoff_h(y), dirs))
        step = (nv - trunc) / (np.einsum("na,na->n", v, dv) / nv)
        r = r - step
        if np.all(np.abs(step) <= 1e-17 * trunc):
            break
    return r


def _compensator_shell(spec, measure, t, n_r, n_theta, n_t):
    """Compensator via the pushforward identity.

    Since v^eps maps the ball of radius 2 onto itself, the integral of
    phi^eps over D = {trunc <= |z| <= 2} equals nu(u^eps(D)), and the
    compensator reduces to the signed nu-mass between the truncation sphere
    and its preimage.  The integrand is smooth, unlike phi^eps itself.
    """
    x, w = special.roots_legendre(n_r)
    _, _, dirs, wa = _nodes(measure, 2, n_theta)
    if spec.kind == "constant" or t == 0.0:
        ts, wt = np.array([0.0]), np.array([t])
    else:
        ts = np.linspace(0.0, t, n_t)
        wt = np.full(n_t, t / (n_t - 1))
        wt[0] = wt[-1] = 0.5 * t / (n_t - 1)
    a = measure.alpha
    total = 0.0
    for s, w_s in zip(ts, wt):
        xi = np.broadcast_to(spec.xi_at(s), dirs.shape)
        rs = _shell_radius(dirs, xi, spec.epsilon, measure.trunc)
        lo = np.minimum(rs, measure.trunc)
        hi = np.maximum(rs, measure.trunc)
        sign = np.where(rs < measure.trunc, 1.0, -1.0)
        if measure.isotropic:
            mass = measure.theta0 * (lo ** (-a) - hi ** (-a)) / a
        else:
            rr = 0.5 * (hi - lo)[:, None] * x + 0.5 * (hi + lo)[:, None]
            z = rr[:, :, None] * dirs[:, None, :]
            f = measure.amplitude(z) * rr ** (-1.0 - a)
            mass = 0.5 * (hi - lo) * (f @ w)
        total += w_s * float(np.sum(wa * sign * mass))
    return total


@lru_cache(maxsize=256)
def _compensator_cached(spec, measure, t, orders, jacobian, method, check):
    n_r, n_theta, n_t = orders
    if method == "shell":
        val = _compensator_shell(spec, measure, t, n_r, n_theta, n_t)
        if check:
            val2 = _compensator_shell(spec, measure, t, 2 * n_r, 2 * n_theta, 2 * n_t - 1)
            scale = t * measure.mass(measure.trunc, 2.0)
            change = abs(val2 - val) / scale
        else:
            change = 0.0
    else:
        val, scale = _compensator_raw(spec, measure, t, n_r, n_theta, n_t, jacobian)
        change = 0.0
        if check:
            val2, _ = _compensator_raw(spec, measure, t, 2 * n_r, 2 * n_theta, 2 * n_t - 1,
                                       jacobian)
            change = abs(val2 - val) / max(scale, 1e-300)
    if change > 1e-6:
        warnings.warn(
            f"compensator quadrature changed by {change:.2e} relative on doubling orders "
            f"{orders} ({method})", QuadratureWarning, stacklevel=3)
    return val


def compensator(spec: PerturbationSpec, measure: StableLikeMeasure, t: float,
                orders: tuple = DEFAULT_ORDERS, jacobian: bool = True, method: str = "auto",
                check: bool = True) -> float:
    """int_0^t int_{trunc <= |z| <= 2} (phi^eps - 1) nu(dz) ds.

    Both methods are tensor products of radial Gauss-Legendre
    (``orders[0]`` nodes per panel), an angular trapezoid rule
    (``orders[1]``) and a time trapezoid rule (``orders[2]``; skipped for
    constant xi, where it is exact).

    ``method="direct"`` integrates ``(phi - 1) rho`` on the panels
    [trunc, 1] and [1, 2].  The Jacobian factor is sharply peaked when the
    contraction factor approaches 1 and the bump is not analytic at the
    collar ends, so this converges slowly there.  ``method="shell"`` uses
    the pushforward identity and only integrates ``rho`` over the thin shell
    between the truncation sphere and its preimage under v^eps; it requires
    ``jacobian=True``.  ``"auto"`` picks ``shell`` when possible.

    With ``check`` the orders are doubled once and a
    :class:`QuadratureWarning` is issued if the value moves by more than
    1e-6 relative (to the integral of ``|phi - 1|`` for ``direct`` and to
    ``nu(D)`` for ``shell``).
    """
    if spec.epsilon == 0.0 or t == 0.0 or measure.theta0 == 0.0:
        return 0.0
    check_contraction(spec)
    if method == "auto":
        method = "shell" if jacobian else "direct"
    if method not in ("shell", "direct"):
        raise ConfigError(f"unknown compensator method {method!r}")
    if method == "shell" and not jacobian:
        raise ConfigError("the shell method needs the Jacobian-corrected density")
    return _compensator_cached(spec, measure, float(t), tuple(int(o) for o in orders),
                               bool(jacobian), method, bool(check))


# ---------------------------------------------------------------------------
# weights along paths


def girsanov_weight(path, spec: PerturbationSpec, measure: StableLikeMeasure, t: float,
                    orders: tuple = DEFAULT_ORDERS, jacobian: bool = True,
                    compensate: bool = True) -> float:
    """Z^eps_t for one :class:`~jumplab.levy.JumpPath`."""
    if spec.epsilon == 0.0:
        return 1.0
    sel = path.times <= t
    logz = float(np.sum(log_rn_mark_density(path.marks[sel], path.times[sel], spec, measure,
                                            jacobian)))
    if compensate:
        logz -= compensator(spec, measure, t, orders, jacobian)
    return math.exp(logz)


def path_log_phi(batch, spec: PerturbationSpec, jacobian: bool = True) -> np.ndarray:
    """Per-path sum of log phi^eps over the events of ``batch`` (whole horizon)."""
    lp = log_rn_mark_density(batch.marks, batch.times, spec, batch.measure, jacobian)
    return batch.path_sums(lp)


def path_skorohod(batch, spec: PerturbationSpec) -> np.ndarray:
    """Per-path delta(V) for the deterministic field ``v = h xi(s)``."""
    z = batch.marks
    if z.shape[0] == 0:
        return np.zeros(batch.n_paths)
    xi = spec.xi_at(batch.times)
    h = cutoff_h(z)
    live = h > 0.0
    c = np.zeros(z.shape[0])
    zl = z[live]
    c[live] = (h[live] * np.einsum("na,na->n", levy_density_loggrad(batch.measure, zl), xi[live])
               + np.einsum("na,na->n", grad_cutoff_h(zl), xi[live]))
    return batch.path_sums(c)


# ---------------------------------------------------------------------------
# statistical checks


def law_test_functions(d: int, clip: float = 2.0):
    """Catalog of bounded test functions of L_T as (name, callable) pairs.

    Names: ``cos_e1``, ``sin_e1``, ... along coordinate axes, ``cos_ones`` and
    ``sin_ones`` along (1, ..., 1), and ``clip_j``, ``clipsq_j`` for the
    clipped coordinate j (1-based) and its square.
    """
    ks = [(f"e{i + 1}", np.eye(d)[i]) for i in range(d)]
    if d >= 2:
        ks.append(("ones", np.ones(d)))
    fns = []
    for tag, k in ks:
        fns.append((f"cos_{tag}", lambda L, k=k: np.cos(L @ k)))
        fns.append((f"sin_{tag}", lambda L, k=k: np.sin(L @ k)))
    for c in range(d):
        fns.append((f"clip_{c + 1}", lambda L, c=c: np.clip(L[:, c], -clip, clip)))
        fns.append((f"clipsq_{c + 1}", lambda L, c=c: np.clip(L[:, c], -clip, clip) ** 2))
    return fns


@dataclass(frozen=True)
class LawTask:
    """Block job: L_T, L^eps_T and weight ingredients per path."""

    measure: StableLikeMeasure
    spec: PerturbationSpec
    horizon: float
    seed: int
    stream: int

    def __call__(self, start: int, count: int) -> dict:
        b = sample_batch(self.measure, self.horizon, self.seed, start, count, self.stream)
        L = b.path_sums(b.marks) - self.horizon * self.measure.compensator_drift
        shift = self.spec.epsilon * cutoff_h(b.marks)[:, None] * self.spec.xi_at(b.times)
        out = {"L": L, "Leps": L + b.path_sums(shift)}
        lrho, ldet = _log_phi_parts(b.marks, b.times, self.spec, self.measure)
        out["logphi"] = b.path_sums(lrho + ldet)
        out["logphi_nodet"] = b.path_sums(lrho)
        out["skorohod"] = path_skorohod(b, self.spec)
        return out


@dataclass
class LawComparison:
    name: str
    variant: str
    mean_a: float
    se_a: float
    mean_b: float
    se_b: float

    @property
    def z_score(self) -> float:
        se = math.hypot(self.se_a, self.se_b)
        return (self.mean_a - self.mean_b) / se if se > 0 else 0.0


@dataclass
class LawReport:
    epsilon: float
    n_paths: int
    compensator: float
    compensator_nodet: float
    weight_mean: float
    weight_se: float
    weight_second_moment: float
    rows: list = field(default_factory=list)

    def max_abs_z(self, variant: str) -> float:
        zs = [abs(r.z_score) for r in self.rows if r.variant == variant]
        return max(zs) if zs else 0.0

    def passed(self, variant: str = "weighted", threshold: float = 3.0) -> bool:
        return self.max_abs_z(variant) <= threshold


VARIANTS = ("weighted", "unweighted", "no_determinant", "no_compensator", "reverse")


def law_equality_test(measure: StableLikeMeasure, spec: PerturbationSpec, T: float,
                      n_paths: int, seed: int, test_fns=None, workers: int = 1,
                      orders: tuple = DEFAULT_ORDERS) -> LawReport:
    """Two-sample comparison of reweighted L_T against the perturbed process.

    Sample A (stream 0) supplies the weighted side, sample B (stream 1) the
    reference side.  Variants:

    ``weighted``        E_A[Z g(L)] vs E_B[g(L^eps)] (the identity under test)
    ``unweighted``      E_A[g(L)] vs E_B[g(L^eps)] (weight omitted)
    ``no_determinant``  as ``weighted`` with phi lacking |det du/dz|
    ``no_compensator``  as ``weighted`` without the exp(-compensator) factor
    ``reverse``         E_A[Z g(L^eps)] vs E_B[g(L)]

    Raises
    ------
    ConfigError
        If ``n_paths < 10**4``.
    """
    if n_paths < 10_000:
        raise ConfigError(f"law_equality_test needs at least 1e4 paths, got {n_paths}")
    if spec.d != measure.d:
        raise DomainError("perturbation and measure dimensions differ")
    if spec.epsilon > 0.0:
        check_contraction(spec)
    A = run_blocks(LawTask(measure, spec, T, seed, 0), n_paths, workers)
    B = run_blocks(LawTask(measure, spec, T, seed, 1), n_paths, workers)
    comp = compensator(spec, measure, T, orders, True)
    comp_nd = compensator(spec, measure, T, orders, False)
    Z = np.exp(A["logphi"] - comp)
    weights = {
        "weighted": Z,
        "unweighted": np.ones_like(Z),
        "no_determinant": np.exp(A["logphi_nodet"] - comp_nd),
        "no_compensator": np.exp(A["logphi"]),
        "reverse": Z,
    }
    zm = mean_se(Z)
    report = LawReport(spec.epsilon, n_paths, comp, comp_nd, zm.mean, zm.stderr,
                       float(np.sum(Z * Z) / Z.shape[0]))
    for name, g in (test_fns or law_test_functions(measure.d)):
        for variant in VARIANTS:
            if variant == "reverse":
                a, b = weights[variant] * g(A["Leps"]), g(B["L"])
            else:
                a, b = weights[variant] * g(A["L"]), g(B["Leps"])
            ma, mb = mean_se(a), mean_se(b)
            report.rows.append(LawComparison(name, variant, ma.mean, ma.stderr, mb.mean, mb.stderr))
    return report


@dataclass
class MomentReport:
    n: int
    mean_n: float
    stderr_n: float
    mean_2n: float
    second_n: float
    second_2n: float

    @property
    def mean_z(self) -> float:
        return (self.mean_2n - 1.0) / (self.stderr_n / math.sqrt(2.0))

    @property
    def second_moment_change(self) -> float:
        return abs(self.second_2n - self.second_n) / self.second_n


def weight_moments(measure: StableLikeMeasure, spec: PerturbationSpec, T: float, n_paths: int,
                   seed: int, workers: int = 1, orders: tuple = DEFAULT_ORDERS) -> MomentReport:
    """E[Z] and E[Z^2] on the first ``n`` and on all ``2n`` paths."""
    A = run_blocks(LawTask(measure, spec, T, seed, 2), 2 * n_paths, workers)
    Z = np.exp(A["logphi"] - compensator(spec, measure, T, orders, True))
    half = mean_se(Z[:n_paths])
    full = mean_se(Z)
    return MomentReport(n_paths, half.mean, half.stderr, full.mean,
                        float(np.sum(Z[:n_paths] ** 2) / n_paths), float(np.sum(Z**2) / Z.shape[0]))


@dataclass
class LimitRow:
    epsilon: float
    gap: float
    stderr: float


@dataclass
class LimitReport:
    rows: list
    slope: float

    @property
    def decreasing(self) -> bool:
        g = [r.gap for r in self.rows]
        return all(b < a for a, b in zip(g[:-1], g[1:]))


def ibp_limit_check(measure: StableLikeMeasure, spec: PerturbationSpec, eps_grid, T: float,
                    n_paths: int, seed: int, workers: int = 1,
                    orders: tuple = DEFAULT_ORDERS) -> LimitReport:
    """m(eps) = E|((Z^eps_T)^{-1} - 1)/eps - delta(V)|^2 on common paths.

    ``spec.epsilon`` is ignored; ``eps_grid`` must be strictly decreasing.
    """
    eps_grid = [float(e) for e in eps_grid]
    if any(b >= a for a, b in zip(eps_grid[:-1], eps_grid[1:])) or min(eps_grid) <= 0.0:
        raise ConfigError("eps_grid must be positive and strictly decreasing")
    rows = []
    for eps in eps_grid:
        sp = spec.with_epsilon(eps)
        check_contraction(sp)
        A = run_blocks(LawTask(measure, sp, T, seed, 3), n_paths, workers)
        logz = A["logphi"] - compensator(sp, measure, T, orders, True)
        gap = (np.expm1(-logz) / eps - A["skorohod"]) ** 2
        m = mean_se(gap)
        rows.append(LimitRow(eps, m.mean, m.stderr))
    x = np.log([r.epsilon for r in rows])
    y = np.log([max(r.gap, 1e-300) for r in rows])
    slope = float(np.polyfit(x, y, 1)[0]) if len(rows) > 1 else math.nan
    return LimitReport(rows, slope)


@dataclass
class PushforwardRow:
    name: str
    lhs: float
    rhs: float
    z_score: float


def pushforward_check(measure: StableLikeMeasure, spec: PerturbationSpec, n: int, seed: int,
                      r_hi: float = 3.0, jacobian: bool = True) -> list[PushforwardRow]:
    """Change of variables for single marks: E[g(v^eps(Z))] = E[g(Z) phi^eps(Z)].

    ``Z`` is drawn from nu restricted to {trunc <= |z| < r_hi}; both sides
    use the same draws and the z-score is that of the paired difference.
    """
    rng = path_rng(seed, 0, 7)
    z = sample_mark(measure, measure.trunc, r_hi, rng, size=n)
    s = np.zeros(n)
    v = forward_perturbation(z, s, spec)
    phi = rn_mark_density(z, s, spec, measure, jacobian)
    rows = []
    for name, g in law_test_functions(measure.d):
        a = g(v)
        b = g(z) * phi
        diff = mean_se(a - b)
        rows.append(PushforwardRow(name, float(np.mean(a)), float(np.mean(b)), diff.z_score()))
    return rows
