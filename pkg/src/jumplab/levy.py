"""Truncated stable-like jump noise.

The Lévy measure has density ``rho(z) = theta(z) / |z|**(d + alpha)`` with
``theta`` either the constant ``theta0`` or the smooth tilt
``theta0 * (1 + eta * tanh(<w, z>))``.  Jumps smaller than ``trunc`` are
dropped; their compensator drift ``b_delta`` is handed to the SDE drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError
from .rng import path_rng

__all__ = [
    "StableLikeMeasure",
    "JumpEvent",
    "JumpPath",
    "PathBatch",
    "sphere_area",
    "bump",
    "bump_deriv",
    "cutoff_h",
    "grad_cutoff_h",
    "literal_cutoff_h",
    "cutoff_lipschitz",
    "total_rate",
    "radius_quantile",
    "sample_mark",
    "sample_path",
    "sample_batch",
    "levy_density_loggrad",
]


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


# ---------------------------------------------------------------------------
# cutoff h(z) = |z|^4 * phi(|z|)


def _g(t):
    t = np.asarray(t, dtype=float)
    safe = np.where(t > 0.0, t, 1.0)
    return np.where(t > 0.0, np.exp(-1.0 / safe), 0.0)


def bump(r):
    """Smooth radial bump: 1 on [0, 1], 0 on [2, inf), g-ratio in between."""
    r = np.asarray(r, dtype=float)
    a = _g(2.0 - r)
    b = _g(r - 1.0)
    inner = a / np.where(a + b > 0.0, a + b, 1.0)
    return np.where(r <= 1.0, 1.0, np.where(r >= 2.0, 0.0, inner))


def bump_deriv(r):
    """Derivative of :func:`bump` in the radius."""
    r = np.asarray(r, dtype=float)
    collar = (r > 1.0) & (r < 2.0)
    a = _g(2.0 - r)
    b = _g(r - 1.0)
    ua = np.where(collar, 2.0 - r, 1.0)
    ub = np.where(collar, r - 1.0, 1.0)
    da = -a / ua**2
    db = b / ub**2
    s = np.where(collar, a + b, 1.0)
    return np.where(collar, (da * b - a * db) / s**2, 0.0)


def _radial_h(r):
    return r**4 * bump(r)


def _radial_dh(r):
    return 4.0 * r**3 * bump(r) + r**4 * bump_deriv(r)


def cutoff_h(z):
    """h(z) = |z|^4 phi(|z|); ``z`` has shape (..., d)."""
    z = np.asarray(z, dtype=float)
    r = np.sqrt(np.sum(z * z, axis=-1))
    return _radial_h(r)


def grad_cutoff_h(z):
    """Analytic gradient of :func:`cutoff_h`, same shape as ``z``."""
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    r = np.sqrt(r2)
    factor = 4.0 * r2 * bump(r) + r2 * r * bump_deriv(r)
    return factor[..., None] * z


def literal_cutoff_h(z):
    """Cutoff equal to 1 on the unit ball (the bump itself), for controls."""
    z = np.asarray(z, dtype=float)
    return bump(np.sqrt(np.sum(z * z, axis=-1)))


@lru_cache(maxsize=None)
def cutoff_lipschitz() -> float:
    """sup |grad h|, located by bounded search on the collar."""
    res = optimize.minimize_scalar(
        lambda r: -abs(float(_radial_dh(r))),
        bounds=(1.5, 1.9),
        method="bounded",
        options={"xatol": 1e-12},
    )
    inner = 4.0  # |grad h| = 4 r^3 on the unit ball
    return max(inner, -float(res.fun))


# ---------------------------------------------------------------------------
# the measure


@dataclass(frozen=True)
class StableLikeMeasure:
    """Lévy intensity ``theta(z) / |z|^(d+alpha)`` truncated below ``trunc``.

    ``outer_law`` is ``"power"`` (same power law on all of R^d) or
    ``"cutoff"`` (no jumps beyond ``outer_radius``, which must be >= 2 so the
    density stays smooth on the support of h).  ``eta`` and ``w`` switch on
    the tilted amplitude ``theta0 * (1 + eta * tanh(<w, z>))``.
    """

    d: int = 2
    alpha: float = 1.0
    theta0: float = 1.0
    trunc: float = 0.05
    outer_law: str = "power"
    outer_radius: float = math.inf
    eta: float = 0.0
    w: tuple = field(default=())

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.d}")
        if not 0.0 < self.alpha < 2.0:
            raise DomainError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.theta0 < 0.0:
            raise DomainError(f"theta0 must be non-negative, got {self.theta0}")
        if not 0.0 < self.trunc < 1.0:
            raise DomainError(f"trunc must lie in (0, 1), got {self.trunc}")
        if self.outer_law not in ("power", "cutoff"):
            raise DomainError(f"unknown outer_law {self.outer_law!r}")
        if self.outer_law == "cutoff" and not 2.0 <= self.outer_radius < math.inf:
            raise DomainError("outer_radius must be finite and >= 2 for outer_law='cutoff'")
        if self.outer_law == "power" and self.outer_radius != math.inf:
            raise DomainError("outer_radius only applies to outer_law='cutoff'")
        if not -1.0 < self.eta < 1.0:
            raise DomainError(f"eta must lie in (-1, 1), got {self.eta}")
        if self.eta != 0.0:
            if self.d > 2:
                raise DomainError("the tilted amplitude is only supported for d <= 2")
            w = np.asarray(self.w, dtype=float)
            if w.shape != (self.d,) or not np.isclose(np.linalg.norm(w), 1.0):
                raise DomainError("w must be a unit vector of length d")
        elif self.w == ():
            object.__setattr__(self, "w", tuple([1.0] + [0.0] * (self.d - 1)))

    @property
    def isotropic(self) -> bool:
        return self.eta == 0.0

    @property
    def r_max(self) -> float:
        return self.outer_radius if self.outer_law == "cutoff" else math.inf

    def amplitude(self, z):
        z = np.asarray(z, dtype=float)
        if self.isotropic:
            return np.full(z.shape[:-1], self.theta0)
        return self.theta0 * (1.0 + self.eta * np.tanh(z @ np.asarray(self.w)))

    def density(self, z):
        """rho(z) on the simulated support, zero elsewhere."""
        z = np.asarray(z, dtype=float)
        r = np.sqrt(np.sum(z * z, axis=-1))
        inside = (r >= self.trunc) & (r <= self.r_max)
        safe = np.where(r > 0.0, r, 1.0)
        return np.where(inside, self.amplitude(z) / safe ** (self.d + self.alpha), 0.0)

    def mass(self, r_lo: float, r_hi: float = math.inf) -> float:
        """nu({r_lo <= |z| < r_hi}), closed form (the tilt integrates to zero)."""
        if r_lo <= 0.0:
            if r_hi > 0.0 and self.theta0 > 0.0:
                return math.inf
            return 0.0
        r_hi = min(r_hi, self.r_max)
        if r_hi <= r_lo:
            return 0.0
        tail_hi = 0.0 if math.isinf(r_hi) else r_hi ** (-self.alpha)
        return self.theta0 * sphere_area(self.d) * (r_lo ** (-self.alpha) - tail_hi) / self.alpha

    def radial_integral(self, f, r_lo: float | None = None, r_hi: float = 2.0) -> float:
        """Integral of a radial function ``f(|z|)`` against nu over a shell."""
        r_lo = self.trunc if r_lo is None else r_lo
        r_hi = min(r_hi, self.r_max)
        if r_hi <= r_lo:
            return 0.0
        c = self.theta0 * sphere_area(self.d)
        pts = [p for p in (1.0, 2.0) if r_lo < p < r_hi]
        val, _ = integrate.quad(
            lambda r: float(f(r)) * r ** (-1.0 - self.alpha),
            r_lo,
            r_hi,
            points=pts or None,
            limit=200,
            epsabs=1e-13,
            epsrel=1e-12,
        )
        return c * val

    def small_jump_moment(self) -> float:
        """Integral of (1 ^ |z|^2) against the untruncated measure."""
        tail = 0.0
        if self.outer_law == "power":
            tail = 1.0 / self.alpha
        else:
            tail = (1.0 - self.outer_radius ** (-self.alpha)) / self.alpha
        return self.theta0 * sphere_area(self.d) * (1.0 / (2.0 - self.alpha) + tail)

    def h_integral(self, r_lo: float | None = None) -> float:
        """Integral of h against nu over {|z| >= r_lo} (default: the truncation)."""
        return self.radial_integral(_radial_h, r_lo=r_lo, r_hi=2.0)

    def neglected_h_mass(self, delta: float | None = None) -> float:
        """Integral of h over the dropped ball {|z| < delta}: theta0 S_d delta^(4-alpha)/(4-alpha)."""
        delta = self.trunc if delta is None else delta
        return self.theta0 * sphere_area(self.d) * delta ** (4.0 - self.alpha) / (4.0 - self.alpha)

    @property
    def compensator_drift(self) -> np.ndarray:
        """b_delta = integral of z over {trunc <= |z| <= 1}."""
        return _compensator_drift(self)

    def loggrad(self, z):
        return levy_density_loggrad(self, z)


@lru_cache(maxsize=64)
def _compensator_drift(m: StableLikeMeasure) -> np.ndarray:
    if m.isotropic:
        return np.zeros(m.d)
    w = np.asarray(m.w, dtype=float)
    if m.d == 1:
        ang = lambda r: 2.0 * math.tanh(r)  # noqa: E731
    else:
        ang = lambda r: integrate.quad(  # noqa: E731
            lambda t: math.cos(t) * math.tanh(r * math.cos(t)), 0.0, 2.0 * math.pi, limit=200
        )[0]
    val, _ = integrate.quad(lambda r: r ** (-m.alpha) * ang(r), m.trunc, 1.0, limit=200)
    out = m.theta0 * m.eta * val * w
    out.setflags(write=False)
    return out


def total_rate(measure: StableLikeMeasure, r: float) -> float:
    """nu({|z| >= r}); rate of the Poisson clock for jumps of size >= r."""
    if r <= 0.0:
        raise DomainError(f"radius must be positive, got {r}")
    return measure.mass(r, math.inf)


def levy_density_loggrad(measure: StableLikeMeasure, z):
    """grad(rho)/rho at ``z``; isotropic case is -(d+alpha) z/|z|^2."""
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    if np.any(r2 == 0.0):
        raise DomainError("the log-density gradient is undefined at z = 0")
    out = -(measure.d + measure.alpha) * z / r2[..., None]
    if not measure.isotropic:
        w = np.asarray(measure.w, dtype=float)
        s = z @ w
        tilt = measure.eta / np.cosh(s) ** 2 / (1.0 + measure.eta * np.tanh(s))
        out = out + tilt[..., None] * w
    return out


# ---------------------------------------------------------------------------
# sampling


def radius_quantile(alpha: float, r_lo: float, r_hi: float, q):
    """Inverse CDF of the radius under the power law restricted to [r_lo, r_hi)."""
    lo = r_lo ** (-alpha)
    hi = 0.0 if math.isinf(r_hi) else r_hi ** (-alpha)
    return (lo - np.asarray(q, dtype=float) * (lo - hi)) ** (-1.0 / alpha)


def _directions(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if d == 1:
        return np.where(rng.random((n, 1)) < 0.5, -1.0, 1.0)
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _isotropic_marks(measure, r_lo, r_hi, n, rng):
    radii = radius_quantile(measure.alpha, r_lo, r_hi, rng.random(n))
    return radii[:, None] * _directions(measure.d, n, rng)


def _tilt_accept(measure, z, rng):
    u = rng.random(z.shape[0])
    return u * (1.0 + abs(measure.eta)) < measure.amplitude(z) / measure.theta0


def sample_mark(measure: StableLikeMeasure, r_lo: float, r_hi: float, rng, size: int | None = None):
    """Draw marks from nu restricted to {r_lo <= |z| < r_hi}, normalised."""
    if not 0.0 < r_lo < r_hi:
        raise DomainError(f"need 0 < r_lo < r_hi, got {r_lo}, {r_hi}")
    r_hi = min(r_hi, measure.r_max)
    if measure.theta0 == 0.0 or r_hi <= r_lo:
        raise DomainError("the requested shell carries no mass")
    n = 1 if size is None else int(size)
    if measure.isotropic:
        out = _isotropic_marks(measure, r_lo, r_hi, n, rng)
    else:
        chunks, have = [], 0
        while have < n:
            cand = _isotropic_marks(measure, r_lo, r_hi, max(n - have, 16), rng)
            keep = cand[_tilt_accept(measure, cand, rng)][: n - have]
            chunks.append(keep)
            have += keep.shape[0]
        out = np.concatenate(chunks)
    return out[0] if size is None else out


@dataclass(frozen=True)
class JumpEvent:
    time: float
    mark: np.ndarray


@dataclass
class JumpPath:
    """One realisation of the Poisson random measure on [0, horizon]."""

    horizon: float
    times: np.ndarray
    marks: np.ndarray
    measure: StableLikeMeasure
    b_delta: np.ndarray

    @property
    def events(self) -> list[JumpEvent]:
        return [JumpEvent(float(s), z) for s, z in zip(self.times, self.marks)]

    def __len__(self) -> int:
        return self.times.shape[0]

    def count(self, t: float, r_lo: float = 0.0, r_hi: float = math.inf) -> int:
        """Number of jumps in [0, t] with r_lo <= |z| <= r_hi."""
        r = np.linalg.norm(self.marks, axis=1)
        sel = (self.times <= t) & (r >= r_lo) & (r <= r_hi)
        return int(np.count_nonzero(sel))

    def levy_value(self, t: float | None = None) -> np.ndarray:
        """L_t = sum of jumps up to t minus t * b_delta."""
        t = self.horizon if t is None else t
        sel = self.times <= t
        return self.marks[sel].sum(axis=0) - t * self.b_delta


def _sample_arrays(measure: StableLikeMeasure, T: float, rng: np.random.Generator):
    d = measure.d
    if T <= 0.0 or measure.theta0 == 0.0:
        return np.empty(0), np.empty((0, d))
    rate = total_rate(measure, measure.trunc) * (1.0 + abs(measure.eta))
    n = int(rng.poisson(rate * T))
    times = np.sort(rng.random(n) * T)
    marks = _isotropic_marks(measure, measure.trunc, measure.r_max, n, rng)
    if not measure.isotropic:
        keep = _tilt_accept(measure, marks, rng)
        times, marks = times[keep], marks[keep]
    return times, marks


def sample_path(measure: StableLikeMeasure, T: float, rng: np.random.Generator) -> JumpPath:
    """Poisson clock at rate nu(|z| >= trunc), independent marks."""
    if T < 0.0:
        raise DomainError(f"horizon must be non-negative, got {T}")
    times, marks = _sample_arrays(measure, T, rng)
    return JumpPath(float(T), times, marks, measure, measure.compensator_drift)


@dataclass
class PathBatch:
    """Ragged batch of jump paths in compressed-row layout.

    Path ``p`` owns events ``offsets[p]:offsets[p + 1]``; ``index0`` is the
    global index of the first path, which fixes its random stream.
    """

    horizon: float
    offsets: np.ndarray
    times: np.ndarray
    marks: np.ndarray
    measure: StableLikeMeasure
    index0: int = 0

    @property
    def n_paths(self) -> int:
        return self.offsets.shape[0] - 1

    def path(self, p: int) -> JumpPath:
        a, b = self.offsets[p], self.offsets[p + 1]
        return JumpPath(self.horizon, self.times[a:b], self.marks[a:b], self.measure,
                        self.measure.compensator_drift)

    def path_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum per-event ``values`` (first axis) over each path."""
        values = np.asarray(values)
        out = np.zeros((self.n_paths,) + values.shape[1:], dtype=values.dtype)
        nonempty = self.offsets[1:] > self.offsets[:-1]
        if values.shape[0]:
            sums = np.add.reduceat(values, self.offsets[:-1][nonempty], axis=0)
            out[nonempty] = sums
        return out

    def event_path_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_paths), np.diff(self.offsets))


def sample_batch(measure: StableLikeMeasure, T: float, seed: int, start: int, count: int,
                 stream: int = 0) -> PathBatch:
    """Paths ``start .. start+count-1``, each from its own counter-based stream."""
    times, marks, sizes = [], [], np.zeros(count + 1, dtype=np.int64)
    for k in range(count):
        s, z = _sample_arrays(measure, T, path_rng(seed, start + k, stream))
        times.append(s)
        marks.append(z)
        sizes[k + 1] = s.shape[0]
    offsets = np.cumsum(sizes)
    if count:
        t_all = np.concatenate(times)
        z_all = np.concatenate(marks).reshape(-1, measure.d)
    else:
        t_all, z_all = np.empty(0), np.empty((0, measure.d))
    return PathBatch(float(T), offsets, t_all, np.ascontiguousarray(z_all), measure, start)
