"""Deterministic checks of the rank and bracket hypotheses and the flow estimates.

* Kalman rank of ``[B, AB, ..., A^n B]``.
* Box infimum of the first-order Hörmander quantity
  ``H(x, u) = sum_i |<grad a(x) B_i, u>|^2 + |<B_i, u>|^2``.
* Persistence window: if ``<v, u> >= p`` then ``<K_t v, u> >= p/2`` for
  ``t < min(theta p, 1)`` with ``theta = exp(-g) / (2 |u| |v| g)``.
* Taylor expansion of ``K_t v = exp(-At) v`` with its remainder bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.stats import qmc

from . import kernels
from .errors import ConfigError, DomainError, NumericError
from .flow import DEFAULT_HMAX, ModelSpec
from .malliavin import quadratic_form_minimum, smallest_eigenvalue

RANK_RTOL = 1e-10
HORMANDER_FLOOR = 1e-8


@dataclass
class ConditionReport:
    """Outcome of one check.

    ``witness`` (when set) attains ``value``: the minimising ``u`` or ``x``.
    """

    kind: str
    value: float
    passed: bool
    witness: np.ndarray | None = None
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"kind": self.kind, "value": self.value, "passed": bool(self.passed)}
        if self.witness is not None:
            out["witness"] = [float(v) for v in np.ravel(self.witness)]
        out.update(self.details)
        return out


# ---------------------------------------------------------------------------
# Kalman rank


def _square_pair(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"A must be square, got shape {A.shape}")
    if B.ndim != 2 or B.shape[0] != A.shape[0]:
        raise DomainError(f"B has shape {B.shape}, expected {A.shape[0]} rows")
    return A, B


def controllability_matrix(A, B, n: int | None = None) -> np.ndarray:
    """[B, AB, ..., A^n B] stacked horizontally (``n`` defaults to d - 1)."""
    A, B = _square_pair(A, B)
    n = A.shape[0] - 1 if n is None else int(n)
    if n < 0:
        raise DomainError(f"n must be non-negative, got {n}")
    blocks, cur = [B], B
    for _ in range(n):
        cur = A @ cur
        blocks.append(cur)
    return np.hstack(blocks)


def kalman_rank(A, B, n: int | None = None) -> int:
    """Numerical rank of the controllability matrix.

    Singular values below ``1e-10 * sigma_max`` count as zero, so the result
    is unchanged by rescaling ``B``.
    """
    s = linalg.svdvals(controllability_matrix(A, B, n))
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > RANK_RTOL * s[0]))


def kalman_report(A, B, n: int | None = None) -> ConditionReport:
    A, B = _square_pair(A, B)
    r = kalman_rank(A, B, n)
    d = A.shape[0]
    return ConditionReport("kalman", r, r == d, details={"d": d, "n": d - 1 if n is None else n})


# ---------------------------------------------------------------------------
# Hörmander quantity


def hormander_quantity(model: ModelSpec, x, u) -> np.ndarray:
    """H(x, u) for rows of ``x`` (n, d) against rows of ``u`` (m, d); shape (n, m)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    G = model.drift_jacobian(x) @ model.B  # (n, d, d): columns grad a(x) B_i
    brk = np.einsum("nab,ma->nmb", G, u)
    flat = u @ model.B
    return np.sum(brk**2, axis=-1) + np.sum(flat**2, axis=-1)[None, :]


def _gram(model: ModelSpec, x) -> np.ndarray:
    G = model.drift_jacobian(x) @ model.B
    S = G @ G.T + model.B @ model.B.T
    return 0.5 * (S + S.T)


def _min_over_u(model: ModelSpec, x):
    w, V = np.linalg.eigh(_gram(model, x))
    return float(w[0]), V[:, 0]


def _unit_vectors(rng, n: int, d: int) -> np.ndarray:
    U = rng.standard_normal((n, d))
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def hormander_infimum(model: ModelSpec, box, n_x: int = 256, n_u: int = 256, rng=None,
                      n_refine: int = 4) -> ConditionReport:
    """Box-infimum estimate of the Hörmander quantity.

    Sobol points in ``box`` (array of (lo, hi) per coordinate) are crossed
    with ``n_u`` random unit vectors.  The best few points are then polished
    by bounded L-BFGS on ``x`` with the inner minimum over ``u`` taken
    exactly (smallest eigenvalue of ``grad a B B^T grad a^T + B B^T``).  The
    value is an estimate of the infimum over the box, not a certificate.

    Raises
    ------
    ConfigError
        If ``n_x`` or ``n_u`` is below 100 or the box is degenerate.
    """
    if n_x < 100 or n_u < 100:
        raise ConfigError(f"n_x and n_u must be at least 100, got {n_x}, {n_u}")
    box = np.asarray(box, dtype=float)
    d = model.d
    if box.shape != (d, 2) or np.any(box[:, 1] <= box[:, 0]):
        raise ConfigError(f"box must be a nondegenerate ({d}, 2) array of (lo, hi) rows")
    rng = np.random.default_rng(0) if rng is None else rng
    sob = qmc.Sobol(d, scramble=True, seed=rng)
    X = qmc.scale(sob.random(n_x), box[:, 0], box[:, 1])
    U = _unit_vectors(rng, n_u, d)
    Q = hormander_quantity(model, X, U)
    order = np.argsort(Q.min(axis=1), kind="stable")
    k, j = np.unravel_index(int(np.argmin(Q)), Q.shape)
    best_val, best_x, best_u = float(Q[k, j]), X[k], U[j]
    sampled = best_val
    bounds = list(map(tuple, box))
    for idx in order[:n_refine]:
        res = optimize.minimize(lambda y: _min_over_u(model, y)[0], X[idx], method="L-BFGS-B",
                                bounds=bounds)
        for cand in (X[idx], res.x):
            val, u = _min_over_u(model, cand)
            if val < best_val:
                best_val, best_x, best_u = val, np.array(cand, dtype=float), u
    value = float(hormander_quantity(model, best_x, best_u)[0, 0])
    return ConditionReport(
        "hormander", value, value > HORMANDER_FLOOR, witness=np.concatenate([best_x, best_u]),
        details={"x": best_x.tolist(), "u": best_u.tolist(), "sampled_minimum": sampled,
                 "box": box.tolist(), "scope": "box infimum estimate"})


def linear_hormander_equals_kalman1(A, B, n_u: int = 1000, rng=None) -> bool:
    """First-order Hörmander positivity for ``a(x) = Ax`` versus rank[B, AB] = d.

    The Hörmander minimum over the sphere is found by sampling ``n_u`` unit
    vectors and polishing; it is positive (above ``1e-8``) exactly when the
    rank test succeeds.

    Raises
    ------
    NumericError
        If the two tests disagree.
    """
    A, B = _square_pair(A, B)
    rng = np.random.default_rng(0) if rng is None else rng
    S = A @ B @ B.T @ A.T + B @ B.T
    S = 0.5 * (S + S.T)
    q, _ = quadratic_form_minimum(S, n_u, rng)
    q = min(q, smallest_eigenvalue(S))
    horm = q > HORMANDER_FLOOR
    kal = kalman_rank(A, B, 1) == A.shape[0]
    if horm != kal:
        raise NumericError(f"Hörmander minimum {q:.3g} and rank[B, AB] = "
                           f"{kalman_rank(A, B, 1)} disagree")
    return horm


# ---------------------------------------------------------------------------
# persistence window


def persistence_window(u, v, p: float, grad_bound: float) -> tuple[float, float]:
    """(theta, delta) with theta = exp(-g) / (2 |u| |v| g) and delta = min(theta p, 1)."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DomainError("u and v must be nonzero")
    if not p > 0.0:
        raise DomainError(f"p must be positive, got {p}")
    if not grad_bound > 0.0:
        raise DomainError(f"grad_bound must be positive, got {grad_bound}")
    theta = math.exp(-grad_bound) / (2.0 * nu * nv * grad_bound)
    return theta, min(theta * p, 1.0)


def verify_persistence(model: ModelSpec, u, v, p: float, x0=None, n_grid: int = 64,
                       hmax: float = DEFAULT_HMAX) -> ConditionReport:
    """Integrate K_t from ``x0`` without jumps and check the window on a grid.

    The grid is ``delta * k / n_grid`` for ``k = 1 .. n_grid - 1`` plus a
    point just inside ``delta``.  ``value`` is the worst signed margin
    ``<K_t v, u> - p/2`` (sign flipped when ``<v, u> <= -p``).

    Raises
    ------
    DomainError
        If neither ``<v, u> >= p`` nor ``<v, u> <= -p``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    c = float(v @ u)
    if c >= p:
        sign = 1.0
    elif c <= -p:
        sign = -1.0
    else:
        raise DomainError(f"need |<v, u>| >= p, got <v, u> = {c:.6g}, p = {p:.6g}")
    _, delta = persistence_window(u, v, p, model.grad_bound)
    d = model.d
    X = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    J, K = np.eye(d), np.eye(d)
    shift = np.zeros(d)
    grid = np.append(delta * np.arange(1, n_grid) / n_grid, delta * (1.0 - 1e-9))
    t, worst, worst_t = 0.0, math.inf, 0.0
    for s in grid:
        X, J, K = kernels.advance(model.kind_code, model.P, shift, X, J, K, float(s - t), hmax)
        t = s
        margin = sign * float(u @ K @ v) - 0.5 * p
        if margin < worst:
            worst, worst_t = margin, s
    return ConditionReport("persistence", worst, worst >= 0.0, witness=np.array([worst_t]),
                           details={"delta": delta, "p": p, "sign": sign})


@dataclass
class PersistenceSweep:
    n_draws: int
    counterexamples: int
    worst_margin: float

    @property
    def passed(self) -> bool:
        return self.counterexamples == 0


def persistence_sweep(n_draws: int = 1000, seed: int = 0, d: int = 2, max_norm: float = 2.0,
                      n_grid: int = 32, sine: bool = False) -> PersistenceSweep:
    """Random draws of (A, u, v, p, x0); counts windows where the bound fails.

    ``A`` is scaled to operator norm in (0.05, max_norm].  With ``sine`` the
    drift is ``A sin(x)``, whose gradient is bounded by the same norm.
    """
    rng = np.random.default_rng(seed)
    bad, worst = 0, math.inf
    for _ in range(n_draws):
        A = rng.standard_normal((d, d))
        A *= rng.uniform(0.05, max_norm) / np.linalg.norm(A, 2)
        model = ModelSpec("draw", np.eye(d), A, "sine" if sine else "linear")
        u, v = rng.standard_normal(d), rng.standard_normal(d)
        c = float(u @ v)
        if abs(c) < 1e-3:
            v = v + np.sign(c or 1.0) * u
            c = float(u @ v)
        p = abs(c) * rng.uniform(0.05, 1.0)
        x0 = rng.uniform(-3.0, 3.0, d)
        rep = verify_persistence(model, u, v, p, x0=x0, n_grid=n_grid)
        bad += not rep.passed
        worst = min(worst, rep.value)
    return PersistenceSweep(n_draws, bad, worst)


# ---------------------------------------------------------------------------
# Taylor expansion of the inverse flow


def taylor_flow_remainder(A, v, t: float, l: int) -> ConditionReport:
    """|exp(-At) v - sum_{j<l} (-t)^j / j! A^j v| against (t^l / l!) e^{|A| t} |A^l v|.

    ``|A|`` is the operator 2-norm; the matrix exponential comes from scipy.
    """
    A = np.asarray(A, dtype=float)
    v = np.asarray(v, dtype=float)
    if l < 1:
        raise DomainError(f"l must be at least 1, got {l}")
    if t < 0.0:
        raise DomainError(f"t must be non-negative, got {t}")
    exact = linalg.expm(-t * A) @ v
    partial = np.zeros_like(v)
    term = v.copy()
    for j in range(l):
        partial += term
        term = (-t / (j + 1)) * (A @ term)
    rem = float(np.linalg.norm(exact - partial))
    Alv = np.linalg.matrix_power(A, l) @ v
    bound = t**l / math.factorial(l) * math.exp(np.linalg.norm(A, 2) * t) * float(np.linalg.norm(Alv))
    ok = rem <= bound * (1.0 + 1e-10) + 1e-14
    return ConditionReport("taylor", rem, ok, details={"bound": bound, "l": l, "t": t})


# ---------------------------------------------------------------------------
# bundled suite for the catalog


def catalog_box(model: ModelSpec, half_width: float = 1.0) -> np.ndarray:
    return np.array([[-half_width, half_width]] * model.d)


def condition_suite(model: ModelSpec, seed: int = 0, box=None, n_x: int = 256,
                    n_u: int = 256) -> list[ConditionReport]:
    """Kalman rank (linear drifts) and the Hörmander box infimum for ``model``."""
    rng = np.random.default_rng(seed)
    out = []
    A = model.linear
    if A is not None:
        out.append(kalman_report(A, model.B))
    box = catalog_box(model) if box is None else box
    out.append(hormander_infimum(model, box, n_x, n_u, rng))
    return out


__all__ = [
    "ConditionReport", "controllability_matrix", "kalman_rank", "kalman_report",
    "hormander_quantity", "hormander_infimum", "linear_hormander_equals_kalman1",
    "persistence_window", "verify_persistence", "PersistenceSweep", "persistence_sweep",
    "taylor_flow_remainder", "condition_suite",
]
