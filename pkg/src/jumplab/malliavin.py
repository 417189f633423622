"""Per-path Malliavin objects for additive jump noise.

With ``xi_i(s) = B^T K_s^T e_i`` and ``v_i(z, s) = h(z) xi_i(s)``:

* ``M_t = sum_j h(z_j) K_j B B^T K_j^T`` (pre-jump ``K_j``),
* ``D_{V_i} X_t = J_t M_t e_i``,
* ``delta(V_i) = sum_j div(rho h xi_i)(z_j) / rho(z_j)``; the compensator
  term vanishes because ``rho h xi`` is compactly supported.

The integration-by-parts identity holds in the form
``E[D_V f(X_t)] = -E[f(X_t) delta(V)]``; :func:`ibp_residual` uses that
sign and can also evaluate the opposite one as a control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import kernels
from .errors import ConfigError, DomainError
from .flow import DEFAULT_HMAX, ModelSpec, Trajectory, replay_batch, solve_batch
from .levy import (PathBatch, StableLikeMeasure, cutoff_h, grad_cutoff_h, levy_density_loggrad,
                   sample_batch)
from .montecarlo import mean_se, run_blocks

EIG_TOL = 1e-12
_JACOBI_RTOL = 1e-15
_JACOBI_SWEEPS = 64


@dataclass
class MalliavinRecord:
    t: float
    M: np.ndarray
    lambda_min: float
    DVX: np.ndarray
    skorohod: np.ndarray


# ---------------------------------------------------------------------------
# single-path operations


def _check_direction(i: int, d: int) -> int:
    if not 0 <= int(i) < d:
        raise DomainError(f"direction index must lie in 0..{d - 1}, got {i}")
    return int(i)


def _live_jumps(traj: Trajectory):
    """Pre-jump K, marks and h for events with h(z) > 0."""
    marks = np.asarray(traj.path.marks, dtype=float).reshape(-1, traj.model.d)
    h = cutoff_h(marks)
    live = h > 0.0
    return traj.K_at_jumps[live], marks[live], h[live]


def xi(traj: Trajectory, i: int) -> np.ndarray:
    """xi_i(s_j) = B^T K_{s_j}^T e_i for every event (rows)."""
    i = _check_direction(i, traj.model.d)
    Ks = traj.K_at_jumps
    return (Ks[:, i, :] @ traj.model.B) if Ks.shape[0] else np.zeros((0, traj.model.d))


def simplified_malliavin_matrix(traj: Trajectory) -> np.ndarray:
    """M = sum_j h(z_j) K_j B B^T K_j^T over the recorded pre-jump flows."""
    Ks, _, h = _live_jumps(traj)
    KB = Ks @ traj.model.B
    M = np.einsum("j,jab,jcb->ac", h, KB, KB) if h.size else np.zeros((traj.model.d,) * 2)
    return 0.5 * (M + M.T)


def smallest_eigenvalue(M, tol: float = EIG_TOL) -> float:
    """Smallest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.

    Raises
    ------
    DomainError
        If ``M`` is not square or is asymmetric beyond ``1e-10``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] > 16:
        raise DomainError("the Jacobi eigensolver is limited to d <= 16")
    if np.abs(M - M.T).max(initial=0.0) > 1e-10:
        raise DomainError("matrix is not symmetric (asymmetry above 1e-10)")
    if not np.any(M):
        return 0.0
    rtol = min(_JACOBI_RTOL, tol / max(np.abs(M).max(), 1.0))
    return float(kernels.jacobi_eigvalsh(np.ascontiguousarray(M), rtol, _JACOBI_SWEEPS)[0])


def smallest_eigenvalues(Ms) -> np.ndarray:
    """Batched :func:`smallest_eigenvalue` for an array of shape (n, d, d)."""
    Ms = np.ascontiguousarray(Ms, dtype=float)
    return kernels.min_eig_batch(Ms, _JACOBI_RTOL, _JACOBI_SWEEPS)


def quadratic_form_minimum(M, n_u: int, rng, refine: bool = True):
    """Minimum of u^T M u over ``n_u`` random unit vectors, optionally polished.

    Polishing runs shifted power iteration from the best sample, which stays
    on the sphere and only needs matrix-vector products.

    Returns
    -------
    value : float
    u : ndarray
        The unit vector attaining ``value``.
    """
    M = np.asarray(M, dtype=float)
    d = M.shape[0]
    U = rng.standard_normal((n_u, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    q = np.einsum("ni,ij,nj->n", U, M, U)
    k = int(np.argmin(q))
    u, best = U[k], float(q[k])
    if refine and d > 1:
        shift = float(np.abs(M).sum(axis=1).max())  # Gershgorin bound on the spectrum
        for _ in range(20000):
            w = shift * u - M @ u
            nw = np.linalg.norm(w)
            if nw == 0.0:
                break
            w /= nw
            val = float(w @ M @ w)
            done = abs(val - best) <= 1e-16 * max(1.0, abs(best))
            if val <= best:
                u, best = w, val
            if done:
                break
    return best, u


def directional_derivative(traj: Trajectory, i: int) -> np.ndarray:
    """D_{V_i} X_T = J_T sum_j h(z_j) K_j B xi_i(s_j)."""
    i = _check_direction(i, traj.model.d)
    Ks, _, h = _live_jumps(traj)
    if not h.size:
        return np.zeros(traj.model.d)
    KB = Ks @ traj.model.B
    xs = KB[:, i, :]
    inner = np.einsum("j,jab,jb->a", h, KB, xs)
    return traj.terminal.J @ inner


def skorohod_integral(traj: Trajectory, i: int) -> float:
    """delta(V_i) = sum_j [<grad rho / rho, xi_i> h + <grad h, xi_i>] at (s_j, z_j)."""
    i = _check_direction(i, traj.model.d)
    Ks, marks, h = _live_jumps(traj)
    if not h.size:
        return 0.0
    xs = (Ks @ traj.model.B)[:, i, :]
    g = levy_density_loggrad(traj.path.measure, marks)
    gh = grad_cutoff_h(marks)
    terms = h * np.einsum("ja,ja->j", g, xs) + np.einsum("ja,ja->j", gh, xs)
    return float(np.sum(terms))


def malliavin_record(traj: Trajectory) -> MalliavinRecord:
    M = simplified_malliavin_matrix(traj)
    d = traj.model.d
    return MalliavinRecord(
        t=traj.terminal.t,
        M=M,
        lambda_min=smallest_eigenvalue(M),
        DVX=np.column_stack([directional_derivative(traj, i) for i in range(d)]),
        skorohod=np.array([skorohod_integral(traj, i) for i in range(d)]),
    )


def perturbation_increments(traj: Trajectory, i: int) -> np.ndarray:
    """Per-event extra increment ``B h(z_j) xi_i(s_j)`` with xi frozen on ``traj``."""
    marks = np.asarray(traj.path.marks, dtype=float).reshape(-1, traj.model.d)
    return (cutoff_h(marks)[:, None] * xi(traj, i)) @ traj.model.B.T


def perturbed_replay(model: ModelSpec, x0, traj: Trajectory, i: int, eps: float) -> np.ndarray:
    """Terminal X after replaying ``traj.path`` with jumps ``B z_j + eps B h(z_j) xi_i(s_j)``."""
    path = traj.path
    batch = PathBatch(path.horizon, np.array([0, len(path)], dtype=np.int64),
                      np.asarray(path.times, float), np.asarray(path.marks, float).reshape(-1, model.d),
                      path.measure)
    extra = perturbation_increments(traj, i)
    return replay_batch(model, x0, batch, extra, eps, hmax=traj.hmax)[0]


def divergence_compensator(measure: StableLikeMeasure, xi_vec, r_lo: float = 0.0, n_r: int = 64,
                           n_theta: int = 256) -> float:
    """Quadrature of the integral of div(rho h xi) over {r_lo <= |z| <= 2}.

    ``rho`` is the untruncated density.  With ``r_lo = 0`` the divergence
    theorem makes the integral vanish; with ``r_lo = trunc`` it equals minus
    the flux through the truncation sphere, which is zero for isotropic
    measures.  Radial Gauss-Legendre on up to three panels times an angular
    trapezoid rule; supports d = 1 and d = 2.
    """
    xi_vec = np.asarray(xi_vec, dtype=float)
    d = measure.d
    x, w = special.roots_legendre(n_r)
    rs, ws = [], []
    edges = sorted({r_lo, min(max(measure.trunc, r_lo), 1.0), 1.0, 2.0})
    for a, b in zip(edges[:-1], edges[1:]):
        rs.append(0.5 * (b - a) * x + 0.5 * (b + a))
        ws.append(0.5 * (b - a) * w)
    r = np.concatenate(rs)
    wr = np.concatenate(ws)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
        wa = np.ones(2)
    elif d == 2:
        th = 2.0 * math.pi * np.arange(n_theta) / n_theta
        dirs = np.column_stack([np.cos(th), np.sin(th)])
        wa = np.full(n_theta, 2.0 * math.pi / n_theta)
    else:
        raise DomainError("divergence quadrature supports d <= 2")
    z = r[:, None, None] * dirs[None, :, :]
    rho = measure.amplitude(z) / r[:, None] ** (d + measure.alpha)
    h = cutoff_h(z)
    g = levy_density_loggrad(measure, z)
    div = rho * (h * (g @ xi_vec) + grad_cutoff_h(z) @ xi_vec)
    return float(np.einsum("r,a,ra->", wr * r ** (d - 1), wa, div))


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class FlowTask:
    """Picklable block job returning terminal flow and Malliavin data per path."""

    model: ModelSpec
    measure: StableLikeMeasure
    x0: tuple
    horizon: float
    seed: int
    stream: int = 0
    hmax: float = DEFAULT_HMAX
    eigen: bool = True

    def __call__(self, start: int, count: int) -> dict:
        batch = sample_batch(self.measure, self.horizon, self.seed, start, count, self.stream)
        bf = solve_batch(self.model, np.asarray(self.x0, float), batch, self.hmax)
        out = {
            "X": bf.X,
            "DVX": np.einsum("nab,nbc->nac", bf.J, bf.M),
            "M": bf.M,
            "skorohod": bf.skorohod,
            "h_sum": bf.h_sum,
            "n_events": np.diff(batch.offsets),
        }
        if self.eigen:
            out["lambda_min"] = smallest_eigenvalues(bf.M)
        return out


@dataclass(frozen=True)
class TestFunction:
    """Bounded smooth test functions for the integration-by-parts check.

    ``kind`` is ``"cos"`` (cos<k, x>), ``"sin"``, ``"const"`` or ``"coord"``
    (x_c with ``c = int(k[0])``; unbounded, used for closed-form checks).
    """

    __test__ = False  # not a pytest class

    kind: str = "cos"
    k: tuple = (1.0, 1.0)

    def value(self, X):
        X = np.asarray(X, dtype=float)
        if self.kind == "cos":
            return np.cos(X @ np.asarray(self.k))
        if self.kind == "sin":
            return np.sin(X @ np.asarray(self.k))
        if self.kind == "const":
            return np.full(X.shape[0], float(self.k[0]))
        if self.kind == "coord":
            return X[:, int(self.k[0])].copy()
        raise ConfigError(f"unknown test function {self.kind!r}")

    def grad(self, X):
        X = np.asarray(X, dtype=float)
        k = np.asarray(self.k, dtype=float)
        if self.kind == "cos":
            return -np.sin(X @ k)[:, None] * k
        if self.kind == "sin":
            return np.cos(X @ k)[:, None] * k
        if self.kind == "const":
            return np.zeros_like(X)
        if self.kind == "coord":
            g = np.zeros_like(X)
            g[:, int(self.k[0])] = 1.0
            return g
        raise ConfigError(f"unknown test function {self.kind!r}")


@dataclass
class IBPResult:
    direction: int
    lhs: float
    rhs: float
    residual: float
    stderr: float
    lhs_stderr: float
    rhs_stderr: float
    n_paths: int

    @property
    def z_score(self) -> float:
        return self.residual / self.stderr if self.stderr > 0 else 0.0


def ibp_from_samples(X, DVX, skor, f: TestFunction, i: int, sign: float = -1.0) -> IBPResult:
    """IBP statistics from per-path terminal samples.

    ``lhs = mean <grad f(X), D_{V_i} X>`` and ``rhs = sign * mean f(X) delta(V_i)``.
    The residual's standard error is that of the per-path difference, which
    accounts for the correlation between the two sides.
    """
    fx = f.value(X)
    a = np.einsum("na,na->n", f.grad(X), DVX[:, :, i])
    b = sign * fx * skor[:, i]
    la, lb, diff = mean_se(a), mean_se(b), mean_se(a - b)
    return IBPResult(i, la.mean, lb.mean, diff.mean, diff.stderr, la.stderr, lb.stderr, la.n)


def ibp_residual(model: ModelSpec, f_spec: TestFunction, t: float, n_paths: int, seed: int,
                 measure: StableLikeMeasure | None = None, x0=None, directions=None,
                 workers: int = 1, hmax: float = DEFAULT_HMAX, sign: float = -1.0,
                 stream: int = 0) -> list[IBPResult]:
    """Monte Carlo check of ``E[D_{V_i} f(X_t)] = -E[f(X_t) delta(V_i)]``.

    Parameters
    ----------
    seed : int
        Master seed; path ``p`` draws from its own counter-based stream.
    sign : float
        ``-1`` for the identity above; ``+1`` evaluates the opposite sign.

    Raises
    ------
    ConfigError
        If ``n_paths < 100``.
    """
    if n_paths < 100:
        raise ConfigError(f"n_paths must be at least 100, got {n_paths}")
    measure = measure or StableLikeMeasure(d=model.d)
    x0 = np.zeros(model.d) if x0 is None else np.asarray(x0, dtype=float)
    task = FlowTask(model, measure, tuple(x0), float(t), int(seed), stream, hmax, eigen=False)
    res = run_blocks(task, n_paths, workers)
    dirs = range(model.d) if directions is None else directions
    return [ibp_from_samples(res["X"], res["DVX"], res["skorohod"], f_spec, i, sign) for i in dirs]
