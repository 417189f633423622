"""Event-driven integration of the state, Jacobi flow and inverse flow.

Between jumps the coupled system

    dX = (a(X) - B b_delta) dt,   dJ = grad a(X) J dt,   dK = -K grad a(X) dt

is advanced by classical RK4 with ``ceil(dt / hmax)`` equal substeps.  At a
jump the state moves by ``B z``; J and K are continuous because the noise is
additive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, NumericError
from .levy import JumpPath, PathBatch

DEFAULT_HMAX = 1e-3

_KINDS = {"linear": kernels.KIND_LINEAR, "sine": kernels.KIND_SINE}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """SDE ``dX = a(X) dt + B dL`` with a drift from a small closed family.

    ``kind="linear"`` means ``a(x) = P x``; ``kind="sine"`` means
    ``a(x) = P sin(x)`` (componentwise sine), so ``grad a(x) = P diag(cos x)``.
    ``grad_bound`` is the operator 2-norm of ``P``, a global bound on
    ``|grad a|`` for both kinds.
    """

    name: str
    B: np.ndarray
    P: np.ndarray
    kind: str = "linear"
    grad_bound: float | None = None

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        P = np.array(self.P, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise DomainError(f"B must be square, got shape {B.shape}")
        if P.shape != B.shape:
            raise DomainError(f"drift matrix shape {P.shape} does not match B {B.shape}")
        if self.kind not in _KINDS:
            raise DomainError(f"unknown drift kind {self.kind!r}")
        B.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "P", P)
        if self.grad_bound is None:
            object.__setattr__(self, "grad_bound", float(np.linalg.norm(P, 2)))

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def linear(self) -> np.ndarray | None:
        """The matrix A when the drift is ``a(x) = A x``, else None."""
        return self.P if self.kind == "linear" else None

    @property
    def kind_code(self) -> int:
        return _KINDS[self.kind]

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return x @ self.P.T
        return np.sin(x) @ self.P.T

    def drift_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return np.broadcast_to(self.P, x.shape[:-1] + self.P.shape).copy()
        return self.P * np.cos(x)[..., None, :]


def linear_model(A, B, name: str = "linear") -> ModelSpec:
    return ModelSpec(name, np.asarray(B, float), np.asarray(A, float), "linear")


def catalog(name: str, d: int = 2) -> ModelSpec:
    """Named models: kalman, degenerate, sine, isotropic."""
    e1 = np.zeros((2, 2))
    e1[0, 0] = 1.0
    nil = np.array([[0.0, 0.0], [1.0, 0.0]])
    if name == "kalman":
        return ModelSpec("kalman", e1, nil, "linear")
    if name == "degenerate":
        return ModelSpec("degenerate", e1, np.zeros((2, 2)), "linear")
    if name == "sine":
        return ModelSpec("sine", e1, nil, "sine")
    if name == "isotropic":
        return ModelSpec("isotropic", np.eye(d), np.zeros((d, d)), "linear")
    raise DomainError(f"unknown catalog model {name!r}; choose from {sorted(CATALOG)}")


CATALOG = ("kalman", "degenerate", "sine", "isotropic")


@dataclass
class FlowState:
    t: float
    X: np.ndarray
    J: np.ndarray
    K: np.ndarray


@dataclass
class Trajectory:
    """Flow along one jump path.

    ``states_at_jumps[j]`` is the left limit at the j-th event time.  The
    Malliavin accumulators (``M``, ``skorohod`` and ``h_sum``) are filled by
    the same pass and are cross-checked in :mod:`jumplab.malliavin`.
    """

    model: ModelSpec
    path: JumpPath
    x0: np.ndarray
    states_at_jumps: list[FlowState]
    terminal: FlowState
    M: np.ndarray = field(repr=False, default=None)
    skorohod: np.ndarray = field(repr=False, default=None)
    h_sum: float = 0.0
    hmax: float = DEFAULT_HMAX

    @property
    def K_at_jumps(self) -> np.ndarray:
        d = self.model.d
        if not self.states_at_jumps:
            return np.zeros((0, d, d))
        return np.stack([s.K for s in self.states_at_jumps])


def _shift(model: ModelSpec, b_delta) -> np.ndarray:
    b = np.zeros(model.d) if b_delta is None else np.asarray(b_delta, dtype=float)
    return np.ascontiguousarray(model.B @ b)


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{name}: non-finite flow state (max |entry| "
                               f"{np.nanmax(np.abs(np.where(np.isfinite(a), a, np.nan)), initial=0.0):.3g})")


def integrate_between_jumps(state: FlowState, dt: float, model: ModelSpec, b_delta=None,
                            hmax: float = DEFAULT_HMAX) -> FlowState:
    """Advance (X, J, K) over ``dt`` with no jumps."""
    if dt < 0.0:
        raise DomainError(f"dt must be non-negative, got {dt}")
    X, J, K = kernels.advance(model.kind_code, model.P, _shift(model, b_delta),
                              np.asarray(state.X, float), np.asarray(state.J, float),
                              np.asarray(state.K, float), float(dt), float(hmax))
    _check_finite("integrate_between_jumps", X, J, K)
    return FlowState(state.t + dt, X, J, K)


def apply_jump(state: FlowState, z, model: ModelSpec) -> FlowState:
    """X <- X + B z; time and flows unchanged."""
    return FlowState(state.t, state.X + model.B @ np.asarray(z, dtype=float), state.J.copy(),
                     state.K.copy())


def initial_state(model: ModelSpec, x0) -> FlowState:
    d = model.d
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (d,):
        raise DomainError(f"x0 must have shape ({d},), got {x0.shape}")
    return FlowState(0.0, x0.copy(), np.eye(d), np.eye(d))


def _measure_args(path_measure):
    return (float(path_measure.alpha), float(path_measure.eta),
            np.asarray(path_measure.w, dtype=float))


def solve_path(model: ModelSpec, x0, path: JumpPath, hmax: float = DEFAULT_HMAX) -> Trajectory:
    """Alternate flow and jump steps over the sorted events of ``path``."""
    if path.measure.d != model.d:
        raise DomainError(f"path dimension {path.measure.d} != model dimension {model.d}")
    x0 = initial_state(model, x0).X
    times = np.ascontiguousarray(path.times, dtype=float)
    marks = np.ascontiguousarray(path.marks, dtype=float).reshape(-1, model.d)
    X, J, K, M, skor, hs, Xr, Jr, Kr = kernels.flow_record(
        model.kind_code, model.P, model.B, _shift(model, path.b_delta), x0, float(path.horizon),
        float(hmax), times, marks, *_measure_args(path.measure))
    _check_finite("solve_path", X, J, K)
    states = [FlowState(float(s), Xr[j], Jr[j], Kr[j]) for j, s in enumerate(times)]
    return Trajectory(model, path, x0, states, FlowState(float(path.horizon), X, J, K),
                      M=M, skorohod=skor, h_sum=float(hs), hmax=hmax)


@dataclass
class BatchFlow:
    """Terminal quantities for every path of a :class:`PathBatch`."""

    X: np.ndarray
    J: np.ndarray
    K: np.ndarray
    M: np.ndarray
    skorohod: np.ndarray
    h_sum: np.ndarray


def solve_batch(model: ModelSpec, x0, batch: PathBatch, hmax: float = DEFAULT_HMAX) -> BatchFlow:
    """Vectorised :func:`solve_path` returning terminal values only."""
    if batch.measure.d != model.d:
        raise DomainError(f"path dimension {batch.measure.d} != model dimension {model.d}")
    x0 = initial_state(model, x0).X
    out = kernels.flow_batch(
        model.kind_code, model.P, model.B, _shift(model, batch.measure.compensator_drift), x0,
        float(batch.horizon), float(hmax), np.ascontiguousarray(batch.offsets, dtype=np.int64),
        np.ascontiguousarray(batch.times, dtype=float),
        np.ascontiguousarray(batch.marks, dtype=float).reshape(-1, model.d),
        *_measure_args(batch.measure))
    _check_finite("solve_batch", out[0], out[1], out[2])
    return BatchFlow(*out)


def replay_batch(model: ModelSpec, x0, batch: PathBatch, extra, eps: float,
                 hmax: float = DEFAULT_HMAX) -> np.ndarray:
    """Terminal states when the j-th jump moves X by ``B z_j + eps * extra_j``."""
    x0 = initial_state(model, x0).X
    extra = np.ascontiguousarray(extra, dtype=float).reshape(-1, model.d)
    X = kernels.replay_batch(
        model.kind_code, model.P, model.B, _shift(model, batch.measure.compensator_drift), x0,
        float(batch.horizon), float(hmax), np.ascontiguousarray(batch.offsets, dtype=np.int64),
        np.ascontiguousarray(batch.times, dtype=float),
        np.ascontiguousarray(batch.marks, dtype=float).reshape(-1, model.d), extra, float(eps))
    _check_finite("replay_batch", X)
    return X


# ---------------------------------------------------------------------------
# diagnostics


def _states(traj: Trajectory):
    return list(traj.states_at_jumps) + [traj.terminal]


def inversion_error(traj: Trajectory) -> float:
    """max over recorded states of ||J K - I||_inf."""
    eye = np.eye(traj.model.d)
    return max(float(np.abs(s.J @ s.K - eye).max()) for s in _states(traj))


def norm_bound_ratio(traj: Trajectory) -> float:
    """max over recorded states of max(|J|, |K|) / exp(grad_bound * t)."""
    g = traj.model.grad_bound
    worst = 0.0
    for s in _states(traj):
        cap = math.exp(g * s.t)
        worst = max(worst, np.linalg.norm(s.J, 2) / cap, np.linalg.norm(s.K, 2) / cap)
    return worst
