"""Numba-compiled path kernels.

One path at a time, event-driven: classical RK4 on (X, J, K) between jumps
with ``ceil(dt / hmax)`` equal substeps, then the additive jump.
"""

import math

import numpy as np
from numba import njit

KIND_LINEAR = 0
KIND_SINE = 1


@njit(cache=True, error_model="numpy")
def _g(t):
    if t <= 0.0:
        return 0.0
    return math.exp(-1.0 / t)


@njit(cache=True, error_model="numpy")
def _bump(r):
    if r <= 1.0:
        return 1.0
    if r >= 2.0:
        return 0.0
    a = _g(2.0 - r)
    b = _g(r - 1.0)
    return a / (a + b)


@njit(cache=True, error_model="numpy")
def _bump_deriv(r):
    if r <= 1.0 or r >= 2.0:
        return 0.0
    a = _g(2.0 - r)
    b = _g(r - 1.0)
    da = -a / (2.0 - r) ** 2
    db = b / (r - 1.0) ** 2
    return (da * b - a * db) / (a + b) ** 2


@njit(cache=True, error_model="numpy")
def _cutoff(z, grad):
    """h(z); writes grad h into ``grad``."""
    d = z.shape[0]
    r2 = 0.0
    for i in range(d):
        r2 += z[i] * z[i]
    r = math.sqrt(r2)
    if r >= 2.0:
        for i in range(d):
            grad[i] = 0.0
        return 0.0
    p = _bump(r)
    c = 4.0 * r2 * p + r2 * r * _bump_deriv(r)
    for i in range(d):
        grad[i] = c * z[i]
    return r2 * r2 * p


@njit(cache=True, error_model="numpy")
def _loggrad(z, alpha, eta, w, out):
    d = z.shape[0]
    r2 = 0.0
    s = 0.0
    for i in range(d):
        r2 += z[i] * z[i]
        s += w[i] * z[i]
    tilt = 0.0
    if eta != 0.0:
        ch = math.cosh(s)
        tilt = eta / (ch * ch) / (1.0 + eta * math.tanh(s))
    for i in range(d):
        out[i] = -(d + alpha) * z[i] / r2 + tilt * w[i]


@njit(cache=True, inline="always", error_model="numpy")
def _deriv(kind, P, shift, X, J, K, dX, dJ, dK, G):
    d = X.shape[0]
    for i in range(d):
        acc = 0.0
        for j in range(d):
            if kind == KIND_LINEAR:
                G[i, j] = P[i, j]
                acc += P[i, j] * X[j]
            else:
                G[i, j] = P[i, j] * math.cos(X[j])
                acc += P[i, j] * math.sin(X[j])
        dX[i] = acc - shift[i]
    for i in range(d):
        for j in range(d):
            sj = 0.0
            sk = 0.0
            for k in range(d):
                sj += G[i, k] * J[k, j]
                sk += K[i, k] * G[k, j]
            dJ[i, j] = sj
            dK[i, j] = -sk


@njit(cache=True, error_model="numpy")
def _advance(kind, P, shift, X, J, K, dt, hmax, ws):
    """In-place RK4 over ``dt``; ``ws`` is a (16, d, d+...) scratch bundle."""
    if dt <= 0.0:
        return
    n = int(math.ceil(dt / hmax))
    if n < 1:
        n = 1
    h = dt / n
    d = X.shape[0]
    kX, kJ, kK, Xs, Js, Ks, G = ws
    for _ in range(n):
        _deriv(kind, P, shift, X, J, K, kX[0], kJ[0], kK[0], G)
        for st in range(1, 4):
            c = 0.5 * h if st < 3 else h
            for i in range(d):
                Xs[i] = X[i] + c * kX[st - 1, i]
                for j in range(d):
                    Js[i, j] = J[i, j] + c * kJ[st - 1, i, j]
                    Ks[i, j] = K[i, j] + c * kK[st - 1, i, j]
            _deriv(kind, P, shift, Xs, Js, Ks, kX[st], kJ[st], kK[st], G)
        for i in range(d):
            X[i] += h / 6.0 * (kX[0, i] + 2.0 * kX[1, i] + 2.0 * kX[2, i] + kX[3, i])
            for j in range(d):
                J[i, j] += h / 6.0 * (kJ[0, i, j] + 2.0 * kJ[1, i, j] + 2.0 * kJ[2, i, j] + kJ[3, i, j])
                K[i, j] += h / 6.0 * (kK[0, i, j] + 2.0 * kK[1, i, j] + 2.0 * kK[2, i, j] + kK[3, i, j])


@njit(cache=True, error_model="numpy")
def _workspace(d):
    return (
        np.zeros((4, d)),
        np.zeros((4, d, d)),
        np.zeros((4, d, d)),
        np.zeros(d),
        np.zeros((d, d)),
        np.zeros((d, d)),
        np.zeros((d, d)),
    )


@njit(cache=True, error_model="numpy")
def advance(kind, P, shift, X, J, K, dt, hmax):
    """Return (X, J, K) advanced by ``dt`` with no jumps."""
    X = X.copy()
    J = J.copy()
    K = K.copy()
    _advance(kind, P, shift, X, J, K, dt, hmax, _workspace(X.shape[0]))
    return X, J, K


@njit(cache=True, error_model="numpy")
def _run_path(kind, P, B, shift, x0, T, hmax, times, marks, alpha, eta, w,
              X, J, K, M, skor, rec, Xrec, Jrec, Krec, ws, KB, gh, gl):
    d = x0.shape[0]
    for i in range(d):
        X[i] = x0[i]
        for j in range(d):
            J[i, j] = 1.0 if i == j else 0.0
            K[i, j] = 1.0 if i == j else 0.0
            M[i, j] = 0.0
        skor[i] = 0.0
    hsum = 0.0
    t = 0.0
    for e in range(times.shape[0]):
        s = times[e]
        _advance(kind, P, shift, X, J, K, s - t, hmax, ws)
        t = s
        z = marks[e]
        if rec:
            for i in range(d):
                Xrec[e, i] = X[i]
                for j in range(d):
                    Jrec[e, i, j] = J[i, j]
                    Krec[e, i, j] = K[i, j]
        hz = _cutoff(z, gh)
        if hz > 0.0:
            hsum += hz
            _loggrad(z, alpha, eta, w, gl)
            for i in range(d):
                for j in range(d):
                    acc = 0.0
                    for k in range(d):
                        acc += K[i, k] * B[k, j]
                    KB[i, j] = acc
            for i in range(d):
                for j in range(d):
                    acc = 0.0
                    for k in range(d):
                        acc += KB[i, k] * KB[j, k]
                    M[i, j] += hz * acc
                acc = 0.0
                for k in range(d):
                    acc += KB[i, k] * (hz * gl[k] + gh[k])
                skor[i] += acc
        for i in range(d):
            acc = 0.0
            for k in range(d):
                acc += B[i, k] * z[k]
            X[i] += acc
    _advance(kind, P, shift, X, J, K, T - t, hmax, ws)
    return hsum


@njit(cache=True, error_model="numpy")
def flow_batch(kind, P, B, shift, x0, T, hmax, offsets, times, marks, alpha, eta, w):
    """Terminal flow and Malliavin accumulators for every path of a batch."""
    n = offsets.shape[0] - 1
    d = x0.shape[0]
    XT = np.zeros((n, d))
    JT = np.zeros((n, d, d))
    KT = np.zeros((n, d, d))
    MT = np.zeros((n, d, d))
    SK = np.zeros((n, d))
    HS = np.zeros(n)
    ws = _workspace(d)
    KB = np.zeros((d, d))
    gh = np.zeros(d)
    gl = np.zeros(d)
    dummy = np.zeros((1, 1))
    dummy3 = np.zeros((1, 1, 1))
    for p in range(n):
        a = offsets[p]
        b = offsets[p + 1]
        HS[p] = _run_path(kind, P, B, shift, x0, T, hmax, times[a:b], marks[a:b], alpha, eta, w,
                          XT[p], JT[p], KT[p], MT[p], SK[p], False, dummy, dummy3, dummy3,
                          ws, KB, gh, gl)
    return XT, JT, KT, MT, SK, HS


@njit(cache=True, error_model="numpy")
def flow_record(kind, P, B, shift, x0, T, hmax, times, marks, alpha, eta, w):
    """Single path, also returning the pre-jump (X, J, K) at every event."""
    d = x0.shape[0]
    ne = times.shape[0]
    X = np.zeros(d)
    J = np.zeros((d, d))
    K = np.zeros((d, d))
    M = np.zeros((d, d))
    skor = np.zeros(d)
    Xrec = np.zeros((ne, d))
    Jrec = np.zeros((ne, d, d))
    Krec = np.zeros((ne, d, d))
    hs = _run_path(kind, P, B, shift, x0, T, hmax, times, marks, alpha, eta, w,
                   X, J, K, M, skor, True, Xrec, Jrec, Krec,
                   _workspace(d), np.zeros((d, d)), np.zeros(d), np.zeros(d))
    return X, J, K, M, skor, hs, Xrec, Jrec, Krec


@njit(cache=True, error_model="numpy")
def replay_batch(kind, P, B, shift, x0, T, hmax, offsets, times, marks, extra, eps):
    """Terminal states when jump j adds ``B z_j + eps * extra_j``."""
    n = offsets.shape[0] - 1
    d = x0.shape[0]
    out = np.zeros((n, d))
    ws = _workspace(d)
    J = np.zeros((d, d))
    K = np.zeros((d, d))
    X = np.zeros(d)
    for p in range(n):
        for i in range(d):
            X[i] = x0[i]
            for j in range(d):
                J[i, j] = 1.0 if i == j else 0.0
                K[i, j] = 1.0 if i == j else 0.0
        t = 0.0
        for e in range(offsets[p], offsets[p + 1]):
            _advance(kind, P, shift, X, J, K, times[e] - t, hmax, ws)
            t = times[e]
            for i in range(d):
                acc = 0.0
                for k in range(d):
                    acc += B[i, k] * marks[e, k]
                X[i] += acc
            if eps != 0.0:
                for i in range(d):
                    X[i] += eps * extra[e, i]
        _advance(kind, P, shift, X, J, K, T - t, hmax, ws)
        for i in range(d):
            out[p, i] = X[i]
    return out


@njit(cache=True, error_model="numpy")
def jacobi_eigvalsh(A, tol, max_sweeps):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations (ascending)."""
    a = A.copy()
    d = a.shape[0]
    fro = 0.0
    for i in range(d):
        for j in range(d):
            fro += a[i, j] * a[i, j]
    fro = math.sqrt(fro)
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(d):
            for j in range(i + 1, d):
                off += 2.0 * a[i, j] * a[i, j]
        if math.sqrt(off) <= tol * fro or off == 0.0:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for r in range(d):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = c * arp - s * arq
                    a[r, q] = s * arp + c * arq
                for r in range(d):
                    apr = a[p, r]
                    aqr = a[q, r]
                    a[p, r] = c * apr - s * aqr
                    a[q, r] = s * apr + c * aqr
                a[p, q] = 0.0
                a[q, p] = 0.0
    ev = np.empty(d)
    for i in range(d):
        ev[i] = a[i, i]
    return np.sort(ev)


@njit(cache=True, error_model="numpy")
def min_eig_batch(Ms, tol, max_sweeps):
    n = Ms.shape[0]
    out = np.empty(n)
    for k in range(n):
        out[k] = jacobi_eigvalsh(Ms[k], tol, max_sweeps)[0]
    return out
