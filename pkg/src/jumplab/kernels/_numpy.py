"""Pure-numpy path kernels.

Same stepping rule and arithmetic order as the compiled kernels, but
vectorised across paths: the k-th jump of every path that has one is
processed together, and substeps are masked per path.
"""

import numpy as np

KIND_LINEAR = 0
KIND_SINE = 1


def _g(t):
    safe = np.where(t > 0.0, t, 1.0)
    return np.where(t > 0.0, np.exp(-1.0 / safe), 0.0)


def _bump_and_deriv(r):
    collar = (r > 1.0) & (r < 2.0)
    rc = np.where(collar, r, 1.5)
    a = _g(2.0 - rc)
    b = _g(rc - 1.0)
    da = -a / (2.0 - rc) ** 2
    db = b / (rc - 1.0) ** 2
    p = np.where(r <= 1.0, 1.0, np.where(r >= 2.0, 0.0, a / (a + b)))
    dp = np.where(collar, (da * b - a * db) / (a + b) ** 2, 0.0)
    return p, dp


def _cutoff(z):
    """h and grad h for marks of shape (n, d)."""
    d = z.shape[1]
    r2 = np.zeros(z.shape[0])
    for i in range(d):
        r2 = r2 + z[:, i] * z[:, i]
    r = np.sqrt(r2)
    p, dp = _bump_and_deriv(r)
    outside = r >= 2.0
    c = np.where(outside, 0.0, 4.0 * r2 * p + r2 * r * dp)
    h = np.where(outside, 0.0, r2 * r2 * p)
    return h, c[:, None] * z


def _loggrad(z, alpha, eta, w):
    d = z.shape[1]
    r2 = np.zeros(z.shape[0])
    s = np.zeros(z.shape[0])
    for i in range(d):
        r2 = r2 + z[:, i] * z[:, i]
        s = s + w[i] * z[:, i]
    r2 = np.where(r2 > 0.0, r2, 1.0)
    tilt = np.zeros(z.shape[0])
    if eta != 0.0:
        ch = np.cosh(s)
        tilt = eta / (ch * ch) / (1.0 + eta * np.tanh(s))
    out = np.empty_like(z)
    for i in range(d):
        out[:, i] = -(d + alpha) * z[:, i] / r2 + tilt * w[i]
    return out


def _deriv(kind, P, shift, X, J, K):
    n, d = X.shape
    G = np.empty((n, d, d))
    dX = np.empty((n, d))
    for i in range(d):
        acc = np.zeros(n)
        for j in range(d):
            if kind == KIND_LINEAR:
                G[:, i, j] = P[i, j]
                acc = acc + P[i, j] * X[:, j]
            else:
                G[:, i, j] = P[i, j] * np.cos(X[:, j])
                acc = acc + P[i, j] * np.sin(X[:, j])
        dX[:, i] = acc - shift[i]
    dJ = np.empty((n, d, d))
    dK = np.empty((n, d, d))
    for i in range(d):
        for j in range(d):
            sj = np.zeros(n)
            sk = np.zeros(n)
            for k in range(d):
                sj = sj + G[:, i, k] * J[:, k, j]
                sk = sk + K[:, i, k] * G[:, k, j]
            dJ[:, i, j] = sj
            dK[:, i, j] = -sk
    return dX, dJ, dK


def _rk4_step(kind, P, shift, X, J, K, h):
    hv = h[:, None]
    hm = h[:, None, None]
    k1 = _deriv(kind, P, shift, X, J, K)
    k2 = _deriv(kind, P, shift, X + 0.5 * hv * k1[0], J + 0.5 * hm * k1[1], K + 0.5 * hm * k1[2])
    k3 = _deriv(kind, P, shift, X + 0.5 * hv * k2[0], J + 0.5 * hm * k2[1], K + 0.5 * hm * k2[2])
    k4 = _deriv(kind, P, shift, X + hv * k3[0], J + hm * k3[1], K + hm * k3[2])
    X = X + hv / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    J = J + hm / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    K = K + hm / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    return X, J, K


def _advance_rows(kind, P, shift, X, J, K, dt, hmax):
    """Advance every row by its own ``dt`` (in place on the passed arrays)."""
    dt = np.asarray(dt, dtype=float)
    pos = dt > 0.0
    nsub = np.where(pos, np.maximum(np.ceil(dt / hmax), 1.0), 0.0).astype(np.int64)
    h = np.where(pos, dt / np.maximum(nsub, 1), 0.0)
    top = int(nsub.max()) if nsub.size else 0
    for s in range(top):
        sel = np.flatnonzero(nsub > s)
        x, j, k = _rk4_step(kind, P, shift, X[sel], J[sel], K[sel], h[sel])
        X[sel] = x
        J[sel] = j
        K[sel] = k


def advance(kind, P, shift, X, J, K, dt, hmax):
    """Return (X, J, K) advanced by ``dt`` with no jumps."""
    Xb, Jb, Kb = X[None].copy(), J[None].copy(), K[None].copy()
    _advance_rows(kind, P, shift, Xb, Jb, Kb, np.array([dt]), hmax)
    return Xb[0], Jb[0], Kb[0]


def _init(n, d, x0):
    X = np.tile(np.asarray(x0, dtype=float), (n, 1))
    J = np.tile(np.eye(d), (n, 1, 1))
    K = np.tile(np.eye(d), (n, 1, 1))
    return X, J, K


def _jump_shift(B, z):
    d = B.shape[0]
    out = np.empty((z.shape[0], d))
    for i in range(d):
        acc = np.zeros(z.shape[0])
        for k in range(d):
            acc = acc + B[i, k] * z[:, k]
        out[:, i] = acc
    return out


def _batch(kind, P, B, shift, x0, T, hmax, offsets, times, marks, alpha, eta, w, rec):
    n = offsets.shape[0] - 1
    d = x0.shape[0]
    X, J, K = _init(n, d, x0)
    M = np.zeros((n, d, d))
    SK = np.zeros((n, d))
    HS = np.zeros(n)
    ne = times.shape[0]
    Xrec = np.zeros((ne, d)) if rec else None
    Jrec = np.zeros((ne, d, d)) if rec else None
    Krec = np.zeros((ne, d, d)) if rec else None
    t = np.zeros(n)
    counts = np.diff(offsets)
    for r in range(int(counts.max()) if n else 0):
        act = np.flatnonzero(counts > r)
        ev = offsets[act] + r
        s = times[ev]
        Xa, Ja, Ka = X[act], J[act], K[act]
        _advance_rows(kind, P, shift, Xa, Ja, Ka, s - t[act], hmax)
        t[act] = s
        if rec:
            Xrec[ev], Jrec[ev], Krec[ev] = Xa, Ja, Ka
        z = marks[ev]
        hz, gh = _cutoff(z)
        live = hz > 0.0
        if np.any(live):
            li = np.flatnonzero(live)
            gl = _loggrad(z[li], alpha, eta, w)
            Kl = Ka[li]
            KB = np.empty((li.shape[0], d, d))
            for i in range(d):
                for j in range(d):
                    acc = np.zeros(li.shape[0])
                    for k in range(d):
                        acc = acc + Kl[:, i, k] * B[k, j]
                    KB[:, i, j] = acc
            rows = act[li]
            hl = hz[li]
            HS[rows] = HS[rows] + hl
            for i in range(d):
                for j in range(d):
                    acc = np.zeros(li.shape[0])
                    for k in range(d):
                        acc = acc + KB[:, i, k] * KB[:, j, k]
                    M[rows, i, j] = M[rows, i, j] + hl * acc
                acc = np.zeros(li.shape[0])
                for k in range(d):
                    acc = acc + KB[:, i, k] * (hl * gl[:, k] + gh[li, k])
                SK[rows, i] = SK[rows, i] + acc
        X[act] = Xa + _jump_shift(B, z)
        J[act] = Ja
        K[act] = Ka
    _advance_rows(kind, P, shift, X, J, K, T - t, hmax)
    return X, J, K, M, SK, HS, Xrec, Jrec, Krec


def flow_batch(kind, P, B, shift, x0, T, hmax, offsets, times, marks, alpha, eta, w):
    """Terminal flow and Malliavin accumulators for every path of a batch."""
    return _batch(kind, P, B, shift, x0, T, hmax, offsets, times, marks, alpha, eta, w, False)[:6]


def flow_record(kind, P, B, shift, x0, T, hmax, times, marks, alpha, eta, w):
    """Single path, also returning the pre-jump (X, J, K) at every event."""
    offsets = np.array([0, times.shape[0]], dtype=np.int64)
    X, J, K, M, SK, HS, Xr, Jr, Kr = _batch(kind, P, B, shift, x0, T, hmax, offsets, times,
                                            marks, alpha, eta, w, True)
    return X[0], J[0], K[0], M[0], SK[0], HS[0], Xr, Jr, Kr


def replay_batch(kind, P, B, shift, x0, T, hmax, offsets, times, marks, extra, eps):
    """Terminal states when jump j adds ``B z_j + eps * extra_j``."""
    n = offsets.shape[0] - 1
    d = x0.shape[0]
    X, J, K = _init(n, d, x0)
    t = np.zeros(n)
    counts = np.diff(offsets)
    for r in range(int(counts.max()) if n else 0):
        act = np.flatnonzero(counts > r)
        ev = offsets[act] + r
        Xa, Ja, Ka = X[act], J[act], K[act]
        _advance_rows(kind, P, shift, Xa, Ja, Ka, times[ev] - t[act], hmax)
        t[act] = times[ev]
        Xa = Xa + _jump_shift(B, marks[ev])
        if eps != 0.0:
            Xa = Xa + eps * extra[ev]
        X[act], J[act], K[act] = Xa, Ja, Ka
    _advance_rows(kind, P, shift, X, J, K, T - t, hmax)
    return X


def jacobi_eigvalsh(A, tol, max_sweeps):
    """Eigenvalues of one symmetric matrix by cyclic Jacobi rotations (ascending)."""
    return _jacobi_batch(np.asarray(A, dtype=float)[None], tol, max_sweeps)[0]


def _jacobi_batch(Ms, tol, max_sweeps):
    a = np.array(Ms, dtype=float, copy=True)
    n, d, _ = a.shape
    fro = np.sqrt(np.sum(a * a, axis=(1, 2)))
    done = np.zeros(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.zeros(n)
        for i in range(d):
            for j in range(i + 1, d):
                off = off + 2.0 * a[:, i, j] * a[:, i, j]
        done |= (np.sqrt(off) <= tol * fro) | (off == 0.0)
        if done.all():
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[:, p, q]
                rot = (apq != 0.0) & ~done
                if not rot.any():
                    continue
                sapq = np.where(rot, apq, 1.0)
                theta = (a[:, q, q] - a[:, p, p]) / (2.0 * sapq)
                t = 1.0 / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(theta < 0.0, -t, t)
                c = np.where(rot, 1.0 / np.sqrt(t * t + 1.0), 1.0)
                s = np.where(rot, t * c, 0.0)
                cc, ss = c[:, None], s[:, None]
                arp, arq = a[:, :, p].copy(), a[:, :, q].copy()
                a[:, :, p] = cc * arp - ss * arq
                a[:, :, q] = ss * arp + cc * arq
                apr, aqr = a[:, p, :].copy(), a[:, q, :].copy()
                a[:, p, :] = cc * apr - ss * aqr
                a[:, q, :] = ss * apr + cc * aqr
                a[rot, p, q] = 0.0
                a[rot, q, p] = 0.0
    return np.sort(np.diagonal(a, axis1=1, axis2=2), axis=1)


def min_eig_batch(Ms, tol, max_sweeps):
    if Ms.shape[0] == 0:
        return np.empty(0)
    return _jacobi_batch(Ms, tol, max_sweeps)[:, 0]


__all__ = [
    "KIND_LINEAR",
    "KIND_SINE",
    "advance",
    "flow_batch",
    "flow_record",
    "replay_batch",
    "jacobi_eigvalsh",
    "min_eig_batch",
]
