"""The compiled kernels and the numpy fallback must agree to rounding error."""

import os
import subprocess
import sys

import numpy as np
import pytest

from jumplab import kernels
from jumplab.flow import catalog
from jumplab.kernels import _numpy as npk
from jumplab.levy import StableLikeMeasure, sample_batch

nbk = pytest.importorskip("jumplab.kernels._numba")


def _batch_args(name, eta=0.0):
    m = StableLikeMeasure(theta0=1.0, eta=eta, w=(0.6, 0.8))
    model = catalog(name)
    b = sample_batch(m, 1.0, 12, 0, 40)
    shift = np.ascontiguousarray(model.B @ m.compensator_drift)
    return (model.kind_code, model.P, model.B, shift, np.array([0.5, 0.25]), 1.0, 1e-3,
            b.offsets.astype(np.int64), np.ascontiguousarray(b.times),
            np.ascontiguousarray(b.marks), m.alpha, m.eta, np.asarray(m.w, float)), b


@pytest.mark.parametrize("name", ["kalman", "sine"])
@pytest.mark.parametrize("eta", [0.0, 0.4])
def test_flow_batch_parity(name, eta):
    args, _ = _batch_args(name, eta)
    a = nbk.flow_batch(*args)
    b = npk.flow_batch(*args)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-11, atol=1e-13)


def test_flow_record_parity():
    args, b = _batch_args("sine")
    lo, hi = b.offsets[3], b.offsets[4]
    rec = args[:7] + (args[8][lo:hi], args[9][lo:hi]) + args[10:]
    for x, y in zip(nbk.flow_record(*rec), npk.flow_record(*rec)):
        np.testing.assert_allclose(x, y, rtol=1e-11, atol=1e-13)


def test_replay_parity():
    args, b = _batch_args("sine")
    extra = np.random.default_rng(0).standard_normal(b.marks.shape)
    r = args[:10] + (extra, 1e-3)
    np.testing.assert_allclose(nbk.replay_batch(*r), npk.replay_batch(*r), rtol=1e-11, atol=1e-13)


def test_advance_parity(rng):
    P = rng.standard_normal((3, 3))
    X, J, K = rng.standard_normal(3), np.eye(3), np.eye(3)
    for kind in (kernels.KIND_LINEAR, kernels.KIND_SINE):
        a = nbk.advance(kind, P, np.zeros(3), X, J, K, 0.37, 1e-3)
        b = npk.advance(kind, P, np.zeros(3), X, J, K, 0.37, 1e-3)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-14)


def test_eigen_parity(rng):
    A = rng.standard_normal((50, 3, 3))
    S = A @ np.transpose(A, (0, 2, 1))
    np.testing.assert_allclose(nbk.min_eig_batch(S, 1e-15, 64), npk.min_eig_batch(S, 1e-15, 64),
                               atol=1e-13)
    np.testing.assert_allclose(nbk.jacobi_eigvalsh(S[0], 1e-15, 64),
                               np.linalg.eigvalsh(S[0]), atol=1e-12)
    np.testing.assert_allclose(npk.jacobi_eigvalsh(S[0], 1e-15, 64),
                               np.linalg.eigvalsh(S[0]), atol=1e-12)


@pytest.mark.parametrize("flag,expected", [("1", "False"), ("0", "True")])
def test_environment_flag_selects_backend(flag, expected):
    env = dict(os.environ, JUMPLAB_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from jumplab import kernels; print(kernels.USING_NUMBA)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
