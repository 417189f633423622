import math

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jumplab.conditions import kalman_rank, persistence_window, taylor_flow_remainder
from jumplab.girsanov import PerturbationSpec, forward_perturbation, inverse_perturbation
from jumplab.levy import StableLikeMeasure, cutoff_h, radius_quantile, total_rate
from jumplab.malliavin import smallest_eigenvalue
from jumplab.montecarlo import blocks

finite = st.floats(-3.0, 3.0, allow_nan=False)


@given(st.floats(0.05, 1.95), st.floats(0.01, 0.9), st.floats(0.0, 1.0))
def test_radius_quantile_in_range(alpha, lo, u):
    r = radius_quantile(alpha, lo, 1.0, u)
    assert lo * (1 - 1e-12) <= r <= 1.0 + 1e-12


@given(st.floats(0.1, 1.9), st.floats(0.01, 0.5), st.floats(1.01, 4.0))
def test_rate_decreases_with_radius(alpha, r1, factor):
    m = StableLikeMeasure(alpha=alpha)
    assert total_rate(m, r1) > total_rate(m, r1 * factor)


@given(arrays(float, (2,), elements=finite))
def test_cutoff_bounds(z):
    h = float(cutoff_h(z))
    r = float(np.linalg.norm(z))
    assert 0.0 <= h <= r**4 + 1e-15
    if r >= 2.0:
        assert h == 0.0


@given(arrays(float, (3, 3), elements=finite))
def test_eigenvalue_is_rayleigh_minimum(A):
    S = A @ A.T
    lam = smallest_eigenvalue(S)
    ref = np.linalg.eigvalsh(S)[0]
    assert abs(lam - ref) <= 1e-10 * max(1.0, np.abs(S).max())


@given(arrays(float, (2, 2), elements=finite), arrays(float, (2, 1), elements=finite),
       st.floats(1e-3, 1e3))
def test_kalman_rank_invariant_under_scaling(A, b, s):
    B = np.hstack([b, np.zeros((2, 1))])
    assume(np.linalg.norm(b) > 1e-3)
    assert kalman_rank(A, B) == kalman_rank(A, s * B)


@given(arrays(float, (2, 2), elements=finite), arrays(float, (2,), elements=finite),
       st.floats(0.0, 1.0), st.integers(1, 5))
def test_taylor_bound_holds(A, v, t, l):
    assert taylor_flow_remainder(A, v, t, l).passed


@given(st.floats(0.1, 5.0), st.floats(0.1, 5.0), st.floats(0.01, 2.0), st.floats(0.01, 3.0))
def test_persistence_window_monotone_in_p(nu, nv, p, g):
    t1, d1 = persistence_window([nu, 0.0], [nv, 0.0], p, g)
    _, d2 = persistence_window([nu, 0.0], [nv, 0.0], 2 * p, g)
    assert t1 > 0.0 and d1 <= d2 <= 1.0


@given(arrays(float, (5, 2), elements=st.floats(-2.5, 2.5)), st.floats(0.0, 0.09),
       st.floats(-math.pi, math.pi))
def test_inverse_perturbation_round_trip(z, eps, angle):
    spec = PerturbationSpec((math.cos(angle), math.sin(angle)), eps)
    u = inverse_perturbation(z, np.zeros(5), spec)
    np.testing.assert_allclose(forward_perturbation(u, np.zeros(5), spec), z, atol=1e-11)


@given(st.integers(0, 10_000), st.integers(1, 5000))
def test_blocks_cover_range(n, size):
    plan = blocks(n, size)
    assert sum(c for _, c in plan) == n
    assert all(s == i * size for i, (s, _) in enumerate(plan))
