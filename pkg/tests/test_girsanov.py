import math
import warnings

import numpy as np
import pytest

from jumplab.errors import ConfigError
from jumplab.girsanov import (PerturbationSpec, QuadratureWarning, check_contraction, compensator,
                              cutoff_max, forward_perturbation, girsanov_weight,
                              ibp_limit_check, inverse_perturbation, law_equality_test, path_log_phi,
                              log_rn_mark_density, path_skorohod, pushforward_check,
                              rn_mark_density, weight_moments)
from jumplab.levy import StableLikeMeasure, cutoff_h, cutoff_lipschitz, sample_batch, sample_path
from jumplab.rng import path_rng

SPEC = PerturbationSpec((1.0, 0.0), 0.05)


def test_spec_properties():
    assert SPEC.d == 2 and SPEC.sup_xi == 1.0
    assert SPEC.contraction == pytest.approx(0.05 * cutoff_lipschitz())
    sin = PerturbationSpec((0.0, 2.0), 0.1, "sinusoidal")
    np.testing.assert_allclose(sin.xi_at(0.5), [0.0, -2.0], atol=1e-15)
    assert sin.with_epsilon(0.2).epsilon == 0.2
    with pytest.raises(ConfigError):
        PerturbationSpec(kind="square")
    with pytest.raises(ConfigError):
        PerturbationSpec(epsilon=-1.0)


def test_contraction_error_suggests_epsilon():
    with pytest.raises(ConfigError, match="reduce epsilon below"):
        check_contraction(PerturbationSpec((1.0, 0.0), 0.2))


def test_cutoff_max_on_collar():
    r = np.linspace(1.0, 2.0, 100_001)[:, None] * np.array([1.0, 0.0])
    assert cutoff_max() == pytest.approx(float(cutoff_h(r).max()), rel=1e-8)


def test_inverse_round_trip(rng):
    z = rng.uniform(-2.5, 2.5, size=(2000, 2))
    s = rng.uniform(0, 1, 2000)
    for spec in (SPEC, PerturbationSpec((0.3, -0.7), 0.08, "sinusoidal")):
        u = inverse_perturbation(z, s, spec)
        np.testing.assert_allclose(forward_perturbation(u, s, spec), z, atol=1e-12)
    np.testing.assert_array_equal(inverse_perturbation(z, s, SPEC.with_epsilon(0.0)), z)


def test_inverse_is_identity_outside_support(rng):
    z = np.array([[2.5, 0.0], [0.0, -3.0]])
    np.testing.assert_array_equal(inverse_perturbation(z, np.zeros(2), SPEC), z)


def test_density_ratio_is_one_outside_support():
    m = StableLikeMeasure()
    z = np.array([[2.5, 0.0], [0.0, 4.0]])
    np.testing.assert_allclose(rn_mark_density(z, np.zeros(2), SPEC, m), 1.0)


def test_density_ratio_direct_formula():
    m = StableLikeMeasure()
    z = np.array([[0.7, 0.2]])
    u = inverse_perturbation(z, np.zeros(1), SPEC)
    step = 1e-6
    J = np.column_stack([(inverse_perturbation(z + step * e, np.zeros(1), SPEC)
                          - inverse_perturbation(z - step * e, np.zeros(1), SPEC))[0] / (2 * step)
                         for e in np.eye(2)])
    expect = m.density(u[0]) * abs(np.linalg.det(J)) / m.density(z[0])
    assert rn_mark_density(z, np.zeros(1), SPEC, m)[0] == pytest.approx(expect, rel=1e-7)
    no_det = math.exp(log_rn_mark_density(z, np.zeros(1), SPEC, m, jacobian=False)[0])
    assert no_det == pytest.approx(m.density(u[0]) / m.density(z[0]), rel=1e-12)


def test_pushforward_identity():
    rows = pushforward_check(StableLikeMeasure(), SPEC, 40_000, seed=3)
    assert all(abs(r.z_score) < 4.0 for r in rows)


def test_compensator_methods_agree():
    m = StableLikeMeasure(theta0=0.25)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuadratureWarning)
        shell = compensator(SPEC, m, 1.0, method="shell")
        direct = compensator(SPEC, m, 1.0, method="direct", orders=(128, 256, 1))
    assert shell == pytest.approx(direct, abs=1e-5)
    assert compensator(SPEC.with_epsilon(0.0), m, 1.0) == 0.0
    with pytest.raises(ConfigError):
        compensator(SPEC, m, 1.0, method="shell", jacobian=False)
    with pytest.raises(ConfigError):
        compensator(SPEC, m, 1.0, method="simpson")


def test_compensator_scales_with_time_and_intensity():
    a = compensator(SPEC, StableLikeMeasure(theta0=0.25), 1.0)
    b = compensator(SPEC, StableLikeMeasure(theta0=0.5), 2.0)
    assert b == pytest.approx(4.0 * a, rel=1e-10, abs=1e-14)


def test_path_weight_consistency():
    m = StableLikeMeasure(theta0=0.25)
    path = sample_path(m, 1.0, path_rng(4, 0))
    assert girsanov_weight(path, SPEC.with_epsilon(0.0), m, 1.0) == 1.0
    w = girsanov_weight(path, SPEC, m, 1.0)
    raw = girsanov_weight(path, SPEC, m, 1.0, compensate=False)
    assert w == pytest.approx(raw * math.exp(-compensator(SPEC, m, 1.0)))


def test_path_skorohod_is_derivative_of_log_weight():
    """d/d eps of log Z^eps at eps = 0 equals -delta(V) per path."""
    m = StableLikeMeasure(theta0=0.5)
    b = sample_batch(m, 1.0, 5, 0, 50)
    eps = 1e-5
    lp = (path_log_phi(b, SPEC.with_epsilon(eps)) - compensator(SPEC.with_epsilon(eps), m, 1.0)) / eps
    np.testing.assert_allclose(lp, -path_skorohod(b, SPEC), atol=1e-3 * (1 + np.abs(lp).max()))


def test_law_equality_small():
    m = StableLikeMeasure(theta0=0.25)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuadratureWarning)
        rep = law_equality_test(m, PerturbationSpec((1.0, 0.0), 0.1), 1.0, 10_000, seed=2)
    assert rep.passed("weighted", 4.0)
    assert rep.max_abs_z("unweighted") > 3.0
    assert abs(rep.weight_mean - 1.0) < 4.0 * rep.weight_se
    with pytest.raises(ConfigError):
        law_equality_test(m, SPEC, 1.0, 100, seed=0)


def test_weight_moments_and_limit():
    m = StableLikeMeasure(theta0=0.25)
    mom = weight_moments(m, SPEC, 1.0, 5000, seed=1)
    assert abs(mom.mean_z) < 4.0 and mom.second_moment_change < 0.2
    lim = ibp_limit_check(m, SPEC, (0.1, 0.05, 0.025), 1.0, 4000, seed=1)
    assert lim.decreasing and lim.slope > 1.0
    with pytest.raises(ConfigError):
        ibp_limit_check(m, SPEC, (0.05, 0.1), 1.0, 1000, seed=1)
