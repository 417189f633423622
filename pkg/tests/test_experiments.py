import math
import warnings

import numpy as np
import pytest

from jumplab import experiments as ex
from jumplab.errors import ConfigError, DomainError
from jumplab.levy import StableLikeMeasure


def test_config_defaults_and_validation():
    cfg = ex.ExperimentConfig()
    assert cfg.model_spec().name == "kalman"
    assert cfg.measure(trunc=0.1).trunc == 0.1
    assert cfg.with_(seed=3).seed == 3
    bad = [dict(alpha=2.0), dict(trunc=1.0), dict(paths=10), dict(model="x"), dict(d=3),
           dict(ell=0.3), dict(eps_grid=(0.1, 0.2)), dict(workers=0), dict(xi=(1.0,)),
           dict(xi_kind="saw"), dict(k_grid=(2.0, 1.0)), dict(void_eps=2.0), dict(lam=-1.0)]
    for kw in bad:
        with pytest.raises(ConfigError):
            ex.ExperimentConfig(**kw)


def test_wilson_interval_contains_estimate():
    lo, hi = ex.wilson_interval(30, 1000)
    assert lo < 0.03 < hi
    lo0, hi0 = ex.wilson_interval(0, 1000)
    assert lo0 == 0.0 and 0.0 < hi0 < 0.01


def test_tail_shape_and_fit_recovers_parameters():
    eps = np.array(ex.DEFAULT_EPS_GRID)
    x = ex.tail_shape(eps, 1.0, 0.2, 0.25)
    assert np.all(np.diff(x) < 0)
    # gamma = 1 is not monotone on this grid
    assert not np.all(np.diff(ex.tail_shape(eps, 1.0, 0.2, 1.0)) < 0)
    c, C = 1.7, 3.0
    p = C * np.exp(c * x)
    est = [ex.TailEstimate(float(e), 0, 1, float(q), 0.0, 1.0) for e, q in zip(eps, p)]
    cf, Cf, r2 = ex.fit_tail(est, 1.0, 0.2, 0.25)
    assert cf == pytest.approx(c, rel=1e-10) and Cf == pytest.approx(C, rel=1e-10)
    assert r2 == pytest.approx(1.0)
    slopes = ex.local_slopes(est)
    assert all(b > a for a, b in zip(slopes[:-1], slopes[1:]))


def test_tail_estimates_counts():
    lam = np.array([0.0, 0.01, 0.2, 0.3])
    est = ex.tail_estimates(lam, (0.25, 0.1))
    assert [e.count for e in est] == [3, 2]
    assert math.isnan(ex.local_slopes([est[0], ex.TailEstimate(0.01, 0, 4, 0.0, 0.0, 1.0)])[0])


def test_h_sum_cdf_brackets_sampling():
    """Isotropic zero-drift model: lambda_min equals the h-sum exactly."""
    m = StableLikeMeasure(theta0=0.25)
    cfg = ex.ExperimentConfig(model="isotropic", theta0=0.25, paths=40_000, seed=5)
    lam = ex._flow_samples(cfg, eigen=True)["lambda_min"]
    for eps in (2.0**-3, 2.0**-5):
        lo, hi = ex.h_sum_cdf(m, 1.0, eps, n_grid=1000)
        assert lo <= hi
        p = np.count_nonzero(lam <= eps) / lam.size
        se = math.sqrt(max(p * (1.0 - p), 1e-12) / lam.size)
        assert lo - 3.0 * se <= p <= hi + 3.0 * se
    with pytest.raises(DomainError):
        ex.h_sum_cdf(m, 1.0, 1.5)


def test_tail_experiment_small_and_degenerate_warning():
    cfg = ex.ExperimentConfig(theta0=0.25, paths=4000, seed=1)
    rep = ex.eigenvalue_tail_experiment(cfg)
    assert rep.condition_passed and rep.probability_monotone and not rep.all_zero
    with pytest.warns(RuntimeWarning, match="rank"):
        d = ex.eigenvalue_tail_experiment(cfg.with_(model="degenerate", paths=1000))
    assert d.all_zero and d.fit_skipped and d.passed


def test_tail_experiment_with_precomputed_eigenvalues():
    cfg = ex.ExperimentConfig(theta0=0.25, paths=1000)
    rep = ex.eigenvalue_tail_experiment(cfg, lam=np.linspace(0.0, 1.0, 1000))
    assert rep.estimates[0].count == int(np.count_nonzero(np.linspace(0, 1, 1000) <= 0.125))


def test_void_probability_small():
    m = StableLikeMeasure(theta0=1.0)
    r = ex.void_probability_check(m, 0.1, 1e-5, 0.2, 20_000, seed=1)
    assert r.r_lo == pytest.approx(0.1)
    assert r.exact == pytest.approx(math.exp(-0.1 * 2 * math.pi * 9))
    assert abs(r.z_score) < 4.0
    with pytest.raises(ConfigError):
        ex.void_probability_check(m, 0.1, 1e-12, 0.2, 100)


def test_h_exp_moment_closed_forms():
    m = StableLikeMeasure(theta0=0.005)
    assert ex.h_exp_moment(m, 1.0, 0.0) == 1.0
    assert ex.h_exp_moment(m, 1.0, 1.0) == pytest.approx(1.11363, rel=1e-5)
    lit = ex.h_exp_moment(m, 1.0, 1.0, literal=True)
    assert lit > ex.h_exp_moment(m, 1.0, 1.0)


def test_moment_rows_and_overflow():
    row = ex._doubling_row("x", np.array([1.0, 1.0, 1.0, 1.0]), 2, 1.0)
    assert row.stable and row.rel_change == 0.0
    big = ex._doubling_row("x", np.array([1e4, 0.0]), 1, 1.0)
    assert big.overflow and not big.stable
    with pytest.raises(ConfigError):
        ex.exp_moment_experiment(ex.ExperimentConfig(paths=1000), lam=-1.0)


def test_moment_experiment_small():
    cfg = ex.ExperimentConfig(theta0=0.005, paths=5000, seed=2)
    rep = ex.exp_moment_experiment(cfg)
    assert [r.name for r in rep.rows][-1] == "exp(int h dN)"
    assert rep.rows[-1].stable


def test_truncation_sweep_small():
    cfg = ex.ExperimentConfig(theta0=0.005, paths=2000)
    rep = ex.literal_cutoff_control(cfg)
    assert rep.converges and rep.literal_diverges
    assert [r.trunc for r in rep.rows] == list(cfg.trunc_sweep)


def test_charfn():
    mod, se = ex.charfn_modulus(np.zeros(10), 3.0)
    assert mod == 1.0 and se == 0.0
    x = np.random.default_rng(0).standard_normal(40_000)
    mod, se = ex.charfn_modulus(x, 1.0)
    assert abs(mod - math.exp(-0.5)) < 4 * se + 1e-3
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = ex.charfn_decay(ex.ExperimentConfig(theta0=0.05, paths=4000, model="degenerate"))
    assert all(r.modulus == pytest.approx(1.0) for r in rep.profile(1))
    assert rep.decreasing(0)
    with pytest.raises(ConfigError):
        ex.charfn_decay(ex.ExperimentConfig(paths=1000), k_grid=(2.0, 1.0), X=np.zeros((5, 2)))
