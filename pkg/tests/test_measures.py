import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from pchaos.measures import (
    ChaosReport,
    EmpiricalMeasure,
    Observable,
    ObservableDictionary,
    chaoticity_defect,
    chaoticity_defect_estimate,
    fit_loglog,
    ks_distance,
    lp_config_distance,
    lp_config_distance_bruteforce,
    marginal_samples,
    resample_common,
    w1_1d,
    w1_empirical_1d,
    w1_matched,
    w1_subsampled,
)
from pchaos.rng import make_stream

finite = st.floats(-10, 10, allow_nan=False)


def test_empirical_measure_basics():
    m = EmpiricalMeasure(np.arange(4.0))
    assert m.n == 4 and m.dim == 1
    assert np.allclose(m.weights, 0.25)
    assert m.integrate(lambda x: x) == 1.5
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.zeros((0, 2)))


def test_w1_known_values():
    assert w1_1d([0, 1], [1, 2]) == 1.0
    assert w1_empirical_1d([0.0], [0.0, 2.0]) == 1.0
    with pytest.raises(ValueError):
        w1_1d([0, 1], [0])


@settings(max_examples=40, deadline=None)
@given(arrays(float, 7, elements=finite), arrays(float, 7, elements=finite))
def test_w1_line_agrees_with_matching(a, b):
    # on the line the sorted coupling is optimal, so all three estimators coincide
    ref = w1_matched(a, b)
    assert math.isclose(w1_1d(a, b), ref, rel_tol=1e-9, abs_tol=1e-12)
    assert math.isclose(w1_empirical_1d(a, b), ref, rel_tol=1e-9, abs_tol=1e-12)


def test_w1_against_scipy_unequal_sizes():
    rng = make_stream(0)
    a, b = rng.normal(size=300), rng.exponential(size=170)
    assert math.isclose(w1_empirical_1d(a, b), stats.wasserstein_distance(a, b), rel_tol=1e-10)


def test_w1_matched_symmetric_triangle():
    rng = make_stream(1)
    a, b, c = (rng.normal(size=(40, 3)) for _ in range(3))
    assert math.isclose(w1_matched(a, b), w1_matched(b, a))
    assert w1_matched(a, c) <= w1_matched(a, b) + w1_matched(b, c) + 1e-12
    assert w1_matched(a, a[::-1]) == 0.0


def test_w1_matched_cap_and_subsample():
    rng = make_stream(2)
    a = rng.normal(size=(600, 2))
    with pytest.raises(ValueError):
        w1_matched(a, a)
    # below the cap nothing is dropped and a rigid shift is recovered exactly
    assert w1_subsampled(a[:100], a[:100] + 1.0, make_stream(3)) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert 0 < w1_subsampled(a, a + 1.0, make_stream(3), cap=100) < 3


def test_resample_common_sizes():
    a, b = resample_common(np.arange(10), np.arange(4), make_stream(4))
    assert len(a) == len(b) == 4


@settings(max_examples=40, deadline=None)
@given(arrays(float, 5, elements=st.floats(-3, 3)), arrays(float, 5, elements=st.floats(-3, 3)))
def test_lp_matching_equals_bruteforce(x, y):
    assert lp_config_distance(x, y) == pytest.approx(lp_config_distance_bruteforce(x, y), abs=1e-12)


def test_lp_properties():
    x = np.array([0.0, 1.0, 2.0])
    assert lp_config_distance(x, x[::-1]) == 0.0
    assert lp_config_distance(x, x + 100) == 1.0
    # one of three particles moved far: LP = 1/3
    assert lp_config_distance(x, np.array([0.0, 1.0, 50.0])) == pytest.approx(1 / 3)


def test_defect_independent_replicas_is_small_and_correlated_is_large():
    rng = make_stream(5)
    indep = rng.normal(size=(4000, 10))
    est = chaoticity_defect_estimate(indep)
    assert est.defect < 5 * est.stderr + 1e-3
    common = rng.normal(size=(4000, 1)) + 0.1 * rng.normal(size=(4000, 10))
    assert chaoticity_defect(common) > 0.2


def test_defect_exchangeable_sphere_matches_exact_covariance():
    # uniform on {±1}^2 conditioned on sum 0: E[cos v1 cos v2] - E[cos]² = 0 but sin couples
    R = 20000
    s = make_stream(6).choice([-1.0, 1.0], size=R)
    e = np.stack([s, -s], axis=1)
    # cov(sin v1, sin v2) = -sin(1)²
    assert chaoticity_defect(e) == pytest.approx(math.sin(1.0) ** 2, abs=0.02)


def test_dictionary_validation_and_default():
    with pytest.raises(ValueError):
        ObservableDictionary([Observable("bad", np.exp, math.inf, 1.0)])
    assert len(ObservableDictionary.default(3)) == 12
    with pytest.raises(ValueError):
        chaoticity_defect_estimate(np.zeros((1, 4)))


def test_marginal_samples_and_ks():
    e = np.arange(12.0).reshape(3, 4)
    assert marginal_samples(e, 2).shape == (3, 2)
    with pytest.raises(ValueError):
        marginal_samples(e, 5)
    x = make_stream(7).normal(size=5000)
    assert ks_distance(x, stats.norm.cdf) == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-12)


def test_fit_loglog_recovers_slope_and_drops_noise():
    ns = np.array([50, 100, 200, 400, 800])
    v = 3.0 / ns
    f = fit_loglog(ns, v)
    assert f.slope == pytest.approx(-1.0, abs=1e-12)
    se = np.full(5, 3.0 / 800)
    f2 = fit_loglog(ns, v, se, min_snr=1.5)
    assert 800 not in f2.used_n and f2.used_n == [50, 100, 200, 400]
    assert math.isnan(fit_loglog(ns[:2], v[:2]).slope)


def test_chaos_report_roundtrip():
    rep = ChaosReport("kac")
    rep.add(50, 10, 0.1, 0.01)
    rep.add(100, 10, 0.05, 0.01)
    with pytest.raises(ValueError):
        rep.add(80, 10, 0.1, 0.01)
    with pytest.raises(ValueError):
        rep.add(200, 10, -0.1, 0.01)
    assert rep.to_csv().splitlines()[0] == "model,N,replicas,defect,stderr"
    assert len(rep.to_jsonl().splitlines()) == 2
