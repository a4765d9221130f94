import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shadowfbm.fbm import ModelSpec, TimeGrid, sample_fbm_paths
from shadowfbm.fluctuation import (
    FluctuationCounter,
    TailBoundParams,
    TailLawRegressor,
    drift_budget,
    fluctuation_counts,
    fluctuation_times,
    mc_counts,
    mc_tail_curve,
    moment_estimates,
    scaling_fit,
    tail_bound_rhs,
    tail_curve_from_counts,
)

paths = st.lists(st.floats(-5, 5), min_size=2, max_size=40)


def test_small_range_no_fluctuation():
    rec = fluctuation_times([0.0, 0.3, -0.2, 0.4], 1.0)
    assert rec.count == 0
    np.testing.assert_array_equal(rec.times, [0.0])


def test_exact_unit_moves():
    rec = fluctuation_times([0.0, 1.0, 0.0, 1.0], 1.0, grid=[0.0, 1.0, 2.0, 3.0])
    assert rec.count == 3
    np.testing.assert_array_equal(rec.times, [0.0, 1.0, 2.0, 3.0])


def test_monotone_first_exceedance():
    rec = fluctuation_times([0.0, 0.4, 0.8, 1.2], 1.0)
    assert rec.count == 1
    np.testing.assert_array_equal(rec.times, [0.0, 3.0])


def test_delta_must_be_positive():
    with pytest.raises(ValueError):
        fluctuation_times([0.0, 1.0], 0.0)


@given(v=paths, delta=st.floats(0.05, 3.0))
def test_record_invariants(v, delta):
    rec = fluctuation_times(v, delta)
    assert rec.times[0] == 0 and np.all(np.diff(rec.times) > 0)
    assert rec.count == rec.times.size - 1
    vals = np.asarray(v)[rec.times.astype(int)]
    assert np.all(np.abs(np.diff(vals)) >= delta)
    assert fluctuation_counts(np.array([v]), delta)[0] == rec.count


@given(v=paths, delta=st.floats(0.05, 3.0))
def test_halving_delta_never_loses_fluctuations(v, delta):
    # every delta-interval spans 2 (delta/2), so the finer chain moves inside it
    c = fluctuation_counts(np.array([v]), delta)[0]
    assert fluctuation_counts(np.array([v]), delta / 2)[0] >= c


def test_drift_budget_examples():
    assert drift_budget(0.0, 1.0, 0.3) == 1
    assert drift_budget(2.0, 1.0, 1.0) == 5
    assert drift_budget(1.0, 1.0, 3.0) == 1
    assert drift_budget(-2.0, 1.0, 1.0) == 5


@settings(max_examples=200)
@given(
    b=st.lists(st.floats(-3, 3), min_size=2, max_size=30),
    mu=st.floats(-3, 3),
    sigma=st.floats(0.1, 3),
    delta=st.floats(0.05, 2),
)
def test_drift_decomposition_bound(b, mu, sigma, delta):
    # each delta-move of mu t + sigma B has a drift part >= delta/2 (at most
    # floor(2|mu|T/delta) of those) or a noise part >= delta/2, which spans
    # twice delta/(4 sigma)
    b = np.array([0.0] + b)
    t = np.linspace(0.0, 1.0, b.size)
    x = mu * t + sigma * b
    drifted = fluctuation_counts(x[None], delta)[0]
    noise = fluctuation_counts(b[None], delta / (4 * sigma))[0]
    assert drifted <= np.floor(2 * abs(mu) / delta) + noise


def test_drift_budget_on_sampled_paths():
    g = TimeGrid.uniform(1.0, 256)
    for h in (0.3, 0.5, 0.7):
        m = ModelSpec(0.4, 0.6, h, 1.0)
        b = sample_fbm_paths(g, h, 500, seed=12, method="circulant")
        x = m.mu * g.points + m.sigma * b
        for delta in (0.1, 0.3):
            lhs = fluctuation_counts(x, delta)
            rhs = drift_budget(m.mu, 1.0, delta) + fluctuation_counts(b, delta / (2 * m.sigma))
            assert np.all(lhs <= rhs)


def test_refinement_can_lower_a_single_count():
    # continuous path 0 -> 1.5 -> 1.0 -> 2.0; the coarse grid sees two unit
    # moves, the refined grid anchors at the overshoot 1.5 and sees one
    coarse = fluctuation_times([0.0, 1.0, 2.0], 1.0, grid=[0.0, 1.0, 2.0])
    fine = fluctuation_times([0.0, 1.5, 1.0, 2.0], 1.0, grid=[0.0, 0.5, 1.0, 2.0])
    assert (coarse.count, fine.count) == (2, 1)


def test_refinement_raises_mean_count():
    fine = sample_fbm_paths(TimeGrid.uniform(1.0, 1024), 0.5, 2000, seed=21, method="circulant")
    means = [fluctuation_counts(fine[:, ::step], 0.2).mean() for step in (16, 4, 1)]
    assert means[0] < means[1] < means[2]


def test_tail_bound_rhs_scaling():
    p = TailBoundParams(c=2.0, c_prime=1.5, hurst=0.5)
    a1 = -np.log(tail_bound_rhs(3, 0.2, 1.0, p) / 1.5)
    a2 = -np.log(tail_bound_rhs(3, 0.4, 1.0, p) / 1.5)
    assert a2 == pytest.approx(4 * a1, rel=1e-12)
    n = np.array([1.0, 2.0, 4.0])
    arg = -np.log(tail_bound_rhs(n, 1.0, 1.0, p) / 1.5)
    np.testing.assert_allclose(arg / arg[0], n**2, rtol=1e-12)
    q = TailBoundParams(c=1.0, c_prime=1.0, hurst=0.25)
    arg = -np.log(tail_bound_rhs(n, 1.0, 1.0, q))
    np.testing.assert_allclose(arg / arg[0], n**1.5, rtol=1e-12)
    with pytest.raises(ValueError):
        tail_bound_rhs(0, 1.0, 1.0, p)


def test_synthetic_curve_fit_recovers_slope():
    p = TailBoundParams(c=0.5, c_prime=0.8, hurst=0.3)
    n = np.arange(1, 8)
    y = tail_bound_rhs(n, 0.3, 2.0, p)
    reg = TailLawRegressor(hurst=0.3).fit(n, y)
    assert reg.r_squared_ == pytest.approx(1.0, abs=1e-12)
    assert reg.slope_ == pytest.approx(0.3**2 * 2.0 ** (-0.6) / 0.5, rel=1e-10)
    assert reg.intercept_ == pytest.approx(-np.log(0.8), rel=1e-10)
    np.testing.assert_allclose(reg.predict(n), y, rtol=1e-10)


def test_flat_curve_slope_zero():
    reg = TailLawRegressor(hurst=0.5).fit([1, 2, 3, 4], [0.3] * 4)
    assert reg.slope_ == pytest.approx(0.0, abs=1e-12)


def test_fit_needs_three_points():
    with pytest.raises(ValueError, match="more paths"):
        TailLawRegressor().fit([1, 2, 3], [1.0, 0.5, 0.0])


def test_mc_tail_curve_basic():
    g = TimeGrid.uniform(1.0, 128)
    cur = mc_tail_curve(0.5, g, 0.5, 10, 2000, seed=3)
    assert np.all(np.diff(cur.estimates) <= 0)
    assert np.all((cur.estimates >= 0) & (cur.estimates <= 1))
    p = cur.estimates
    np.testing.assert_allclose(cur.stderr, np.sqrt(p * (1 - p) / 2000))
    with pytest.raises(ValueError):
        mc_tail_curve(0.5, g, 0.5, 10, 50, seed=3)


def test_first_crossing_probability_brownian():
    # P[sup |B| on [0,1] >= 1.5], fine-grid Monte Carlo as the reference
    d = 1.5
    coarse = mc_tail_curve(0.5, TimeGrid.uniform(1.0, 256), d, 1, 20000, seed=31)
    fine = mc_tail_curve(0.5, TimeGrid.uniform(1.0, 4096), d, 1, 20000, seed=32)
    p_c, p_f = coarse.estimates[0], fine.estimates[0]
    se = np.hypot(coarse.stderr[0], fine.stderr[0])
    # the coarse grid misses excursions between points, never adds any
    assert p_c <= p_f + 4 * se
    assert abs(p_c - p_f) < 0.1 * p_f


def test_majorant_dominates_sharp_points():
    g = TimeGrid.uniform(1.0, 128)
    cur = mc_tail_curve(0.7, g, 0.6, 10, 20000, seed=5)
    fit = scaling_fit(cur)
    p = cur.estimates
    sharp = (p > 0) & (cur.stderr < 0.25 * np.where(p > 0, p, 1))
    assert np.all(fit.majorant(cur.n_values[sharp]) >= p[sharp] * (1 - 1e-12))


def test_moment_examples():
    m = moment_estimates([0, 3, 5], 0.0)
    assert m.estimate == 1.0 and m.standard_error == 0.0
    assert moment_estimates([0, 0, 0], 0.7, "gaussian").estimate == 1.0
    f = np.array([0, 1, 2, 2])
    m = moment_estimates(f, 0.5)
    assert m.estimate == pytest.approx(np.exp(0.5 * f).mean())
    jack = np.array([np.delete(np.exp(0.5 * f), i).mean() for i in range(4)])
    assert m.standard_error == pytest.approx(np.sqrt(3 / 4 * np.sum((jack - jack.mean()) ** 2)))
    with pytest.raises(OverflowError, match="largest count 40"):
        moment_estimates([1, 40], 1.0, "gaussian")


def test_gaussian_moment_stable_under_doubling():
    counts = mc_counts(0.5, TimeGrid.uniform(1.0, 128), 0.7, 8000, seed=44)
    half = moment_estimates(counts[:4000], 0.05, "gaussian").estimate
    full = moment_estimates(counts, 0.05, "gaussian").estimate
    assert np.isfinite(full) and abs(full / half - 1) < 0.05


def test_counter_transformer():
    x = np.array([[0.0, 1.0, 0.0, 1.0], [0.0, 0.1, 0.2, 0.3]])
    ct = FluctuationCounter(delta=1.0)
    np.testing.assert_array_equal(ct.fit_transform(x), [[3], [0]])
    assert ct.get_params() == {"delta": 1.0}


def test_tail_curve_from_counts_hits():
    cur = tail_curve_from_counts([0, 1, 1, 3, 7], 4, 0.1, 1.0, 0.5)
    np.testing.assert_array_equal(cur.hits, [4, 2, 2, 1])
    np.testing.assert_allclose(cur.estimates, [0.8, 0.4, 0.4, 0.2])
    np.testing.assert_array_equal(cur.reliable, [False] * 4)
