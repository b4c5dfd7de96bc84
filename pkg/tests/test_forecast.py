import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from evreserve.aggregation import AggregateEnvelope
from evreserve.forecast import (N_COEF, SCENARIO_PROBS, DayFeatures, ForecastError, MlrModel,
                                PointForecast, band_offsets, daily_targets, design_matrix,
                                fit_mlr, fit_models, forecast_errors, generate_scenarios,
                                load_models, nrmse, pooled_nrmse, predict_boundaries,
                                save_models)

from oracles import band_mean


def features(n, seed=0):
    rng = np.random.default_rng(seed)
    return DayFeatures(rng.normal(10, 4, n), rng.exponential(2, n), (rng.random(n) < 0.05) * 1.0,
                       np.arange(n) % 7)


# --- bands --------------------------------------------------------------

def test_probs_sum_to_one():
    assert math.fsum(SCENARIO_PROBS) == 1.0


def test_central_band_offset_zero():
    z = band_offsets()
    assert z[2] == 0.0
    np.testing.assert_array_equal(z, -z[::-1])


def test_top_band_offset():
    z = band_offsets()
    assert z[4] == pytest.approx(2.6652, abs=5e-5)
    assert z[4] == pytest.approx(band_mean(0.99, 1.0), abs=1e-6)


def test_all_band_offsets_match_quadrature():
    edges = np.concatenate([[0.0], np.cumsum(SCENARIO_PROBS)])
    z = band_offsets()
    for b in range(5):
        assert z[b] == pytest.approx(band_mean(edges[b], min(edges[b + 1], 1.0)), abs=1e-6)


def test_band_means_preserve_expectation():
    assert float(np.dot(SCENARIO_PROBS, band_offsets())) == pytest.approx(0.0, abs=1e-12)


# --- fit_mlr --------------------------------------------------------------

def test_design_layout():
    X = design_matrix([1.5, 2.0], [3.0, 4.0], [0.5, 0.0], [0, 1], [0, 6])
    assert X.shape == (2, N_COEF)
    np.testing.assert_array_equal(X[0], [1, 1.5, 3, 0.5, 0, 0, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(X[1], [1, 2.0, 4, 0.0, 1, 0, 0, 0, 0, 0, 1])


def test_design_rejects_nan():
    with pytest.raises(ForecastError):
        design_matrix([np.nan], [1.0], [0.0], [0], [0])


def test_exact_linear_recovery():
    H = np.linspace(-5, 20, 15)
    X = design_matrix(np.zeros(15), H, np.zeros(15), np.zeros(15), np.zeros(15))
    m = fit_mlr(X, 2 + 0.5 * H, "E_upper")
    assert m.beta[0, 0] == pytest.approx(2.0) and m.beta[0, 2] == pytest.approx(0.5)
    assert m.sigma[0] == pytest.approx(0.0, abs=1e-12)


def test_constant_target_minimum_norm():
    rng = np.random.default_rng(1)
    n = 30
    X = design_matrix(rng.normal(size=n), rng.normal(size=n), rng.normal(size=n),
                      (rng.random(n) < .3) * 1.0, np.arange(n) % 7)
    m = fit_mlr(X, np.full(n, 7.0), "E_diff")
    assert m.beta[0, 0] == pytest.approx(7.0)
    np.testing.assert_allclose(m.beta[0, 1:], 0.0, atol=1e-10)


def test_two_point_ols():
    X = design_matrix([0, 0], [0, 10], [0, 0], [0, 0], [0, 0])
    m = fit_mlr(X, [4.0, 9.0], "P_bound")
    assert m.beta[0, 0] == pytest.approx(4.0) and m.beta[0, 2] == pytest.approx(0.5)


def test_too_few_rows_names_settlement():
    X = features(5).rows(np.arange(5), np.ones(5))
    Y = np.ones((5, 3))
    Y[:, 1] = np.arange(5)
    with pytest.raises(ForecastError, match="settlement of day 0"):
        fit_mlr(X, Y, "E_upper")


def test_matches_independent_least_squares():
    rng = np.random.default_rng(4)
    n = 40
    f = features(n, 4)
    X = f.rows(np.arange(n), rng.normal(size=n))
    Y = rng.normal(size=(n, 3)) + X @ rng.normal(size=(N_COEF, 3))
    m = fit_mlr(X, Y, "E_upper")
    for k in range(3):
        ref, *_ = scipy.linalg.lstsq(X, Y[:, k], lapack_driver="gelsy")
        np.testing.assert_allclose(m.beta[k], ref, atol=1e-9)
        resid = Y[:, k] - X @ ref
        assert m.sigma[k] == pytest.approx(np.sqrt(resid @ resid / (n - 1)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(12, 60))
def test_ols_beats_constant_mean(seed, n):
    rng = np.random.default_rng(seed)
    X = features(n, seed).rows(np.arange(n), rng.normal(size=n))
    y = 50 + X @ rng.normal(size=N_COEF) + rng.normal(size=n)
    m = fit_mlr(X, y, "E_upper")
    fit = m.predict(X)[:, 0]
    assert nrmse(fit, y) <= nrmse(np.full(n, y.mean()), y) + 1e-12


def test_models_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    models = {t: MlrModel(t, rng.normal(size=(4, N_COEF)), rng.random(4))
              for t in ("E_upper", "E_diff", "P_bound")}
    save_models(models, tmp_path / "m.csv")
    back = load_models(tmp_path / "m.csv")
    for t, m in models.items():
        np.testing.assert_array_equal(back[t].beta, m.beta)
        np.testing.assert_array_equal(back[t].sigma, m.sigma)
    head = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert head == "target,settlement_of_day," + ",".join(f"beta{j}" for j in range(11)) + ",sigma"


# --- point forecasts --------------------------------------------------------

def test_lower_from_upper_and_diff():
    pf = PointForecast(0, np.array([[100.0, 100.0]]), np.array([[30.0, -5.0]]), np.zeros((1, 2)))
    np.testing.assert_array_equal(pf.e_lower, [[70.0, 100.0]])


def pattern_envelope(days, per_day, pattern_u, pattern_d, pattern_p):
    """Envelope whose every day repeats the same daily-frame targets."""
    n = days * per_day + 1
    eu = np.zeros(n)
    ed = np.zeros(n)
    pb = np.zeros(n)
    for d in range(days):
        s = d * per_day
        eu[s + 1:s + per_day + 1] = eu[s] + pattern_u
        ed[s + 1:s + per_day + 1] = pattern_d
        pb[s:s + per_day] = pattern_p
    ed[0] = pattern_d[-1]
    return AggregateEnvelope(eu, eu - ed, pb, np.zeros(n), np.zeros(n, dtype=np.int64))


def test_zero_sigma_forecast_is_training_mean():
    per_day, days = 6, 20
    pu = np.cumsum([1.0, 2.0, 0.0, 3.0, 1.0, 0.5])
    pd = np.array([5.0, 6.0, 7.0, 4.0, 3.0, 2.0])
    pp = np.array([10.0, 12.0, 0.0, 3.0, 8.0, 1.0])
    env = pattern_envelope(days, per_day, pu, pd, pp)
    f = features(days + 2)
    models = fit_models(env, f, np.arange(1, 15), per_day)
    for m in models.values():
        np.testing.assert_allclose(m.sigma, 0.0, atol=1e-9)
    tg = daily_targets(env, np.arange(1, 15), per_day)
    pf = predict_boundaries(models, f, 16, 2, env.e_diff[16 * per_day])
    np.testing.assert_allclose(pf.e_upper[0], tg["E_upper"].mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(pf.e_diff[1], tg["E_diff"].mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(pf.p_bound[0], tg["P_bound"].mean(axis=0), atol=1e-9)
    scen = generate_scenarios(models, f, env, 16 * per_day + 2, 8, per_day=per_day)
    for s in range(5):
        np.testing.assert_allclose(scen.e_upper[s], scen.e_upper[2], atol=1e-9)
        np.testing.assert_allclose(scen.p_bound[s], scen.p_bound[2], atol=1e-9)


def test_missing_features():
    f = features(3)
    with pytest.raises(ForecastError):
        f.rows([3], [0.0])


# --- scenarios ---------------------------------------------------------------

def random_models(rng, per_day):
    def m(t, scale):
        beta = np.zeros((per_day, N_COEF))
        beta[:, 0] = rng.uniform(0, scale, per_day)
        beta[:, 2] = rng.normal(0, scale / 20, per_day)
        return MlrModel(t, beta, rng.uniform(0, scale / 4, per_day))
    u = m("E_upper", 100)
    u.beta[:, 0] = np.cumsum(u.beta[:, 0]) / 4
    return {"E_upper": u, "E_diff": m("E_diff", 80), "P_bound": m("P_bound", 50)}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 40), st.sampled_from(["joint", "product"]))
def test_scenario_invariants(seed, horizon, mode):
    rng = np.random.default_rng(seed)
    per_day = 8
    models = random_models(rng, per_day)
    env = pattern_envelope(6, per_day, np.cumsum(rng.uniform(0, 5, per_day)),
                           rng.uniform(0, 10, per_day), rng.uniform(0, 20, per_day))
    f = features(12, seed)
    t0 = int(rng.integers(0, 3 * per_day))
    scen = generate_scenarios(models, f, env, t0, horizon, mode=mode, per_day=per_day)
    assert math.isclose(float(scen.probs.sum()), 1.0, abs_tol=1e-12)
    assert scen.e_upper.shape == (5 if mode == "joint" else 125, horizon)
    assert np.all(scen.e_lower <= scen.e_upper)
    assert np.all(scen.p_bound >= 0)
    assert np.all(np.diff(scen.e_upper, axis=1) >= -1e-12)
    assert np.all(scen.e_upper >= env.e_upper[t0] - 1e-12)
    if mode == "joint":
        assert np.all(np.diff(scen.e_upper, axis=0) >= -1e-12)
        assert np.all(np.diff(scen.p_bound, axis=0) >= -1e-12)


def test_product_mode_probabilities():
    rng = np.random.default_rng(0)
    models = random_models(rng, 4)
    env = pattern_envelope(4, 4, np.arange(1.0, 5.0), np.ones(4), np.ones(4))
    scen = generate_scenarios(models, features(8), env, 4, 6, mode="product", per_day=4)
    assert scen.n_scenarios == 125
    assert scen.probs.max() == pytest.approx(0.78 ** 3)
    c = scen.central()
    assert c.n_scenarios == 1 and c.probs[0] == 1.0


def test_unknown_mode():
    rng = np.random.default_rng(0)
    env = pattern_envelope(4, 4, np.arange(1.0, 5.0), np.ones(4), np.ones(4))
    with pytest.raises(ForecastError):
        generate_scenarios(random_models(rng, 4), features(8), env, 4, 6, mode="x", per_day=4)


# --- nrmse -------------------------------------------------------------------

def test_nrmse_values():
    assert nrmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert nrmse([2, 2], [1, 3]) == pytest.approx(0.5)
    assert nrmse([4, 0], [2, 2]) == pytest.approx(1.0)


def test_nrmse_zero_mean():
    with pytest.raises(ZeroDivisionError):
        nrmse([1, -1], [1, -1])


def test_pooled_nrmse_equals_concatenated():
    rng = np.random.default_rng(9)
    a, b = rng.uniform(1, 5, 7), rng.uniform(1, 5, 7)
    c, d = rng.uniform(1, 5, 4), rng.uniform(1, 5, 4)
    trips = [(float(np.sum((a - b) ** 2)), float(b.sum()), 7),
             (float(np.sum((c - d) ** 2)), float(d.sum()), 4)]
    assert pooled_nrmse(trips) == pytest.approx(nrmse(np.r_[a, c], np.r_[b, d]))
    assert math.isnan(pooled_nrmse([]))


def test_forecast_errors_perfect_scenario_is_zero():
    from evreserve.forecast import realized_scenario
    env = pattern_envelope(3, 4, np.arange(1.0, 5.0), np.full(4, 2.0), np.full(4, 3.0))
    errs = forecast_errors(realized_scenario(env, 2, 5), env)
    assert all(v[0] == 0.0 for v in errs.values())
