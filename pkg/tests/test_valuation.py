"""
估值服务测试：Gordon 极限、收敛门槛、级数截断、二阶矩、预测与脉冲响应
"""
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from conftest import K_GORDON, Fixture, random_stable_var, steady_state, with_sigma
from gordonvar.config.numerics import NumericsConfig
from gordonvar.core.exceptions import (
    HorizonZero,
    LengthMismatch,
    MissingPrices,
    NonPositivePrice,
    NotConvergent,
    TailBoundNotReached,
    UnstableModel,
)
from gordonvar.services.market_data import CompanyPanel, VarLayout, assemble_var_input, compute_rates
from gordonvar.services.valuation import (
    ForecastContext,
    build_selectors,
    check_convergence,
    context_from_panel,
    dividend_form_forecast,
    mixed_moment,
    price_forecast,
    price_from_dividends,
    price_from_observed,
    price_irf,
    theoretical_price,
    value_companies,
)
from gordonvar.services.var_engine import (
    VarModel,
    analyze,
    companion,
    limit_moments,
    mean_path,
    phi_sequence,
)


def constant_model(k: float, g: float, dividend: float = 1.0, price: float = 20.0) -> Fixture:
    """k̃、g̃ 恒定、Σ = 0 的单公司模型"""
    model = VarModel(
        nu=np.log1p([k, g]),
        lags=(np.zeros((2, 2)),),
        sigma=np.zeros((2, 2)),
        layout=VarLayout(m=1, ell=0),
    )
    ctx = ForecastContext(
        state=np.log1p([k, g]),
        log_dividends_now=np.log([dividend]),
        prices_now=np.array([price]),
    )
    return Fixture(model, ctx)


def moments_of(fixture: Fixture):
    return limit_moments(fixture.model, fixture.companion, fixture.spectral, fixture.config)


def noiseless_price(fixture: Fixture, state: np.ndarray, r: int) -> np.ndarray:
    path = mean_path(fixture.companion, state, r)
    sel = fixture.selectors
    prices = price_from_observed(path @ sel.j_k.T, path @ sel.j_g.T, fixture.ctx.prices_now, fixture.ctx.dividends_now)
    return prices[-1]


# ── Gordon 极限 ───────────────────────────────────────
def test_gordon_price(gordon):
    result = theoretical_price(gordon.ctx.without_prices(), *gordon.args, gordon.config)
    assert result.price[0] == pytest.approx(21.0, rel=1e-9)
    assert result.terms_used[0] >= gordon.config.ratio_min_terms
    assert 0 < result.truncation_error_bound[0] < 1e-10 * result.price[0]


@pytest.mark.parametrize("k, g, dividend", [(0.08, 0.03, 2.0), (0.12, 0.02, 0.5), (0.06, 0.055, 1.0)])
def test_gordon_limit(k, g, dividend):
    fixture = constant_model(k, g, dividend)
    result = theoretical_price(fixture.ctx, *fixture.args, fixture.config)
    assert result.price[0] == pytest.approx(dividend * (1 + g) / (k - g), rel=1e-9)


def test_gordon_trace_is_geometric(gordon):
    result = theoretical_price(gordon.ctx, *gordon.args, gordon.config, keep_trace=True)
    trace = result.trace[0]
    assert len(trace) == result.terms_used[0]
    assert np.all(trace > 0)
    q = np.arange(1, len(trace) + 1)
    np.testing.assert_allclose(trace, (1.05 / 1.10) ** q, rtol=1e-10)
    assert trace.sum() == pytest.approx(result.price[0], rel=1e-12)


def test_gordon_second_moment(gordon):
    value = mixed_moment(gordon.ctx, *gordon.args, gordon.config, 0, 0)
    assert value == pytest.approx(441.0, rel=1e-9)


def test_gordon_forecasts(gordon):
    assert price_forecast(gordon.ctx, *gordon.args, 1)[0] == pytest.approx(22.05, rel=1e-12)
    assert dividend_form_forecast(gordon.ctx, *gordon.args, 1, gordon.config)[0] == pytest.approx(22.05, rel=1e-9)


def test_gordon_irf_is_zero(gordon):
    irf = price_irf(gordon.ctx, *gordon.args, 1)
    assert irf.shape == (1, 2)
    np.testing.assert_array_equal(irf, np.zeros((1, 2)))


# ── 收敛门槛 ──────────────────────────────────────────
def test_gate_on_gordon(gordon):
    report = check_convergence(gordon.model, moments_of(gordon), gordon.selectors)
    assert report.first_ok.tolist() == [True]
    assert report.first_moment_lhs[0] == pytest.approx(np.log(1.05) - K_GORDON, rel=1e-12)
    assert report.second_ok[0, 0]
    assert report.to_dict()["spectral"]["stable"] is True


def test_gate_equality_is_failure():
    fixture = constant_model(0.05, 0.05)
    report = check_convergence(fixture.model, moments_of(fixture), fixture.selectors)
    assert report.first_moment_lhs[0] == pytest.approx(0.0, abs=1e-15)
    assert not report.first_ok[0]
    with pytest.raises(NotConvergent):
        theoretical_price(fixture.ctx, *fixture.args, fixture.config)


def test_gate_rejects_unit_root():
    model = VarModel(
        nu=np.array([0.0, 0.01]),
        lags=(np.array([[1.0, 0.0], [0.0, 0.5]]),),
        sigma=0.001 * np.eye(2),
        layout=VarLayout(m=1, ell=0),
    )
    ctx = ForecastContext(state=np.array([0.1, 0.02]), log_dividends_now=np.zeros(1))
    fixture = Fixture(model, ctx)
    with pytest.raises(UnstableModel):
        theoretical_price(ctx, *fixture.args, fixture.config)


def test_override_gate_on_divergent_series():
    fixture = constant_model(0.03, 0.06)
    config = NumericsConfig(max_terms=200, read_env=False)
    with pytest.raises(TailBoundNotReached):
        theoretical_price(fixture.ctx, *fixture.args, config, override_gate=True)


@pytest.mark.parametrize("seed", range(10))
def test_gate_monotone_in_sigma(seed):
    model = random_stable_var(seed, p=2)
    cf, info = analyze(model)
    selectors = build_selectors(model.layout)
    base = check_convergence(model, limit_moments(model, cf, info), selectors)
    bumped_model = replace(model, sigma=model.sigma + np.diag(np.linspace(0.001, 0.004, model.n)))
    bumped = check_convergence(bumped_model, limit_moments(bumped_model, cf, info), selectors)
    assert np.all(bumped.first_moment_lhs >= base.first_moment_lhs - 1e-15)


def test_gate_variance_terms(single_company):
    report = check_convergence(single_company.model, moments_of(single_company), single_company.selectors)
    gamma0 = 0.0025 / 0.96
    # J_gk = [-1, 1]，A = 0.2 I：Γ = 0.25 Γ(0)
    expected_first = 0.04 - 0.10 + 2 * (0.5 * gamma0 + 0.25 * gamma0)
    expected_second = 0.04 - 0.10 + 2 * (gamma0 + 0.5 * gamma0)
    assert report.first_moment_lhs[0] == pytest.approx(expected_first, rel=1e-10)
    assert report.second_moment_lhs[0, 0] == pytest.approx(expected_second, rel=1e-10)


# ── 理论价格与二阶矩 ──────────────────────────────────
def test_trace_positive_and_subset(two_company_macro):
    fx = two_company_macro
    result = theoretical_price(fx.ctx, *fx.args, fx.config, companies=[1], keep_trace=True)
    assert np.isnan(result.price[0])
    assert result.price[1] > 0
    assert len(result.trace[0]) == 0
    assert np.all(result.trace[1] > 0)


def test_stochastic_price_exceeds_deterministic(single_company):
    """方差项使每一项的期望大于确定性路径的值"""
    fx = single_company
    stochastic = theoretical_price(fx.ctx, *fx.args, fx.config).price[0]
    deterministic = theoretical_price(fx.ctx, *with_sigma(fx, np.zeros((2, 2))).args, fx.config).price[0]
    assert stochastic > deterministic


def test_value_companies(two_company_macro):
    fx = two_company_macro
    result, report = value_companies(fx.ctx, *fx.args, fx.config)
    assert report.all_first_ok
    assert np.all(result.price > 0)
    second = result.second_moment
    np.testing.assert_allclose(second, second.T)
    assert np.all(result.price ** 2 <= np.diag(second))
    assert second[0, 1] ** 2 <= second[0, 0] * second[1, 1]
    assert np.all(result.second_moment_bound >= 0)
    assert mixed_moment(fx.ctx, *fx.args, fx.config, 0, 1) == pytest.approx(second[0, 1], rel=1e-12)


@pytest.mark.parametrize("companies", [[5], [-1], [0, 2]])
def test_company_index_out_of_range(two_company_macro, companies):
    fx = two_company_macro
    with pytest.raises(LengthMismatch):
        theoretical_price(fx.ctx, *fx.args, fx.config, companies=companies)


@pytest.mark.parametrize("pair", [(0, 3), (-1, 0), (1, 1)])
def test_mixed_moment_index_out_of_range(single_company, pair):
    fx = single_company
    with pytest.raises(LengthMismatch):
        mixed_moment(fx.ctx, *fx.args, fx.config, *pair)


@pytest.mark.parametrize("seed", range(50))
def test_jensen_and_cauchy_schwarz(seed):
    model = random_stable_var(seed, p=2, convergent=True)
    ctx = ForecastContext(state=steady_state(model), log_dividends_now=np.zeros(model.m))
    fx = Fixture(model, ctx)
    moments = moments_of(fx)
    report = check_convergence(model, moments, fx.selectors)
    if not report.second_ok.all():
        pytest.skip("二阶条件不成立")
    price = theoretical_price(ctx, *fx.args, fx.config, moments=moments).price
    second = np.array([
        [mixed_moment(ctx, *fx.args, fx.config, i1, i2, moments=moments) for i2 in range(model.m)]
        for i1 in range(model.m)
    ])
    assert np.all(price ** 2 <= np.diag(second))
    if model.m == 2:
        assert second[0, 1] ** 2 <= second[0, 0] * second[1, 1] * (1 + 1e-12)


def test_second_moment_gate_failure():
    # drift = -0.01，J_gk Γ(0) J_gk' = 0.012：一阶成立，二阶不成立
    sigma = np.diag([0.006, 0.006])
    model = VarModel(
        nu=np.array([0.06, 0.05]), lags=(np.zeros((2, 2)),), sigma=sigma, layout=VarLayout(m=1, ell=0)
    )
    ctx = ForecastContext(state=np.array([0.06, 0.05]), log_dividends_now=np.zeros(1))
    fx = Fixture(model, ctx)
    report = check_convergence(model, moments_of(fx), fx.selectors)
    assert report.first_ok[0] and not report.second_ok[0, 0]
    with pytest.raises(NotConvergent):
        mixed_moment(ctx, *fx.args, fx.config, 0, 0)
    result, _ = value_companies(ctx, *fx.args, fx.config)
    assert result.price[0] > 0
    assert np.isnan(result.second_moment[0, 0])


# ── 预测 ──────────────────────────────────────────────
def test_price_forecast_needs_prices(single_company):
    with pytest.raises(MissingPrices):
        price_forecast(single_company.ctx.without_prices(), *single_company.args, 2)


def test_price_forecast_zero_horizon(single_company):
    with pytest.raises(HorizonZero):
        price_forecast(single_company.ctx, *single_company.args, 0)


def test_deterministic_forecast_matches_recursion(two_company_macro):
    fx = with_sigma(two_company_macro, np.zeros((5, 5)))
    r = 6
    path = mean_path(fx.companion, fx.ctx.state, r)
    k = np.exp(path @ fx.selectors.j_k.T) - 1.0
    g = np.exp(path @ fx.selectors.j_g.T) - 1.0
    price, dividend = fx.ctx.prices_now.copy(), fx.ctx.dividends_now.copy()
    for j in range(r):
        dividend = dividend * (1.0 + g[j])
        price = (1.0 + k[j]) * price - dividend
    np.testing.assert_allclose(price_forecast(fx.ctx, *fx.args, r), price, rtol=1e-12)


def test_forecasts_agree_when_price_is_theoretical(two_company_macro):
    """Σ = 0 且当期价格取理论价格时，两种信息集下的预测一致"""
    fx = with_sigma(two_company_macro, np.zeros((5, 5)))
    theoretical = theoretical_price(fx.ctx, *fx.args, fx.config).price
    ctx = fx.ctx.with_prices(theoretical)
    for r in (1, 3):
        np.testing.assert_allclose(
            price_forecast(ctx, *fx.args, r),
            dividend_form_forecast(ctx, *fx.args, r, fx.config),
            rtol=1e-8,
        )


@pytest.mark.parametrize("r", [1, 5, 80])
def test_cached_phi_gives_same_forecast_and_irf(two_company_macro, r):
    fx = two_company_macro
    moments = moments_of(fx)
    assert not hasattr(moments, "state_cov")
    np.testing.assert_allclose(
        price_forecast(fx.ctx, *fx.args, r, moments),
        price_forecast(fx.ctx, *fx.args, r),
        rtol=1e-12,
    )
    np.testing.assert_allclose(
        price_irf(fx.ctx, *fx.args, r, moments),
        price_irf(fx.ctx, *fx.args, r),
        rtol=1e-12,
        atol=1e-14,
    )


def test_dividend_form_forecast_horizon_zero_is_price(two_company_macro):
    fx = two_company_macro
    np.testing.assert_allclose(
        dividend_form_forecast(fx.ctx, *fx.args, 0, fx.config),
        theoretical_price(fx.ctx, *fx.args, fx.config).price,
        rtol=1e-14,
    )


# ── 脉冲响应 ──────────────────────────────────────────
def diagonal_fixture() -> Fixture:
    mu = np.array([0.10, 0.04])
    a = 0.5 * np.eye(2)
    model = VarModel(nu=(np.eye(2) - a) @ mu, lags=(a,), sigma=0.0025 * np.eye(2), layout=VarLayout(m=1, ell=0))
    ctx = ForecastContext(state=mu + np.array([0.02, -0.01]), log_dividends_now=np.zeros(1), prices_now=np.array([21.0]))
    return Fixture(model, ctx)


@pytest.mark.parametrize("r", [1, 4, 12])
@pytest.mark.parametrize("which", ["diagonal", "two_company_macro"])
def test_irf_matches_finite_differences(r, which, two_company_macro):
    fx = diagonal_fixture() if which == "diagonal" else two_company_macro
    irf = price_irf(fx.ctx, *fx.args, r)
    eps = 1e-6
    numeric = np.empty_like(irf)
    for j in range(fx.model.n):
        bump = np.zeros(fx.companion.dim)
        bump[j] = eps
        up = noiseless_price(fx, fx.ctx.state + bump, r)
        down = noiseless_price(fx, fx.ctx.state - bump, r)
        numeric[:, j] = (up - down) / (2 * eps)
    np.testing.assert_allclose(irf, numeric, rtol=1e-5, atol=1e-7 * np.abs(irf).max())


@pytest.mark.parametrize("seed", range(5))
def test_phi_sum_identity(seed):
    model = random_stable_var(seed, p=2)
    cf = companion(model)
    eye = np.eye(cf.dim)
    for r in (1, 5, 20):
        direct = sum(phi_sequence(cf, r)[1:])
        closed = cf.j_selector @ cf.a_star @ np.linalg.solve(
            eye - cf.a_star, eye - np.linalg.matrix_power(cf.a_star, r)
        ) @ cf.j_selector.T
        np.testing.assert_allclose(direct, closed, rtol=0, atol=1e-10)


def test_irf_needs_prices(single_company):
    with pytest.raises(MissingPrices):
        price_irf(single_company.ctx.without_prices(), *single_company.args, 2)


# ── 路径表示 ──────────────────────────────────────────
def test_representations_agree_on_a_path():
    rng = np.random.default_rng(5)
    horizon, r = 300, 7
    log_required = 0.10 + 0.02 * rng.standard_normal((horizon, 2))
    log_growth = 0.04 + 0.02 * rng.standard_normal((horizon, 2))
    dividends = np.array([1.0, 1.5])
    origin = price_from_dividends(log_required, log_growth, dividends, 0)
    observed = price_from_observed(log_required[:r], log_growth[:r], origin, dividends)[-1]
    np.testing.assert_allclose(price_from_dividends(log_required, log_growth, dividends, r), observed, rtol=1e-10)


def test_dividend_representation_residual_decays():
    steps = np.tile([K_GORDON, np.log(1.05)], (400, 1))
    gaps = []
    for horizon in (100, 200, 400):
        price = price_from_dividends(steps[:horizon, :1], steps[:horizon, 1:], np.ones(1), 0)[0]
        gaps.append(21.0 - price)
    assert gaps[0] > gaps[1] > gaps[2] > 0
    assert gaps[2] / gaps[1] == pytest.approx((1.05 / 1.10) ** 200, rel=1e-3)


# ── 上下文 ────────────────────────────────────────────
def test_context_from_panel_orders_lags_newest_first():
    dates = pd.date_range("2020-03-31", periods=6, freq="QE")
    prices = np.array([[20.0], [21.0], [22.5], [23.0], [24.2], [25.0]])
    dividends = np.array([[1.0], [1.02], [1.05], [1.06], [1.1], [1.12]])
    panel = CompanyPanel(
        timestamps=dates, prices=prices, dividends=dividends, macro=np.empty((6, 0)), company_ids=("X",)
    )
    var_input = assemble_var_input(compute_rates(panel), panel)
    ctx = context_from_panel(var_input, panel, p=2)
    obs = var_input.observations
    np.testing.assert_array_equal(ctx.state, np.concatenate([obs[-1], obs[-2]]))
    np.testing.assert_allclose(ctx.log_dividends_now, np.log([1.12]))
    np.testing.assert_array_equal(ctx.prices_now, [25.0])
    assert ctx.as_of == "2021-06-30"
    assert ctx.company_ids == ("X",)
    assert context_from_panel(var_input, panel, p=1, with_prices=False).information_set == "F"


def test_context_validation(single_company):
    with pytest.raises(NonPositivePrice):
        ForecastContext(state=np.zeros(2), log_dividends_now=np.zeros(1), prices_now=np.array([-1.0]))
    bad = ForecastContext(state=np.zeros(4), log_dividends_now=np.zeros(1))
    with pytest.raises(LengthMismatch):
        theoretical_price(bad, *single_company.args, single_company.config)
