"""
VAR 引擎测试：估计、伴随形式、谱、Φ、条件矩与极限矩
"""
import numpy as np
import pytest

from conftest import random_stable_var, steady_state
from gordonvar.config.numerics import NumericsConfig
from gordonvar.core.exceptions import (
    HorizonZero,
    InsufficientData,
    LengthMismatch,
    NonPdSigma,
    SingularRegressorMatrix,
    UnstableModel,
)
from gordonvar.services.market_data import VarInput, VarLayout
from gordonvar.services.var_engine import (
    VarModel,
    analyze,
    companion,
    conditional_cov,
    conditional_mean,
    estimate_ols,
    gamma0_lyapunov,
    gamma0_truncated,
    gamma_eigen,
    gamma_truncated,
    limit_moments,
    mean_path,
    phi,
    phi_cumulative,
    phi_sequence,
    phi_window,
    spectral,
    unconditional_mean,
)


def simulate_var(model: VarModel, rows: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(model.sigma)
    y = np.zeros((rows + 200, model.n))
    for t in range(model.p, rows + 200):
        y[t] = model.nu + sum(a @ y[t - i - 1] for i, a in enumerate(model.lags)) + chol @ rng.standard_normal(model.n)
    return y[200:]


# ── 估计 ──────────────────────────────────────────────
def test_ols_recovers_ar1_within_standard_errors():
    layout = VarLayout(m=1, ell=0)
    truth = VarModel(nu=np.zeros(2), lags=(0.5 * np.eye(2),), sigma=np.eye(2), layout=layout)
    observations = simulate_var(truth, 10000, seed=20240101)
    model = estimate_ols(VarInput(observations=observations, layout=layout), 1)

    for i in range(2):
        # coef_stderr 第 1 + j 行对应 A_1[:, j]
        stderr = model.coef_stderr[1 + i, i]
        assert abs(model.lags[0][i, i] - 0.5) < 4 * stderr
    assert model.n_obs == 9999
    np.testing.assert_allclose(model.sigma, np.eye(2), atol=0.07)


def test_ols_exact_fit_is_clamped_positive_definite():
    layout = VarLayout(m=1, ell=0)
    rng = np.random.default_rng(3)
    g = rng.normal(size=30)
    k = 0.1 + 0.001 * np.arange(30)
    model = estimate_ols(VarInput(observations=np.column_stack([k, g]), layout=layout), 1)
    assert np.linalg.eigvalsh(model.sigma).min() > 0
    assert model.lags[0][0, 0] == pytest.approx(1.0, abs=1e-8)


def test_ols_insufficient_data():
    layout = VarLayout(m=1, ell=0)
    observations = np.random.default_rng(0).normal(size=(5, 2))
    with pytest.raises(InsufficientData):
        estimate_ols(VarInput(observations=observations, layout=layout), 2)


def test_ols_singular_design():
    layout = VarLayout(m=1, ell=0)
    rng = np.random.default_rng(1)
    k = rng.normal(size=40)
    observations = np.column_stack([k, 2.0 * k])
    with pytest.raises(SingularRegressorMatrix):
        estimate_ols(VarInput(observations=observations, layout=layout), 1)


def test_var_input_column_check():
    with pytest.raises(LengthMismatch):
        VarInput(observations=np.zeros((10, 3)), layout=VarLayout(m=1, ell=0))


# ── 模型校验 ──────────────────────────────────────────
def test_model_rejects_asymmetric_sigma():
    sigma = np.array([[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(NonPdSigma):
        VarModel(nu=np.zeros(2), lags=(np.zeros((2, 2)),), sigma=sigma, layout=VarLayout(m=1, ell=0))


def test_model_rejects_indefinite_sigma():
    sigma = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NonPdSigma):
        VarModel(nu=np.zeros(2), lags=(np.zeros((2, 2)),), sigma=sigma, layout=VarLayout(m=1, ell=0))


def test_model_arrays_are_read_only(single_company):
    with pytest.raises(ValueError):
        single_company.model.sigma[0, 0] = 1.0


# ── 伴随形式与谱 ──────────────────────────────────────
def test_companion_structure():
    model = random_stable_var(5, p=3)
    cf = companion(model)
    n = model.n
    assert cf.a_star.shape == (3 * n, 3 * n)
    np.testing.assert_array_equal(cf.a_star[:n, n:2 * n], model.lags[1])
    np.testing.assert_array_equal(cf.a_star[n:2 * n, :n], np.eye(n))
    np.testing.assert_array_equal(cf.j_selector[:, :n], np.eye(n))
    np.testing.assert_array_equal(cf.nu_star[:n], model.nu)


def test_spectral_flags_unit_root():
    layout = VarLayout(m=1, ell=0)
    model = VarModel(
        nu=np.zeros(2), lags=(np.diag([1.0, 0.5]),), sigma=0.01 * np.eye(2), layout=layout
    )
    info = spectral(companion(model), stability_margin=1e-8)
    assert not info.stable
    assert info.max_modulus == pytest.approx(1.0)
    assert info.summary()["stable"] is False


def test_spectral_sorted_by_modulus():
    model = random_stable_var(9)
    info = spectral(companion(model))
    moduli = np.abs(info.eigenvalues)
    assert np.all(np.diff(moduli) <= 1e-15)
    assert info.max_modulus == pytest.approx(0.9, abs=1e-10)
    assert info.stable


@pytest.mark.parametrize("seed", range(20))
def test_eigendecomposition_reconstructs_companion(seed):
    cf = companion(random_stable_var(seed, p=1 + seed % 3))
    info = spectral(cf)
    vectors = info.eigenvectors
    rebuilt = vectors @ np.diag(info.eigenvalues) @ np.linalg.inv(vectors)
    scale = np.linalg.norm(cf.a_star)
    assert np.linalg.norm(rebuilt - cf.a_star) <= 1e-8 * scale
    assert np.max(np.abs(rebuilt.imag)) <= 1e-8 * scale


def test_repeated_eigenvalues_not_distinct(single_company):
    assert not single_company.spectral.distinct


# ── Φ 矩阵 ────────────────────────────────────────────
def test_phi_recursion_matches_power():
    model = random_stable_var(4, p=2)
    cf = companion(model)
    phis = phi_sequence(cf, 6)
    np.testing.assert_allclose(phis[0], np.eye(model.n))
    np.testing.assert_allclose(phis[1], model.lags[0])
    # Φ_j = Σ_i A_i Φ_{j-i}
    for j in range(2, 7):
        np.testing.assert_allclose(phis[j], model.lags[0] @ phis[j - 1] + model.lags[1] @ phis[j - 2], atol=1e-12)
        np.testing.assert_allclose(phi(cf, j), phis[j], atol=1e-12)
    assert not phis[3].flags.writeable


@pytest.mark.parametrize("seed", range(10))
def test_phi_recursion_over_long_horizons(seed):
    p = 1 + seed % 3
    model = random_stable_var(100 + seed, p=p)
    phis = phi_sequence(companion(model), 50)
    np.testing.assert_array_equal(phis[0], np.eye(model.n))
    for q in range(1, 51):
        expected = sum(model.lags[i - 1] @ phis[q - i] for i in range(1, min(q, p) + 1))
        np.testing.assert_allclose(phis[q], expected, rtol=1e-9, atol=1e-10)


def test_phi_window_reuses_cache():
    model = random_stable_var(12, p=2)
    cf, info = analyze(model, NumericsConfig(read_env=False))
    moments = limit_moments(model, cf, info, NumericsConfig(read_env=False))
    window = phi_window(cf, 5, moments)
    assert len(window) == 6
    assert window[3] is moments.phi_cache[3]

    horizon = len(moments.phi_cache) + 3
    longer = phi_window(cf, horizon, moments)
    assert len(longer) == horizon + 1
    np.testing.assert_allclose(longer[:len(moments.phi_cache)], np.stack(moments.phi_cache), atol=1e-12)
    np.testing.assert_allclose(phi_window(cf, 5)[5], window[5], atol=1e-12)


def test_phi_cumulative():
    model = random_stable_var(6)
    phis = phi_sequence(companion(model), 5)
    psi = phi_cumulative(phis)
    np.testing.assert_allclose(psi[-1], sum(phis))


def test_phi_negative_horizon():
    with pytest.raises(HorizonZero):
        phi(companion(random_stable_var(1)), -1)


# ── 条件矩 ────────────────────────────────────────────
def test_conditional_mean_direct_and_recursive_agree():
    model = random_stable_var(12, p=2)
    cf = companion(model)
    state = np.random.default_rng(12).normal(size=cf.dim)
    path = mean_path(cf, state, 8)
    for j in range(1, 9):
        np.testing.assert_allclose(conditional_mean(model, cf, state, j), path[j - 1], rtol=1e-10, atol=1e-10)


def test_conditional_mean_rejects_zero_horizon(single_company):
    with pytest.raises(HorizonZero):
        conditional_mean(single_company.model, single_company.companion, single_company.ctx.state, 0)


@pytest.mark.parametrize("seed", range(10))
def test_conditional_moments_converge_to_limits(seed):
    model = random_stable_var(seed, p=2)
    cf = companion(model)
    state = steady_state(model) + 0.01 * np.random.default_rng(seed + 100).normal(size=cf.dim)
    gamma0, _ = gamma0_lyapunov(model, cf)
    np.testing.assert_allclose(conditional_mean(model, cf, state, 200), unconditional_mean(model), atol=1e-6)
    np.testing.assert_allclose(conditional_cov(model, cf, 200, 200), gamma0, atol=1e-6)


def test_conditional_cov_is_transpose_symmetric():
    model = random_stable_var(21, p=2)
    cf = companion(model)
    np.testing.assert_allclose(conditional_cov(model, cf, 3, 5), conditional_cov(model, cf, 5, 3).T, atol=1e-14)


# ── 极限矩 ────────────────────────────────────────────
@pytest.mark.parametrize("seed", range(50))
def test_gamma_eigen_matches_truncated(seed):
    model = random_stable_var(seed, p=2)
    cf = companion(model)
    info = spectral(cf)
    if not info.distinct:
        pytest.skip("特征值重复")
    closed = gamma_eigen(model, cf, info)
    summed, _ = gamma_truncated(model, cf, info.max_modulus, tail_tol=1e-12)
    np.testing.assert_allclose(closed, summed, rtol=0, atol=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_lyapunov_gamma0_matches_truncated(seed):
    model = random_stable_var(seed, p=2)
    cf = companion(model)
    gamma0, state_cov = gamma0_lyapunov(model, cf)
    np.testing.assert_allclose(gamma0, gamma0_truncated(model, cf, 500), rtol=0, atol=1e-9)
    np.testing.assert_allclose(state_cov, cf.a_star @ state_cov @ cf.a_star.T + cf.j_selector.T @ model.sigma @ cf.j_selector, atol=1e-10)


def test_limit_moments_fall_back_on_repeated_eigenvalues(single_company):
    moments = limit_moments(single_company.model, single_company.companion, single_company.spectral)
    assert moments.gamma_method == "truncated"
    # A = 0.2 I：Γ = Σ_{j≥1} A^j Γ(0) = 0.25 Γ(0)
    np.testing.assert_allclose(moments.gamma0, 0.0025 / (1 - 0.04) * np.eye(2), atol=1e-14)
    np.testing.assert_allclose(moments.gamma, 0.25 * moments.gamma0, atol=1e-12)
    np.testing.assert_allclose(moments.mu, [0.10, 0.04], atol=1e-14)


def test_limit_moments_rejects_unstable():
    model = VarModel(
        nu=np.zeros(2), lags=(np.diag([1.0, 0.3]),), sigma=0.01 * np.eye(2), layout=VarLayout(m=1, ell=0)
    )
    cf, info = analyze(model, NumericsConfig(read_env=False))
    with pytest.raises(UnstableModel) as excinfo:
        limit_moments(model, cf, info)
    assert excinfo.value.spectral_summary["max_modulus"] == pytest.approx(1.0)


def test_gamma_truncated_rejects_unit_root(single_company):
    with pytest.raises(UnstableModel):
        gamma_truncated(single_company.model, single_company.companion, 1.0)


def test_steady_state_is_fixed_point():
    model = random_stable_var(33, p=2)
    cf = companion(model)
    state = steady_state(model)
    np.testing.assert_allclose(mean_path(cf, state, 3)[-1], unconditional_mean(model), atol=1e-12)
