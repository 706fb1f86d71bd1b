"""
VAR(p) 引擎
最小二乘估计、伴随形式、谱分析、Φ_q 脉冲矩阵、条件矩与极限矩 μ、Γ(0)、Γ
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from gordonvar.config.numerics import NumericsConfig, get_numerics_config
from gordonvar.core.exceptions import (
    EigenSolverFailure,
    HorizonZero,
    InsufficientData,
    LengthMismatch,
    NonPdSigma,
    SingularRegressorMatrix,
    TailBoundNotReached,
    UnstableModel,
)
from gordonvar.services.market_data import VarInput, VarLayout
from gordonvar.utils.linalg import is_psd, is_symmetric, nearest_pd, symmetrize

logger = logging.getLogger(__name__)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class VarModel:
    """y_t = ν + A_1 y_{t-1} + … + A_p y_{t-p} + ξ_t，ξ_t ~ N(0, Σ)"""
    nu: np.ndarray
    lags: Tuple[np.ndarray, ...]
    sigma: np.ndarray
    layout: VarLayout
    # 估计诊断，不参与序列化
    coef_stderr: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    n_obs: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        n = self.layout.n
        object.__setattr__(self, "nu", _frozen(self.nu).reshape(-1))
        object.__setattr__(self, "lags", tuple(_frozen(a) for a in self.lags))
        object.__setattr__(self, "sigma", _frozen(self.sigma))

        if len(self.lags) < 1:
            raise LengthMismatch("至少需要一个滞后矩阵")
        if self.nu.shape != (n,):
            raise LengthMismatch(f"截距维度 {self.nu.shape} 与 n={n} 不符")
        for i, a in enumerate(self.lags, start=1):
            if a.shape != (n, n):
                raise LengthMismatch(f"A_{i} 维度 {a.shape} 与 ({n}, {n}) 不符")
        if self.sigma.shape != (n, n):
            raise LengthMismatch(f"Σ 维度 {self.sigma.shape} 与 ({n}, {n}) 不符")
        if not is_symmetric(self.sigma, 1e-12):
            raise NonPdSigma("Σ 不对称")
        # Σ = 0 的确定性极限允许用于估值，估计结果总是正定
        if not is_psd(self.sigma):
            raise NonPdSigma("Σ 存在负特征值")

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def p(self) -> int:
        return len(self.lags)

    @property
    def m(self) -> int:
        return self.layout.m

    @property
    def ell(self) -> int:
        return self.layout.ell


@dataclass(frozen=True)
class CompanionForm:
    """VAR(1) 形式：y*_t = ν* + A* y*_{t-1} + ξ*_t"""
    a_star: np.ndarray
    j_selector: np.ndarray
    nu_star: np.ndarray

    @property
    def n(self) -> int:
        return self.j_selector.shape[0]

    @property
    def dim(self) -> int:
        return self.a_star.shape[0]


@dataclass(frozen=True)
class SpectralInfo:
    """A* 的特征值（按模降序）、特征向量与稳定性判定"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    max_modulus: float
    distinct: bool
    stable: bool
    stability_margin: float = 1e-8
    min_gap: float = float("inf")

    def summary(self) -> Dict[str, Any]:
        return {
            "max_modulus": float(self.max_modulus),
            "stable": bool(self.stable),
            "distinct": bool(self.distinct),
            "stability_margin": float(self.stability_margin),
            "min_gap": float(self.min_gap) if np.isfinite(self.min_gap) else None,
            "eigenvalues": [[float(v.real), float(v.imag)] for v in self.eigenvalues],
        }


@dataclass(frozen=True)
class MomentSet:
    """无条件均值 μ、协方差 Γ(0)、累积交叉协方差极限 Γ 与 Φ 缓存"""
    mu: np.ndarray
    gamma0: np.ndarray
    gamma: np.ndarray
    phi_cache: Tuple[np.ndarray, ...]
    spectral: SpectralInfo
    gamma_method: str = "eigen"


# ── 估计 ──────────────────────────────────────────────
def _lagged_design(observations: np.ndarray, p: int) -> np.ndarray:
    """行 t（t = p..T-1）为 [1, y_{t-1}', …, y_{t-p}']"""
    rows = observations.shape[0] - p
    blocks = [np.ones((rows, 1))]
    for i in range(1, p + 1):
        blocks.append(observations[p - i:observations.shape[0] - i])
    return np.hstack(blocks)


def estimate_ols(var_input: VarInput, p: int) -> VarModel:
    """
    逐方程最小二乘估计 VAR(p)（含截距）

    Args:
        var_input: T×n 观测
        p: 滞后阶数

    Returns:
        VarModel；Σ 为残差协方差（除数 T − p − np − 1），必要时截断为正定

    Raises:
        InsufficientData: T − p < np + 1
        SingularRegressorMatrix: 设计矩阵秩亏
    """
    if p < 1:
        raise InsufficientData(f"滞后阶数必须 ≥ 1: {p}")
    observations = np.asarray(var_input.observations, dtype=float)
    total, n = observations.shape
    n_params = n * p + 1
    if total - p < n_params:
        raise InsufficientData(
            f"样本不足: T − p = {total - p} < np + 1 = {n_params}（n={n}, p={p}）"
        )

    design = _lagged_design(observations, p)
    targets = observations[p:]
    coefs, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    if rank < n_params:
        raise SingularRegressorMatrix(f"设计矩阵秩 {rank} < {n_params}")

    resid = targets - design @ coefs
    dof = total - p - n_params
    if dof <= 0:
        logger.warning(f"残差自由度为 {dof}，Σ 改用除数 T − p = {total - p}")
        dof = total - p
    sigma = nearest_pd(resid.T @ resid / dof)

    nu = coefs[0]
    lags = tuple(coefs[1 + i * n:1 + (i + 1) * n].T for i in range(p))

    # 系数标准误：diag((Z'Z)^{-1}) ⊗ diag(Σ)
    zz_inv_diag = np.diag(np.linalg.pinv(design.T @ design))
    stderr = np.sqrt(np.outer(zz_inv_diag, np.clip(np.diag(sigma), 0.0, None)))

    model = VarModel(
        nu=nu,
        lags=lags,
        sigma=sigma,
        layout=var_input.layout,
        coef_stderr=stderr,
        n_obs=total - p,
    )
    logger.info(f"VAR({p}) 估计完成: n={n}，有效样本 {total - p}，自由度 {dof}")
    return model


# ── 伴随形式与谱 ──────────────────────────────────────
def companion(model: VarModel) -> CompanionForm:
    """构造 (np×np) 伴随矩阵 A*、选择矩阵 J = [I_n : 0 : … : 0] 与 ν*"""
    n, p = model.n, model.p
    a_star = np.zeros((n * p, n * p))
    a_star[:n, :] = np.hstack(model.lags)
    if p > 1:
        a_star[n:, :-n] = np.eye(n * (p - 1))
    j_selector = np.hstack([np.eye(n), np.zeros((n, n * (p - 1)))])
    nu_star = np.concatenate([model.nu, np.zeros(n * (p - 1))])
    return CompanionForm(
        a_star=_frozen(a_star),
        j_selector=_frozen(j_selector),
        nu_star=_frozen(nu_star),
    )


def spectral(
    companion_form: CompanionForm,
    stability_margin: Optional[float] = None,
    distinctness_tol: Optional[float] = None,
) -> SpectralInfo:
    """
    计算 A* 的特征分解

    Returns:
        SpectralInfo：stable ⇔ 最大模 < 1 − margin；distinct ⇔ 最小两两间距 > distinctness_tol
    """
    config = get_numerics_config()
    margin = config.stability_margin if stability_margin is None else stability_margin
    gap_tol = config.distinctness_tol if distinctness_tol is None else distinctness_tol

    try:
        eigvals, eigvecs = np.linalg.eig(companion_form.a_star)
    except np.linalg.LinAlgError as e:
        raise EigenSolverFailure(f"特征值求解失败: {e}")
    if not (np.all(np.isfinite(eigvals)) and np.all(np.isfinite(eigvecs))):
        raise EigenSolverFailure("特征分解含非有限值")

    order = np.argsort(-np.abs(eigvals), kind="stable")
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    max_modulus = float(np.abs(eigvals[0]))

    if eigvals.size > 1:
        gaps = np.abs(eigvals[:, None] - eigvals[None, :])
        gaps[np.diag_indices_from(gaps)] = np.inf
        min_gap = float(gaps.min())
    else:
        min_gap = float("inf")

    return SpectralInfo(
        eigenvalues=eigvals,
        eigenvectors=eigvecs,
        max_modulus=max_modulus,
        distinct=min_gap > gap_tol,
        stable=max_modulus < 1.0 - margin,
        stability_margin=margin,
        min_gap=min_gap,
    )


# ── Φ 矩阵 ────────────────────────────────────────────
def phi(companion_form: CompanionForm, q: int) -> np.ndarray:
    """Φ_q = J (A*)^q J'"""
    if q < 0:
        raise HorizonZero(f"q 必须 ≥ 0: {q}")
    n = companion_form.n
    return np.linalg.matrix_power(companion_form.a_star, q)[:n, :n]


def phi_sequence(companion_form: CompanionForm, horizon: int) -> Tuple[np.ndarray, ...]:
    """Φ_0..Φ_horizon，逐步左乘 A*；结果只读"""
    n = companion_form.n
    block = companion_form.j_selector.T.copy()
    phis = [_frozen(block[:n])]
    for _ in range(horizon):
        block = companion_form.a_star @ block
        phis.append(_frozen(block[:n]))
    return tuple(phis)


def phi_window(
    companion_form: CompanionForm,
    horizon: int,
    moments: Optional[MomentSet] = None,
) -> Tuple[np.ndarray, ...]:
    """Φ_0..Φ_horizon；缓存足够长时直接截取"""
    if moments is not None and len(moments.phi_cache) > horizon:
        return moments.phi_cache[:horizon + 1]
    return phi_sequence(companion_form, horizon)


def phi_cumulative(phis: Tuple[np.ndarray, ...]) -> np.ndarray:
    """Ψ_h = Σ_{l≤h} Φ_l，返回 (H+1)×n×n"""
    return np.cumsum(np.stack(phis), axis=0)


# ── 条件矩 ────────────────────────────────────────────
def conditional_mean(
    model: VarModel,
    companion_form: CompanionForm,
    state: np.ndarray,
    j: int,
) -> np.ndarray:
    """E(y_{t+j} | F_t) = Σ_{q=1}^j Φ_{j-q} ν + J (A*)^j y*_t"""
    if j < 1:
        raise HorizonZero(f"预测步长必须 ≥ 1: {j}")
    state = np.asarray(state, dtype=float)
    if state.shape != (companion_form.dim,):
        raise LengthMismatch(f"状态维度 {state.shape} 与 np={companion_form.dim} 不符")
    phis = phi_sequence(companion_form, j - 1)
    drift = sum(phis) @ model.nu
    power = np.linalg.matrix_power(companion_form.a_star, j)
    return drift + companion_form.j_selector @ power @ state


def mean_path(companion_form: CompanionForm, state: np.ndarray, horizon: int) -> np.ndarray:
    """逐步递推 E(y_{t+j} | F_t)，j = 1..horizon，返回 horizon×n"""
    n = companion_form.n
    current = np.asarray(state, dtype=float)
    path = np.empty((horizon, n))
    for j in range(horizon):
        current = companion_form.nu_star + companion_form.a_star @ current
        path[j] = current[:n]
    return path


def conditional_cov(
    model: VarModel,
    companion_form: CompanionForm,
    j1: int,
    j2: int,
) -> np.ndarray:
    """Cov(y_{t+j1}, y_{t+j2} | F_t) = Σ_{q=1}^{j1∧j2} Φ_{j1-q} Σ Φ_{j2-q}'"""
    if j1 < 1 or j2 < 1:
        raise HorizonZero(f"预测步长必须 ≥ 1: ({j1}, {j2})")
    phis = phi_sequence(companion_form, max(j1, j2) - 1)
    cov = np.zeros((model.n, model.n))
    for q in range(1, min(j1, j2) + 1):
        cov += phis[j1 - q] @ model.sigma @ phis[j2 - q].T
    return cov


# ── 极限矩 ────────────────────────────────────────────
def unconditional_mean(model: VarModel) -> np.ndarray:
    """μ = (I − A_1 − … − A_p)^{-1} ν"""
    return np.linalg.solve(np.eye(model.n) - sum(model.lags), model.nu)


def gamma0_lyapunov(model: VarModel, companion_form: CompanionForm) -> Tuple[np.ndarray, np.ndarray]:
    """解 V = A* V A*' + J'ΣJ，返回 (Γ(0) = J V J', V)"""
    j = companion_form.j_selector
    state_cov = solve_discrete_lyapunov(companion_form.a_star, j.T @ model.sigma @ j)
    state_cov = symmetrize(state_cov)
    return symmetrize(j @ state_cov @ j.T), state_cov


def gamma0_truncated(model: VarModel, companion_form: CompanionForm, n_terms: int = 500) -> np.ndarray:
    """Γ(0) ≈ Σ_{q=0}^{n_terms-1} Φ_q Σ Φ_q'"""
    total = np.zeros((model.n, model.n))
    for phi_q in phi_sequence(companion_form, n_terms - 1):
        total += phi_q @ model.sigma @ phi_q.T
    return total


def gamma_eigen(
    model: VarModel,
    companion_form: CompanionForm,
    spectral_info: SpectralInfo,
    imag_tol: Optional[float] = None,
) -> np.ndarray:
    """
    Γ 的特征分解闭式：Γ = J C (M ⊙ W) C' J'

    M = C^{-1} J'ΣJ (C^{-1})'，W_{αβ} = λ_α / ((1 − λ_α)(1 − λ_α λ_β))
    """
    imag_tol = get_numerics_config().imag_tol if imag_tol is None else imag_tol
    n = model.n
    j = companion_form.j_selector
    vecs = spectral_info.eigenvectors
    lam = spectral_info.eigenvalues
    try:
        vecs_inv = np.linalg.inv(vecs)
    except np.linalg.LinAlgError as e:
        raise EigenSolverFailure(f"特征向量矩阵不可逆: {e}")

    middle = vecs_inv @ (j.T @ model.sigma @ j) @ vecs_inv.T
    weights = lam[:, None] / ((1.0 - lam)[:, None] * (1.0 - lam[:, None] * lam[None, :]))
    projected = vecs[:n, :]
    gamma = projected @ (middle * weights) @ projected.T

    scale = max(1.0, float(np.max(np.abs(gamma.real), initial=0.0)))
    residue = float(np.max(np.abs(gamma.imag), initial=0.0))
    if residue > imag_tol * scale:
        raise EigenSolverFailure(f"Γ 虚部残差 {residue:.3e} 超过容差")
    return np.ascontiguousarray(gamma.real)


def gamma_truncated(
    model: VarModel,
    companion_form: CompanionForm,
    max_modulus: float,
    tail_tol: Optional[float] = None,
    max_terms: Optional[int] = None,
) -> Tuple[np.ndarray, int]:
    """
    截断双重求和：Γ_K = Σ_{j2=1}^K Φ_{j2} Σ Ψ_{j2-1}'，Ψ_h = Σ_{l≤h} Φ_l

    尾项界：‖Φ_k‖ ≤ M ρ^k（ρ = (1 + 最大模)/2，M 取已观测的 ‖(A*)^k J'‖ / ρ^k 上确界），
    剩余质量 ≤ ‖Σ‖ · M/(1−ρ) · M ρ^{K+1}/(1−ρ)

    Returns:
        (Γ, 使用的项数)
    """
    config = get_numerics_config()
    tail_tol = config.gamma_tail_tol if tail_tol is None else tail_tol
    max_terms = config.max_terms if max_terms is None else max_terms
    if max_modulus >= 1.0:
        raise UnstableModel(f"最大特征值模 {max_modulus:.6f} ≥ 1，Γ 不存在")

    n = model.n
    rho = 0.5 * (1.0 + max_modulus)
    log_rho = np.log(rho)
    sigma_norm = float(np.linalg.norm(model.sigma, 2))
    block = companion_form.j_selector.T.copy()
    psi = np.eye(n)
    gamma = np.zeros((n, n))
    log_m = 0.0

    for k in range(1, max_terms + 1):
        block = companion_form.a_star @ block
        phi_k = block[:n]
        gamma += phi_k @ model.sigma @ psi.T
        psi = psi + phi_k

        block_norm = float(np.linalg.norm(block, 2))
        if block_norm > 0.0:
            log_m = max(log_m, np.log(block_norm) - k * log_rho)
        log_bound = (
            2.0 * log_m + (k + 1) * log_rho - 2.0 * np.log1p(-rho)
        )
        if sigma_norm == 0.0 or np.log(sigma_norm) + log_bound < np.log(tail_tol):
            return gamma, k

    raise TailBoundNotReached(f"Γ 截断求和 {max_terms} 项内未达到尾项界 {tail_tol:.1e}")


def limit_moments(
    model: VarModel,
    companion_form: CompanionForm,
    spectral_info: SpectralInfo,
    config: Optional[NumericsConfig] = None,
) -> MomentSet:
    """
    计算 μ、Γ(0)（Lyapunov 方程）与 Γ（特征闭式；特征值重复或 C 病态时改用截断求和）

    Raises:
        UnstableModel: 谱不稳定
        TailBoundNotReached: 截断求和未达精度
    """
    config = config or get_numerics_config()
    if not spectral_info.stable:
        raise UnstableModel(
            f"模型不稳定: 最大特征值模 {spectral_info.max_modulus:.10f}",
            spectral_summary=spectral_info.summary(),
        )

    mu = unconditional_mean(model)
    gamma0, _ = gamma0_lyapunov(model, companion_form)

    method = "eigen"
    condition = np.linalg.cond(spectral_info.eigenvectors) if spectral_info.distinct else np.inf
    if spectral_info.distinct and condition <= config.max_condition:
        try:
            gamma = gamma_eigen(model, companion_form, spectral_info, config.imag_tol)
        except EigenSolverFailure as e:
            logger.warning(f"特征闭式失败（{e.message}），改用截断求和")
            method = "truncated"
    else:
        method = "truncated"
        logger.warning(
            f"特征值非互异或特征向量病态（cond={condition:.2e}），Γ 改用截断求和"
        )
    if method == "truncated":
        gamma, terms = gamma_truncated(
            model,
            companion_form,
            spectral_info.max_modulus,
            tail_tol=config.gamma_tail_tol,
            max_terms=config.max_terms,
        )
        logger.debug(f"Γ 截断求和使用 {terms} 项")

    return MomentSet(
        mu=_frozen(mu),
        gamma0=_frozen(gamma0),
        gamma=_frozen(gamma),
        phi_cache=phi_sequence(companion_form, config.phi_cache_horizon),
        spectral=spectral_info,
        gamma_method=method,
    )


def analyze(model: VarModel, config: Optional[NumericsConfig] = None) -> Tuple[CompanionForm, SpectralInfo]:
    """伴随形式 + 谱分析的便捷组合"""
    config = config or get_numerics_config()
    companion_form = companion(model)
    return companion_form, spectral(companion_form, config.stability_margin, config.distinctness_tol)
