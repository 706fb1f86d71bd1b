"""
估值服务
收敛门槛、理论价格级数与二阶矩、价格预测、价格脉冲响应

约定：对公司 i，z_q = J_{g,k} Σ_{j=1}^q y_{t+j}，级数第 q 项
    ŝ_{i,q} = exp{ d̃_i + E(e_i'z_q | F_t) + ½ Var(e_i'z_q | F_t) }
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from gordonvar.config.numerics import NumericsConfig, get_numerics_config
from gordonvar.core.exceptions import (
    HorizonZero,
    InsufficientData,
    LengthMismatch,
    MissingPrices,
    NonPositivePrice,
    NotConvergent,
    TailBoundNotReached,
)
from gordonvar.services.market_data import CompanyPanel, VarInput, VarLayout
from gordonvar.services.var_engine import (
    CompanionForm,
    MomentSet,
    VarModel,
    limit_moments,
    mean_path,
    phi_cumulative,
    phi_window,
    spectral,
)

logger = logging.getLogger(__name__)


# ── 领域类型 ──────────────────────────────────────────
@dataclass(frozen=True)
class ForecastContext:
    """
    预测起点的信息集

    prices_now 为空时对应 F_t（仅股利与因子），给出时对应 G_t（另含当期价格）
    """
    state: np.ndarray
    log_dividends_now: np.ndarray
    prices_now: Optional[np.ndarray] = None
    as_of: Optional[str] = None
    company_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "state", np.asarray(self.state, dtype=float).reshape(-1))
        object.__setattr__(
            self, "log_dividends_now", np.asarray(self.log_dividends_now, dtype=float).reshape(-1)
        )
        if self.prices_now is not None:
            prices = np.asarray(self.prices_now, dtype=float).reshape(-1)
            if prices.shape != self.log_dividends_now.shape:
                raise LengthMismatch(f"价格维度 {prices.shape} 与股利 {self.log_dividends_now.shape} 不符")
            if (prices <= 0).any():
                raise NonPositivePrice("当期价格必须为正")
            object.__setattr__(self, "prices_now", prices)

    @property
    def dividends_now(self) -> np.ndarray:
        return np.exp(self.log_dividends_now)

    @property
    def information_set(self) -> str:
        return "F" if self.prices_now is None else "G"

    def without_prices(self) -> "ForecastContext":
        return replace(self, prices_now=None)

    def with_prices(self, prices: np.ndarray) -> "ForecastContext":
        return replace(self, prices_now=np.asarray(prices, dtype=float))

    def check_against(self, model: VarModel) -> None:
        if self.state.shape != (model.n * model.p,):
            raise LengthMismatch(f"状态维度 {self.state.shape} 与 np={model.n * model.p} 不符")
        if self.log_dividends_now.shape != (model.m,):
            raise LengthMismatch(f"股利维度 {self.log_dividends_now.shape} 与 m={model.m} 不符")


@dataclass(frozen=True)
class SelectorSet:
    """J_k、J_g、J_{g,k} = J_g − J_k 与单位向量 e_i"""
    j_k: np.ndarray
    j_g: np.ndarray
    j_gk: np.ndarray
    unit_vectors: np.ndarray

    @property
    def m(self) -> int:
        return self.j_k.shape[0]


@dataclass(frozen=True)
class ConvergenceReport:
    """两个收敛条件的左端值与判定"""
    first_moment_lhs: np.ndarray
    second_moment_lhs: np.ndarray
    first_ok: np.ndarray
    second_ok: np.ndarray
    spectral_summary: Dict[str, Any]
    gate_tol: float = 1e-12

    @property
    def all_first_ok(self) -> bool:
        return bool(self.first_ok.all())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "first_moment_lhs": self.first_moment_lhs.tolist(),
            "second_moment_lhs": self.second_moment_lhs.tolist(),
            "first_ok": self.first_ok.tolist(),
            "second_ok": self.second_ok.tolist(),
            "gate_tol": self.gate_tol,
            "spectral": self.spectral_summary,
        }


@dataclass(frozen=True)
class ValuationResult:
    """理论价格、二阶矩与截断诊断；未估值的位置为 NaN"""
    price: np.ndarray
    terms_used: np.ndarray
    truncation_error_bound: np.ndarray
    second_moment: Optional[np.ndarray] = None
    second_moment_bound: Optional[np.ndarray] = None
    trace: Optional[List[np.ndarray]] = field(default=None, repr=False)


def build_selectors(layout: VarLayout) -> SelectorSet:
    m, n = layout.m, layout.n
    eye = np.eye(m)
    j_k = np.zeros((m, n))
    j_k[:, layout.k_columns()] = eye
    j_g = np.zeros((m, n))
    j_g[:, layout.g_columns()] = eye
    return SelectorSet(j_k=j_k, j_g=j_g, j_gk=j_g - j_k, unit_vectors=eye)


def context_from_panel(
    var_input: VarInput,
    panel: CompanyPanel,
    p: int,
    with_prices: bool = True,
) -> ForecastContext:
    """以估计样本最后 p 行构造 y*_t = (y_T', …, y_{T-p+1}')'"""
    observations = var_input.observations
    if observations.shape[0] < p:
        raise InsufficientData(f"样本行数 {observations.shape[0]} 少于滞后阶数 {p}")
    state = np.concatenate([observations[-i] for i in range(1, p + 1)])
    return ForecastContext(
        state=state,
        log_dividends_now=np.log(panel.dividends[-1]),
        prices_now=panel.prices[-1] if with_prices else None,
        as_of=str(panel.timestamps[-1].date()),
        company_ids=panel.company_ids,
    )


# ── 收敛门槛 ──────────────────────────────────────────
def check_convergence(
    model: VarModel,
    moments: MomentSet,
    selectors: SelectorSet,
    gate_tol: Optional[float] = None,
) -> ConvergenceReport:
    """
    一阶：e_i'J_{g,k}μ + e_i'J_{g,k}(½Γ(0) + Γ)J_{g,k}'e_i < 0
    二阶：两家公司 e'J_{g,k}μ + e'J_{g,k}(Γ(0) + 2Γ)J_{g,k}'e 的较大者 < 0

    lhs 在 gate_tol 以内等于 0 视为不收敛
    """
    gate_tol = get_numerics_config().gate_tol if gate_tol is None else gate_tol
    j_gk = selectors.j_gk
    drift = j_gk @ moments.mu
    first = drift + np.diag(j_gk @ (0.5 * moments.gamma0 + moments.gamma) @ j_gk.T)
    own_second = drift + np.diag(j_gk @ (moments.gamma0 + 2.0 * moments.gamma) @ j_gk.T)
    second = np.maximum(own_second[:, None], own_second[None, :])

    report = ConvergenceReport(
        first_moment_lhs=first,
        second_moment_lhs=second,
        first_ok=first < -gate_tol,
        second_ok=second < -gate_tol,
        spectral_summary=moments.spectral.summary(),
        gate_tol=gate_tol,
    )
    logger.info(
        f"收敛检验: lhs={np.array2string(first, precision=6)}，"
        f"一阶通过 {int(report.first_ok.sum())}/{selectors.m}"
    )
    return report


def _gate(
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    config: NumericsConfig,
    moments: Optional[MomentSet],
) -> Tuple[MomentSet, ConvergenceReport]:
    if moments is None:
        spectral_info = spectral(companion_form, config.stability_margin, config.distinctness_tol)
        moments = limit_moments(model, companion_form, spectral_info, config)
    return moments, check_convergence(model, moments, selectors, config.gate_tol)


# ── 级数项生成 ────────────────────────────────────────
class _DividendSeries:
    """
    逐项生成 exp{Σ_{j≤r} g̃_{t+j} + Σ_{j=r+1}^{r+q}(g̃ − k̃)_{t+j}} · d_t 的条件期望（对数）

    记 S_h = Σ_{j≤h}(y_{t+j} − E y_{t+j}) = Σ_{s≤h} Ψ_{h-s} ξ_{t+s}，则指数的随机部分为
    J_k S_r + J_{g,k} S_{r+q}；方差与 Cov(S_r, S_{r+q}) 均可逐项累加
    """

    def __init__(
        self,
        ctx: ForecastContext,
        model: VarModel,
        companion_form: CompanionForm,
        selectors: SelectorSet,
        offset: int = 0,
    ):
        self.model = model
        self.companion = companion_form
        self.selectors = selectors
        self.offset = offset
        self.n = model.n
        self._sigma = model.sigma
        self._a_star = companion_form.a_star

        # 前缀段 j = 1..r
        self._mean_state = ctx.state.copy()
        self._block = companion_form.j_selector.T.copy()      # (A*)^h J'
        self._psi = np.zeros((self.n, self.n))                 # Ψ_{h-1}
        self._var_s = np.zeros((self.n, self.n))               # Var(S_h)
        prefix_mean = np.zeros(self.n)
        coupling = np.zeros((self.n, companion_form.dim))      # Σ_{k<r} Ψ_k Σ B_k'
        for _ in range(offset):
            prefix_mean += self._advance()
            coupling += self._psi @ self._sigma @ self._last_block.T
        self._var_s_prefix = self._var_s.copy()
        self._cross = self._var_s.copy()                       # Cov(S_r, S_h)
        self._coupling = coupling
        self._rows = companion_form.j_selector.copy()          # J (A*)^{h-r}
        self._base = ctx.log_dividends_now + selectors.j_g @ prefix_mean
        self._main_mean = np.zeros(self.n)
        self.q = 0

    def _advance(self) -> np.ndarray:
        """推进一步 h → h+1，返回 E y_{t+h+1}，并更新 Ψ 与 Var(S)"""
        self._mean_state = self.companion.nu_star + self._a_star @ self._mean_state
        self._last_block = self._block
        self._psi = self._psi + self._block[:self.n]
        self._var_s = self._var_s + self._psi @ self._sigma @ self._psi.T
        self._block = self._a_star @ self._block
        return self._mean_state[:self.n]

    @property
    def psi_rows(self) -> np.ndarray:
        """J_{g,k} Ψ_{h-1}（二阶矩交叉协方差用）"""
        return self.selectors.j_gk @ self._psi

    def step(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        生成下一项

        Returns:
            (均值部分 d̃ + E(指数), 方差矩阵 Var(指数))
        """
        self.q += 1
        self._main_mean += self._advance()
        if self.offset:
            self._rows = self._rows @ self._a_star
            self._cross = self._cross + self._coupling @ self._rows.T

        sel = self.selectors
        mean = self._base + sel.j_gk @ self._main_mean
        var = sel.j_gk @ self._var_s @ sel.j_gk.T
        if self.offset:
            mixed = sel.j_k @ self._cross @ sel.j_gk.T
            var = var + sel.j_k @ self._var_s_prefix @ sel.j_k.T + mixed + mixed.T
        return mean, var


class _RatioTruncation:
    """
    比值检验截断：q ≥ min_terms 且连续 window 个比值 ŝ_{q+1}/ŝ_q < 1 后，
    以最近 window 个比值的最大值 ρ 给出几何尾项界 ŝ_q ρ/(1−ρ)，界 < tol·部分和 即停止
    """

    def __init__(self, size: int, tol: float, min_terms: int, window: int, active: Optional[np.ndarray] = None):
        self.tol = tol
        self.min_terms = min_terms
        self.window = window
        self.partial = np.zeros(size)
        self.previous = np.full(size, np.nan)
        self.below = np.zeros(size, dtype=int)
        self.recent = np.full((window, size), np.inf)
        self.terms = np.zeros(size, dtype=int)
        self.bound = np.full(size, np.inf)
        self.done = np.zeros(size, dtype=bool) if active is None else ~active

    @property
    def finished(self) -> bool:
        return bool(self.done.all())

    def update(self, q: int, term: np.ndarray) -> np.ndarray:
        """累加第 q 项（仅未完成的分量），返回本步参与累加的掩码"""
        live = ~self.done
        self.partial[live] += term[live]
        self.terms[live] = q
        if q > 1:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = term / self.previous
            self.recent[q % self.window, live] = ratio[live]
            self.below[live] = np.where(ratio[live] < 1.0, self.below[live] + 1, 0)
        self.previous = np.where(live, term, self.previous)

        if q >= self.min_terms:
            ready = live & (self.below >= self.window)
            if ready.any():
                rho = self.recent[:, ready].max(axis=0)
                bound = term[ready] * rho / (1.0 - rho)
                self.bound[ready] = bound
                stop = bound < self.tol * self.partial[ready]
                idx = np.flatnonzero(ready)[stop]
                self.done[idx] = True
        return live


def _resolve_companies(companies: Optional[Sequence[int]], m: int) -> np.ndarray:
    mask = np.zeros(m, dtype=bool)
    if companies is None:
        mask[:] = True
    else:
        indices = list(companies)
        bad = [i for i in indices if not 0 <= i < m]
        if bad:
            raise LengthMismatch(f"公司序号越界: {bad}（m={m}）")
        mask[indices] = True
    return mask


def _sum_dividend_series(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    config: NumericsConfig,
    offset: int,
    active: np.ndarray,
    keep_trace: bool = False,
) -> Tuple[_RatioTruncation, Optional[List[List[float]]]]:
    series = _DividendSeries(ctx, model, companion_form, selectors, offset)
    truncation = _RatioTruncation(
        selectors.m, config.tol, config.ratio_min_terms, config.ratio_window, active=active
    )
    trace: Optional[List[List[float]]] = [[] for _ in range(selectors.m)] if keep_trace else None

    for q in range(1, config.max_terms + 1):
        mean, var = series.step()
        term = np.exp(mean + 0.5 * np.diag(var))
        live = truncation.update(q, term)
        if trace is not None:
            for i in np.flatnonzero(live):
                trace[i].append(float(term[i]))
        if truncation.finished:
            logger.debug(f"级数在第 {q} 项截断，尾项界 {truncation.bound}")
            return truncation, trace

    pending = [i for i in range(selectors.m) if not truncation.done[i]]
    raise TailBoundNotReached(
        f"{config.max_terms} 项内尾项界未达到 tol={config.tol:.1e}（公司 {pending}）"
    )


# ── 理论价格 ──────────────────────────────────────────
def theoretical_price(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    config: Optional[NumericsConfig] = None,
    companies: Optional[Sequence[int]] = None,
    override_gate: bool = False,
    moments: Optional[MomentSet] = None,
    keep_trace: bool = False,
) -> ValuationResult:
    """
    E(e_i'P_t | F_t) = Σ_{q≥1} ŝ_{i,q}

    Raises:
        NotConvergent: 所请求公司未通过一阶收敛条件（override_gate 可跳过）
        TailBoundNotReached: max_terms 内未能证明尾项 < tol·价格
    """
    config = config or get_numerics_config()
    ctx.check_against(model)
    active = _resolve_companies(companies, selectors.m)

    if not override_gate:
        _, report = _gate(model, companion_form, selectors, config, moments)
        failing = [i for i in np.flatnonzero(active) if not report.first_ok[i]]
        if failing:
            raise NotConvergent(
                f"公司 {failing} 不满足收敛条件（lhs={report.first_moment_lhs[failing].tolist()}）"
            )

    truncation, trace = _sum_dividend_series(
        ctx, model, companion_form, selectors, config, 0, active, keep_trace
    )
    price = np.where(active, truncation.partial, np.nan)
    logger.info(f"理论价格: {np.array2string(price, precision=6)}，项数 {truncation.terms.tolist()}")
    return ValuationResult(
        price=price,
        terms_used=np.where(active, truncation.terms, 0),
        truncation_error_bound=np.where(active, truncation.bound, np.nan),
        trace=[np.asarray(t) for t in trace] if trace is not None else None,
    )


def dividend_form_forecast(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    r: int,
    config: Optional[NumericsConfig] = None,
    override_gate: bool = False,
    moments: Optional[MomentSet] = None,
) -> np.ndarray:
    """
    仅基于 F_t 的 r 期价格预测：
    E[P_{t+r} | F_t] = Σ_{q≥1} E[exp{Σ_{j≤r} g̃ + Σ_{j=r+1}^{r+q}(g̃ − k̃)} | F_t] ⊙ d_t
    """
    if r < 0:
        raise HorizonZero(f"预测步长必须 ≥ 0: {r}")
    config = config or get_numerics_config()
    ctx.check_against(model)
    if not override_gate:
        _, report = _gate(model, companion_form, selectors, config, moments)
        if not report.all_first_ok:
            raise NotConvergent(f"F_t 预测需要收敛条件成立: lhs={report.first_moment_lhs.tolist()}")
    active = np.ones(selectors.m, dtype=bool)
    truncation, _ = _sum_dividend_series(ctx, model, companion_form, selectors, config, r, active)
    return truncation.partial


# ── 二阶矩 ────────────────────────────────────────────
@dataclass(frozen=True)
class _MarginalSeries:
    """二阶矩双重级数所需的单边量（长度 Q）"""
    log_mean: np.ndarray       # d̃_i + E(e_i'z_q)
    variance: np.ndarray       # Var(e_i'z_q)
    rows: np.ndarray           # e_i'J_{g,k} Ψ_{q-1}，Q×n
    root_sum: float            # Σ_q exp{log_mean + variance}
    root_bound: float          # 该级数的尾项界


def _marginals(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    config: NumericsConfig,
    companies: Sequence[int],
) -> Dict[int, _MarginalSeries]:
    """
    按 exp{d̃ + E(e'z_q) + Var(e'z_q)} 的比值截断规则确定各公司的截断长度；
    由 Cauchy–Schwarz，双重级数的每一项不超过两侧该量的乘积
    """
    active = _resolve_companies(companies, selectors.m)
    series = _DividendSeries(ctx, model, companion_form, selectors, 0)
    truncation = _RatioTruncation(
        selectors.m, config.tol, config.ratio_min_terms, config.ratio_window, active=active
    )
    log_means, variances, rows = [], [], []
    for q in range(1, config.max_terms + 1):
        mean, var = series.step()
        diag = np.diag(var)
        log_means.append(mean)
        variances.append(diag)
        rows.append(series.psi_rows)
        truncation.update(q, np.exp(mean + diag))
        if truncation.finished:
            break
    else:
        raise TailBoundNotReached(f"二阶矩单边级数 {config.max_terms} 项内未达到尾项界")

    log_means = np.asarray(log_means)
    variances = np.asarray(variances)
    rows = np.asarray(rows)
    out = {}
    for i in np.flatnonzero(active):
        length = int(truncation.terms[i])
        out[int(i)] = _MarginalSeries(
            log_mean=log_means[:length, i],
            variance=variances[:length, i],
            rows=rows[:length, i, :],
            root_sum=float(truncation.partial[i]),
            root_bound=float(truncation.bound[i]),
        )
    return out


def _double_series(
    first: _MarginalSeries,
    second: _MarginalSeries,
    sigma: np.ndarray,
    max_cells: int,
) -> Tuple[float, float]:
    """
    Σ_{q1,q2} exp{a1 + a2 + ½(v1 + v2) + c(q1,q2)}，
    c(q1,q2) = Σ_{s≤q1∧q2} w1_{q1-s} Σ w2_{q2-s}'，按对角线递推 c[a,b] = G[a,b] + c[a-1,b-1]
    """
    q1, q2 = first.log_mean.size, second.log_mean.size
    if q1 * q2 > max_cells:
        raise TailBoundNotReached(f"二阶矩网格 {q1}×{q2} 超过上限 {max_cells}")

    col_part = second.log_mean + 0.5 * second.variance
    right = sigma @ second.rows.T                       # n×Q2
    cross = np.zeros(q2)
    row_sums = np.empty(q1)
    for a in range(q1):
        g_row = first.rows[a] @ right
        shifted = np.concatenate([[0.0], cross[:-1]])
        cross = g_row + shifted
        exponent = first.log_mean[a] + 0.5 * first.variance[a] + col_part + cross
        row_sums[a] = np.exp(exponent).sum()
    total = float(row_sums.sum())

    full_1 = first.root_sum + first.root_bound
    full_2 = second.root_sum + second.root_bound
    bound = full_1 * full_2 - first.root_sum * second.root_sum
    return total, float(bound)


def mixed_moment(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    config: Optional[NumericsConfig] = None,
    i1: int = 0,
    i2: int = 0,
    override_gate: bool = False,
    moments: Optional[MomentSet] = None,
) -> float:
    """
    E(e_{i1}'P_t P_t'e_{i2} | F_t) 的双重级数

    Raises:
        NotConvergent: 二阶收敛条件不成立
        TailBoundNotReached: 单边级数未达尾项界或网格过大
    """
    value, _ = _mixed_moment(
        ctx, model, companion_form, selectors, config, i1, i2, override_gate, moments
    )
    return value


def _mixed_moment(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    config: Optional[NumericsConfig],
    i1: int,
    i2: int,
    override_gate: bool,
    moments: Optional[MomentSet],
    marginals: Optional[Dict[int, _MarginalSeries]] = None,
) -> Tuple[float, float]:
    config = config or get_numerics_config()
    ctx.check_against(model)
    _resolve_companies((i1, i2), model.m)
    if not override_gate:
        _, report = _gate(model, companion_form, selectors, config, moments)
        if not report.second_ok[i1, i2]:
            raise NotConvergent(
                f"公司 ({i1}, {i2}) 二阶矩不收敛: lhs={report.second_moment_lhs[i1, i2]:.6g}"
            )
    if marginals is None or i1 not in marginals or i2 not in marginals:
        marginals = _marginals(ctx, model, companion_form, selectors, config, sorted({i1, i2}))
    value, bound = _double_series(marginals[i1], marginals[i2], model.sigma, config.max_grid_cells)
    logger.debug(f"二阶矩 ({i1}, {i2}) = {value:.10g}，截断界 {bound:.3e}")
    return value, bound


def value_companies(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    config: Optional[NumericsConfig] = None,
    override_gate: bool = False,
    keep_trace: bool = False,
    moments: Optional[MomentSet] = None,
) -> Tuple[ValuationResult, ConvergenceReport]:
    """全部公司的理论价格，以及满足二阶条件的公司对的二阶矩"""
    config = config or get_numerics_config()
    moments, report = _gate(model, companion_form, selectors, config, moments)
    result = theoretical_price(
        ctx, model, companion_form, selectors, config,
        override_gate=override_gate, moments=moments, keep_trace=keep_trace,
    )

    m = selectors.m
    second = np.full((m, m), np.nan)
    second_bound = np.full((m, m), np.nan)
    eligible = [i for i in range(m) if override_gate or report.second_ok[i, i]]
    if eligible:
        marginals = _marginals(ctx, model, companion_form, selectors, config, eligible)
        for a, i1 in enumerate(eligible):
            for i2 in eligible[a:]:
                if not (override_gate or report.second_ok[i1, i2]):
                    continue
                value, bound = _mixed_moment(
                    ctx, model, companion_form, selectors, config, i1, i2,
                    True, moments, marginals,
                )
                second[i1, i2] = second[i2, i1] = value
                second_bound[i1, i2] = second_bound[i2, i1] = bound
    skipped = m - len(eligible)
    if skipped:
        logger.warning(f"{skipped} 家公司二阶矩不收敛，已跳过")

    return replace(result, second_moment=second, second_moment_bound=second_bound), report


# ── 价格预测 ──────────────────────────────────────────
def _rate_means(
    ctx: ForecastContext,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    r: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """条件均值路径上的 k̃、g̃，各 r×m"""
    path = mean_path(companion_form, ctx.state, r)
    return path @ selectors.j_k.T, path @ selectors.j_g.T


def forecast_weights(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    r: int,
    moments: Optional[MomentSet] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    E[P_{t+r} | G_t] = w_P ⊙ P_t − Σ_{q=1}^r w_q ⊙ d_t 中的权重

    每个权重是 E[exp{L}]，L = Σ_{j>q} k̃_{t+j} + Σ_{j≤q} g̃_{t+j}（q = 0 即 P_t 项），
    由联合正态性 E[exp L] = exp{E L + ½ Var L}，Var L = Σ_s b_s'Σ b_s，
    b_s = Σ_{j≥s} Φ_{j-s}' a_j

    Returns:
        (w_P: m, w: r×m)
    """
    if r < 1:
        raise HorizonZero(f"预测步长必须 ≥ 1: {r}")
    k_mean, g_mean = _rate_means(ctx, companion_form, selectors, r)
    psi = phi_cumulative(phi_window(companion_form, r - 1, moments))   # Ψ_0..Ψ_{r-1}
    u_rows, v_rows = selectors.j_k, selectors.j_g
    sigma = model.sigma

    k_tail = np.cumsum(k_mean[::-1], axis=0)[::-1]           # Σ_{j≥idx}
    g_head = np.cumsum(g_mean, axis=0)                         # Σ_{j≤idx}

    log_weights = np.empty((r + 1, selectors.m))
    for q in range(r + 1):
        mean = (k_tail[q] if q < r else 0.0) + (g_head[q - 1] if q > 0 else 0.0)
        var = np.zeros(selectors.m)
        for s in range(1, r + 1):
            if s <= q:
                b = v_rows @ psi[q - s] + u_rows @ (psi[r - s] - psi[q - s])
            else:
                b = u_rows @ psi[r - s]
            var += np.einsum("ij,jk,ik->i", b, sigma, b)
        log_weights[q] = mean + 0.5 * var
    weights = np.exp(log_weights)
    return weights[0], weights[1:]


def price_forecast(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    r: int,
    moments: Optional[MomentSet] = None,
) -> np.ndarray:
    """
    基于 G_t 的最优 r 期价格预测（闭式）

    Raises:
        MissingPrices: 上下文没有当期价格
        HorizonZero: r < 1
    """
    if ctx.prices_now is None:
        raise MissingPrices("价格预测需要当期价格（G_t 信息集）")
    ctx.check_against(model)
    price_weight, dividend_weights = forecast_weights(
        ctx, model, companion_form, selectors, r, moments
    )
    return price_weight * ctx.prices_now - dividend_weights.sum(axis=0) * ctx.dividends_now


# ── 价格脉冲响应 ──────────────────────────────────────
def irf_from_rates(
    k_path: np.ndarray,
    g_path: np.ndarray,
    prices_now: np.ndarray,
    dividends_now: np.ndarray,
    phis: Sequence[np.ndarray],
    selectors: SelectorSet,
) -> np.ndarray:
    """
    给定未来 k̃、g̃（r×m）计算 ∂P_{t+r}/∂ξ_t'（m×n）

    a_i = exp{Σ_{j≤r} k̃_{i,j}} P_i e_i'J_k F_r
          − Σ_q exp{Σ_{j>q} k̃_{i,j} + Σ_{j≤q} g̃_{i,j}} d_i (e_i'J_k (F_r − F_q) + e_i'J_g F_q)，
    F_q = Σ_{j=1}^q Φ_j
    """
    r = k_path.shape[0]
    partial_sums = np.cumsum(np.stack([np.zeros_like(phis[0])] + list(phis[1:r + 1])), axis=0)  # F_0..F_r
    k_tail = np.concatenate([np.cumsum(k_path[::-1], axis=0)[::-1], np.zeros((1, k_path.shape[1]))])
    g_head = np.concatenate([np.zeros((1, g_path.shape[1])), np.cumsum(g_path, axis=0)])

    total = np.exp(k_tail[0]) * prices_now
    irf = total[:, None] * (selectors.j_k @ partial_sums[r])
    for q in range(1, r + 1):
        weight = np.exp(k_tail[q] + g_head[q]) * dividends_now
        direction = selectors.j_k @ (partial_sums[r] - partial_sums[q]) + selectors.j_g @ partial_sums[q]
        irf -= weight[:, None] * direction
    return irf


def price_irf(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    r: int,
    moments: Optional[MomentSet] = None,
) -> np.ndarray:
    """
    均值路径价格脉冲响应：未来 k̃、g̃ 取条件均值

    Returns:
        m×n 矩阵，第 i 行为 a_i
    """
    if ctx.prices_now is None:
        raise MissingPrices("价格脉冲响应需要当期价格")
    if r < 1:
        raise HorizonZero(f"预测步长必须 ≥ 1: {r}")
    ctx.check_against(model)
    k_mean, g_mean = _rate_means(ctx, companion_form, selectors, r)
    phis = phi_window(companion_form, r, moments)
    return irf_from_rates(k_mean, g_mean, ctx.prices_now, ctx.dividends_now, phis, selectors)


# ── 路径层面的两种价格表示 ────────────────────────────
def price_from_dividends(
    log_required: np.ndarray,
    log_growth: np.ndarray,
    dividends_now: np.ndarray,
    r: int,
) -> np.ndarray:
    """
    股利流表示（截断到给定路径长度）：
    P_{t+r} = Σ_q exp{Σ_{j≤r} g̃ + Σ_{j=r+1}^{r+q}(g̃ − k̃)} ⊙ d_t

    Args:
        log_required, log_growth: (..., H, m) 的未来路径，H > r
    """
    growth_prefix = log_growth[..., :r, :].sum(axis=-2)
    gap = np.cumsum(log_growth[..., r:, :] - log_required[..., r:, :], axis=-2)
    return np.exp(growth_prefix) * np.exp(gap).sum(axis=-2) * dividends_now


def price_from_observed(
    log_required: np.ndarray,
    log_growth: np.ndarray,
    prices_now: np.ndarray,
    dividends_now: np.ndarray,
) -> np.ndarray:
    """
    观测价格表示：P_{t+h} = exp{K_h} ⊙ (P_t − d_t ⊙ Σ_{q≤h} exp{G_q − K_q})，h = 1..H

    K_h、G_h 为 k̃、g̃ 的累积和；返回 (..., H, m)
    """
    cum_k = np.cumsum(log_required, axis=-2)
    cum_g = np.cumsum(log_growth, axis=-2)
    discounted = np.cumsum(np.exp(cum_g - cum_k), axis=-2)
    return np.exp(cum_k) * (prices_now - dividends_now * discounted)
