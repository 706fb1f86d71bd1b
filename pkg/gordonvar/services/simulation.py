"""
Monte Carlo 服务
价格路径模拟、理论价格与二阶矩的模拟估计、逐路径脉冲响应、两种信息集预测的比较

随机数：每 mc_block_size 条路径为一块，块流为 Philox(SeedSequence(seed, spawn_key=(用途, 块号)))，
块内按路径顺序抽取，因此增加路径数不会改变已有路径；各块结果按块号拼接，与线程数无关
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from gordonvar.config.numerics import NumericsConfig, get_numerics_config
from gordonvar.config.settings import get_settings
from gordonvar.core.exceptions import (
    ContextMismatch,
    HorizonZero,
    InsufficientData,
    MissingPrices,
    NonPdSigma,
)
from gordonvar.services.valuation import (
    ForecastContext,
    SelectorSet,
    dividend_form_forecast,
    forecast_weights,
    irf_from_rates,
    price_forecast,
    price_from_dividends,
    price_from_observed,
    theoretical_price,
)
from gordonvar.services.var_engine import CompanionForm, VarModel, phi_sequence
from gordonvar.utils.linalg import psd_factor

logger = logging.getLogger(__name__)

# 随机流用途编号
STREAM_MAIN = 0
STREAM_ORIGIN_PRICE = 1
STREAM_PRICE_ORACLE = 2


@dataclass(frozen=True)
class SimulationResult:
    """r 期价格模拟结果"""
    terminal: np.ndarray                      # n_paths×m
    negative: np.ndarray                      # n_paths×m，路径上任一期价格 ≤ 0
    horizon: int
    seed: int
    paths: Optional[np.ndarray] = field(default=None, repr=False)   # n_paths×r×m

    @property
    def n_paths(self) -> int:
        return self.terminal.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.terminal.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        if self.n_paths < 2:
            return np.zeros(self.terminal.shape[1])
        return self.terminal.std(axis=0, ddof=1)

    @property
    def stderr(self) -> np.ndarray:
        return self.std / np.sqrt(self.n_paths)

    @property
    def negativity_fraction(self) -> np.ndarray:
        return self.negative.mean(axis=0)

    def quantiles(self, levels: Optional[Sequence[float]] = None) -> Dict[str, List[float]]:
        levels = levels or get_settings().REPORT_QUANTILES
        values = np.quantile(self.terminal, levels, axis=0)
        return {repr(float(q)): row.tolist() for q, row in zip(levels, values)}


@dataclass(frozen=True)
class MonteCarloEstimate:
    """截断股利流的模拟均值与二阶矩"""
    mean: np.ndarray
    stderr: np.ndarray
    second_moment: np.ndarray
    second_moment_stderr: np.ndarray
    n_paths: int
    q_terms: int


@dataclass(frozen=True)
class IrfEnsemble:
    """逐路径价格脉冲响应及其均值（期望脉冲响应）"""
    paths: np.ndarray                         # n_paths×m×n
    mean: np.ndarray                          # m×n


@dataclass(frozen=True)
class ComparisonResult:
    """F_t 预测与 G_t 预测的均方误差比较"""
    regime: str
    horizon: int
    n_paths: int
    mse_f: np.ndarray
    mse_g: np.ndarray
    mean_f: np.ndarray
    mean_g: np.ndarray
    mean_truth: np.ndarray
    mse_diff_stderr: np.ndarray
    mean_diff_stderr: np.ndarray
    negativity_fraction: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {
            "regime": self.regime,
            "horizon": self.horizon,
            "n_paths": self.n_paths,
            "mse_f": self.mse_f.tolist(),
            "mse_g": self.mse_g.tolist(),
            "mean_f": self.mean_f.tolist(),
            "mean_g": self.mean_g.tolist(),
            "mean_truth": self.mean_truth.tolist(),
            "mse_diff_stderr": self.mse_diff_stderr.tolist(),
            "mean_diff_stderr": self.mean_diff_stderr.tolist(),
            "negativity_fraction": self.negativity_fraction.tolist(),
        }


# ── 随机流与分块执行 ──────────────────────────────────
def block_generator(seed: int, purpose: int, block: int) -> np.random.Generator:
    """计数器式拆分：同一 (seed, 用途, 块号) 总是得到同一条流"""
    sequence = np.random.SeedSequence(seed, spawn_key=(purpose, block))
    return np.random.Generator(np.random.Philox(sequence))


def _blocks(n_paths: int, block_size: int) -> List[Tuple[int, int]]:
    return [(b, min(block_size, n_paths - start)) for b, start in enumerate(range(0, n_paths, block_size))]


def _run_blocks(
    n_paths: int,
    block_size: int,
    worker: Callable[[int, int], Any],
    threads: Optional[int] = None,
) -> List[Any]:
    """按块执行 worker(块号, 块内路径数)，结果按块号排列"""
    blocks = _blocks(n_paths, block_size)
    threads = max(1, min(threads or get_settings().THREADS, len(blocks)))
    if threads == 1:
        return [worker(b, size) for b, size in blocks]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(lambda item: worker(*item), blocks))


def _shock_factor(model: VarModel) -> np.ndarray:
    try:
        return psd_factor(model.sigma)
    except np.linalg.LinAlgError as e:
        raise NonPdSigma(f"Σ 无法分解: {e}")


def simulate_block(
    rng: np.random.Generator,
    size: int,
    state: np.ndarray,
    companion_form: CompanionForm,
    factor: np.ndarray,
    horizon: int,
) -> np.ndarray:
    """
    从 y*_t 出发按 VAR 递推 horizon 步

    Returns:
        size×horizon×n 的 y_{t+1..t+horizon}
    """
    n = companion_form.n
    shocks = rng.standard_normal((size, horizon, n)) @ factor.T
    current = np.broadcast_to(state, (size, companion_form.dim)).copy()
    a_t = companion_form.a_star.T
    out = np.empty((size, horizon, n))
    for h in range(horizon):
        current = companion_form.nu_star + current @ a_t
        current[:, :n] += shocks[:, h]
        out[:, h] = current[:, :n]
    return out


def _check_paths(n_paths: int, horizon: int) -> None:
    if n_paths < 1:
        raise InsufficientData(f"路径数必须 ≥ 1: {n_paths}")
    if horizon < 1:
        raise HorizonZero(f"预测步长必须 ≥ 1: {horizon}")


# ── 价格模拟 ──────────────────────────────────────────
def simulate_prices(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    r: int,
    n_paths: int,
    seed: int,
    keep_paths: bool = False,
    config: Optional[NumericsConfig] = None,
    threads: Optional[int] = None,
) -> SimulationResult:
    """
    抽取 ξ_{t+1..t+r} ~ N(0, Σ)，递推 y，并按观测价格表示计算 P_{t+r}

    负价格不截断，按路径标记
    """
    if ctx.prices_now is None:
        raise MissingPrices("价格模拟需要当期价格")
    _check_paths(n_paths, r)
    ctx.check_against(model)
    config = config or get_numerics_config()
    factor = _shock_factor(model)

    def worker(block: int, size: int):
        ys = simulate_block(
            block_generator(seed, STREAM_MAIN, block), size, ctx.state, companion_form, factor, r
        )
        prices = price_from_observed(
            ys @ selectors.j_k.T, ys @ selectors.j_g.T, ctx.prices_now, ctx.dividends_now
        )
        return prices

    prices = np.concatenate(_run_blocks(n_paths, config.mc_block_size, worker, threads))
    negative = (prices <= 0).any(axis=1)
    result = SimulationResult(
        terminal=prices[:, -1, :],
        negative=negative,
        horizon=r,
        seed=seed,
        paths=prices if keep_paths else None,
    )
    fraction = result.negativity_fraction
    if fraction.any():
        logger.warning(f"{r} 期模拟出现负价格，比例 {np.array2string(fraction, precision=4)}")
    logger.info(f"价格模拟完成: {n_paths} 条路径，{r} 期，均值 {np.array2string(result.mean, precision=6)}")
    return result


def monte_carlo_price(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    n_paths: int,
    seed: int,
    q_terms: Optional[int] = None,
    config: Optional[NumericsConfig] = None,
    threads: Optional[int] = None,
) -> MonteCarloEstimate:
    """股利流表示截断到 q_terms 项的模拟：E(P_t | F_t) 与 E(P_t P_t' | F_t) 的估计"""
    config = config or get_numerics_config()
    q_terms = q_terms or config.mc_series_terms
    _check_paths(n_paths, q_terms)
    ctx.check_against(model)
    factor = _shock_factor(model)

    def worker(block: int, size: int):
        ys = simulate_block(
            block_generator(seed, STREAM_PRICE_ORACLE, block), size, ctx.state, companion_form, factor, q_terms
        )
        return price_from_dividends(ys @ selectors.j_k.T, ys @ selectors.j_g.T, ctx.dividends_now, 0)

    prices = np.concatenate(_run_blocks(n_paths, config.mc_block_size, worker, threads))
    products = prices[:, :, None] * prices[:, None, :]
    ddof = 1 if n_paths > 1 else 0
    estimate = MonteCarloEstimate(
        mean=prices.mean(axis=0),
        stderr=prices.std(axis=0, ddof=ddof) / np.sqrt(n_paths),
        second_moment=products.mean(axis=0),
        second_moment_stderr=products.std(axis=0, ddof=ddof) / np.sqrt(n_paths),
        n_paths=n_paths,
        q_terms=q_terms,
    )
    logger.info(f"Monte Carlo 理论价格: {np.array2string(estimate.mean, precision=6)}（{n_paths} 条路径）")
    return estimate


def price_irf_paths(
    ctx: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    r: int,
    n_paths: int,
    seed: int,
    config: Optional[NumericsConfig] = None,
    threads: Optional[int] = None,
) -> IrfEnsemble:
    """在模拟出的未来 k̃、g̃ 上逐路径计算 ∂P_{t+r}/∂ξ_t'；路径与同种子的 simulate_prices 一致"""
    if ctx.prices_now is None:
        raise MissingPrices("价格脉冲响应需要当期价格")
    _check_paths(n_paths, r)
    ctx.check_against(model)
    config = config or get_numerics_config()
    factor = _shock_factor(model)
    phis = phi_sequence(companion_form, r)

    def worker(block: int, size: int):
        ys = simulate_block(
            block_generator(seed, STREAM_MAIN, block), size, ctx.state, companion_form, factor, r
        )
        k_paths, g_paths = ys @ selectors.j_k.T, ys @ selectors.j_g.T
        return np.stack([
            irf_from_rates(k_paths[i], g_paths[i], ctx.prices_now, ctx.dividends_now, phis, selectors)
            for i in range(size)
        ])

    paths = np.concatenate(_run_blocks(n_paths, config.mc_block_size, worker, threads))
    return IrfEnsemble(paths=paths, mean=paths.mean(axis=0))


# ── 预测比较 ──────────────────────────────────────────
def _check_pair(ctx_f: ForecastContext, ctx_g: ForecastContext) -> None:
    if ctx_g.prices_now is None:
        raise MissingPrices("G_t 上下文需要当期价格")
    if ctx_f.as_of != ctx_g.as_of:
        raise ContextMismatch(f"两个上下文的日期不同: {ctx_f.as_of} / {ctx_g.as_of}")
    if not (
        np.array_equal(ctx_f.state, ctx_g.state)
        and np.array_equal(ctx_f.log_dividends_now, ctx_g.log_dividends_now)
    ):
        raise ContextMismatch("两个上下文的状态或股利不同")


def _origin_prices(
    ctx: ForecastContext,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    factor: np.ndarray,
    seed: int,
    block: int,
    size: int,
    q_terms: int,
) -> np.ndarray:
    """
    按模型抽取的当期价格：独立未来路径上的截断股利流

    P_t 与驱动 P_{t+r} 的冲击相互独立，因此 (P_t, P_{t+r}) 的联合分布自洽，
    但不是模型本身的联合分布（后者中 P_t 含有 t 之后冲击的信息）
    """
    ys = simulate_block(
        block_generator(seed, STREAM_ORIGIN_PRICE, block), size, ctx.state, companion_form, factor, q_terms
    )
    return price_from_dividends(ys @ selectors.j_k.T, ys @ selectors.j_g.T, ctx.dividends_now, 0)


def forecast_comparison(
    ctx_f: ForecastContext,
    ctx_g: ForecastContext,
    model: VarModel,
    companion_form: CompanionForm,
    selectors: SelectorSet,
    r: int,
    n_paths: int,
    seed: int,
    regime: str = "observed",
    config: Optional[NumericsConfig] = None,
    threads: Optional[int] = None,
    override_gate: bool = False,
) -> ComparisonResult:
    """
    模拟真实 P_{t+r}，比较 G_t 预测与只用 F_t 的预测

    regime:
        observed  当期价格取上下文中的观测值；G_t 预测是常数，F_t 预测为股利流表示的 r 期期望
        nested    当期价格按模型逐路径抽取（与未来冲击独立），G_t 预测随路径变化，
                  F_t 预测以理论价格代替当期价格；此时两者均值应一致
    """
    if regime not in ("observed", "nested"):
        raise ValueError(f"未知的比较方式: {regime}")
    _check_pair(ctx_f, ctx_g)
    _check_paths(n_paths, r)
    ctx_g.check_against(model)
    config = config or get_numerics_config()
    factor = _shock_factor(model)

    if regime == "observed":
        truth = simulate_prices(
            ctx_g, model, companion_form, selectors, r, n_paths, seed, config=config, threads=threads
        )
        forecast_g = np.broadcast_to(price_forecast(ctx_g, model, companion_form, selectors, r), truth.terminal.shape)
        forecast_f = np.broadcast_to(
            dividend_form_forecast(ctx_f, model, companion_form, selectors, r, config, override_gate),
            truth.terminal.shape,
        )
        terminal, negative = truth.terminal, truth.negative
    else:
        price_weight, dividend_weights = forecast_weights(ctx_g, model, companion_form, selectors, r)
        dividend_part = dividend_weights.sum(axis=0) * ctx_g.dividends_now
        valuation = theoretical_price(
            ctx_f, model, companion_form, selectors, config, override_gate=override_gate
        )
        q_terms = config.mc_series_terms

        def worker(block: int, size: int):
            origin = _origin_prices(ctx_g, companion_form, selectors, factor, seed, block, size, q_terms)
            ys = simulate_block(
                block_generator(seed, STREAM_MAIN, block), size, ctx_g.state, companion_form, factor, r
            )
            prices = price_from_observed(
                ys @ selectors.j_k.T, ys @ selectors.j_g.T, origin[:, None, :], ctx_g.dividends_now
            )
            return origin, prices

        results = _run_blocks(n_paths, config.mc_block_size, worker, threads)
        origin = np.concatenate([o for o, _ in results])
        prices = np.concatenate([p for _, p in results])
        terminal = prices[:, -1, :]
        negative = (prices <= 0).any(axis=1)
        forecast_g = price_weight * origin - dividend_part
        forecast_f = np.broadcast_to(price_weight * valuation.price - dividend_part, terminal.shape)

    err_f = (terminal - forecast_f) ** 2
    err_g = (terminal - forecast_g) ** 2
    ddof = 1 if n_paths > 1 else 0
    result = ComparisonResult(
        regime=regime,
        horizon=r,
        n_paths=n_paths,
        mse_f=err_f.mean(axis=0),
        mse_g=err_g.mean(axis=0),
        mean_f=forecast_f.mean(axis=0),
        mean_g=forecast_g.mean(axis=0),
        mean_truth=terminal.mean(axis=0),
        mse_diff_stderr=(err_f - err_g).std(axis=0, ddof=ddof) / np.sqrt(n_paths),
        mean_diff_stderr=(forecast_g - forecast_f).std(axis=0, ddof=ddof) / np.sqrt(n_paths),
        negativity_fraction=negative.mean(axis=0),
    )
    logger.info(
        f"预测比较（{regime}）: mse_f={np.array2string(result.mse_f, precision=6)}，"
        f"mse_g={np.array2string(result.mse_g, precision=6)}"
    )
    return result
