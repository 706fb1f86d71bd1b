"""
命令行入口
estimate / check / value / forecast / irf / simulate / compare
"""
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Any, Dict, Iterator, Optional

import typer
from pydantic import ValidationError

from gordonvar import __version__
from gordonvar.config.run_config import RunConfig
from gordonvar.config.settings import get_settings
from gordonvar.core.exceptions import GordonVarError, NotConvergent, UnstableModel
from gordonvar.core.logging import setup_logging
from gordonvar.services.market_data import PanelSchema, assemble_var_input, compute_rates, load_panel
from gordonvar.services.reports import (
    build_report,
    convergence_section,
    forecasts_section,
    irf_section,
    prices_section,
    second_moments_section,
    simulation_section,
)
from gordonvar.services.simulation import (
    forecast_comparison,
    monte_carlo_price,
    price_irf_paths,
    simulate_prices,
)
from gordonvar.services.valuation import (
    build_selectors,
    check_convergence,
    context_from_panel,
    dividend_form_forecast,
    price_forecast,
    price_irf,
    value_companies,
)
from gordonvar.services.var_engine import analyze, estimate_ols, limit_moments
from gordonvar.utils.file_handler import (
    context_path_for,
    load_context,
    load_model,
    save_context,
    save_model,
    to_jsonable,
    write_json,
    write_trace,
)

logger = logging.getLogger(__name__)

app = typer.Typer(
    name=get_settings().APP_NAME,
    help="Gordon 股利贴现模型 + VAR(p) 估值引擎",
    add_completion=False,
    no_args_is_help=True,
)

# ── 公共参数 ──────────────────────────────────────────
ModelOpt = Annotated[Path, typer.Option("--model", help="模型 JSON 文件")]
ContextOpt = Annotated[Optional[Path], typer.Option("--context", help="上下文 JSON，默认 <model>.context.json")]
ConfigOpt = Annotated[Optional[Path], typer.Option("--config", help="YAML 配置文件，命令行参数优先")]
OutOpt = Annotated[Optional[Path], typer.Option("--out", help="报告输出路径，缺省时打印到 stdout")]
TolOpt = Annotated[Optional[float], typer.Option("--tol", help="级数截断相对容差")]
MaxTermsOpt = Annotated[Optional[int], typer.Option("--max-terms", help="级数最大项数")]
MarginOpt = Annotated[Optional[float], typer.Option("--stability-margin", help="稳定性边界")]
HorizonOpt = Annotated[Optional[int], typer.Option("--horizon", help="预测步长 r")]
PathsOpt = Annotated[Optional[int], typer.Option("--paths", help="Monte Carlo 路径数")]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", help="随机种子")]
OverrideOpt = Annotated[bool, typer.Option("--override-gate", help="跳过收敛检验（结果可能无意义）")]


@app.callback()
def main(
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="输出调试日志")] = False,
):
    """初始化日志"""
    setup_logging("DEBUG" if verbose else None)


@app.command()
def version():
    """显示版本"""
    typer.echo(__version__)


@contextmanager
def _handled() -> Iterator[None]:
    """业务错误按退出码退出"""
    try:
        yield
    except UnstableModel as e:
        logger.error(e.message)
        typer.echo(json.dumps(to_jsonable(e.to_dict()), ensure_ascii=False, indent=2), err=True)
        raise typer.Exit(code=e.exit_code)
    except GordonVarError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        raise typer.Exit(code=e.exit_code)
    except ValidationError as e:
        logger.error(f"配置无效: {e}")
        raise typer.Exit(code=2)


def _resolve(config_path: Optional[Path], **overrides: Any) -> RunConfig:
    return RunConfig.resolve(config_path, **overrides)


def _emit(report: Dict[str, Any], out: Optional[Path]) -> None:
    if out is None:
        typer.echo(json.dumps(to_jsonable(report), ensure_ascii=False, indent=2, allow_nan=False))
    else:
        write_json(out, report)
        logger.info(f"报告已写入: {out}")


def _load(model_path: Path, context_path: Optional[Path]):
    model = load_model(model_path)
    ctx = load_context(context_path or context_path_for(model_path))
    ctx.check_against(model)
    return model, ctx


# ── 命令 ──────────────────────────────────────────────
@app.command()
def estimate(
    panel: Annotated[Path, typer.Option("--panel", help="长表 CSV：date,company,price,dividend")],
    out: Annotated[Path, typer.Option("--out", help="模型 JSON 输出路径")],
    macro: Annotated[Optional[Path], typer.Option("--macro", help="宽表宏观 CSV：date,<因子>...")] = None,
    lags: Annotated[Optional[int], typer.Option("--lags", help="滞后阶数 p")] = None,
    frequency: Annotated[Optional[str], typer.Option("--frequency", help="面板频率 D/W/M/Q/Y")] = None,
    config: ConfigOpt = None,
):
    """由面板估计 VAR(p) 并写出模型与默认上下文"""
    with _handled():
        run = _resolve(config, lag_order=lags, frequency=frequency, output_path=str(out))
        schema = PanelSchema(macro_path=macro, frequency=run.frequency)
        company_panel = load_panel(panel, schema)
        var_input = assemble_var_input(compute_rates(company_panel), company_panel)
        model = estimate_ols(var_input, run.lag_order)
        _, spectral_info = analyze(model, run.numerics())
        if not spectral_info.stable:
            logger.warning(
                f"unstable: 最大特征值模 {spectral_info.max_modulus:.10f}，估值命令将拒绝该模型"
            )

        save_model(model, out)
        context_path = context_path_for(out)
        save_context(context_from_panel(var_input, company_panel, model.p), context_path)
        typer.echo(json.dumps(to_jsonable({
            "model": str(out),
            "context": str(context_path),
            "n": model.n,
            "p": model.p,
            "n_obs": model.n_obs,
            "spectral": spectral_info.summary(),
        }), ensure_ascii=False, indent=2))


@app.command()
def check(
    model: ModelOpt,
    stability_margin: MarginOpt = None,
    config: ConfigOpt = None,
    out: OutOpt = None,
):
    """收敛检验；不收敛是正常结果（退出码 0），不稳定退出码 3"""
    with _handled():
        run = _resolve(config, stability_margin=stability_margin)
        numerics = run.numerics()
        var_model = load_model(model)
        companion_form, spectral_info = analyze(var_model, numerics)
        moments = limit_moments(var_model, companion_form, spectral_info, numerics)
        report = check_convergence(var_model, moments, build_selectors(var_model.layout), numerics.gate_tol)
        _emit(build_report(run, convergence=convergence_section(report)), out)


@app.command()
def value(
    model: ModelOpt,
    context: ContextOpt = None,
    tol: TolOpt = None,
    max_terms: MaxTermsOpt = None,
    stability_margin: MarginOpt = None,
    paths: Annotated[Optional[int], typer.Option("--paths", help="附加 Monte Carlo 交叉校验的路径数")] = None,
    seed: SeedOpt = None,
    trace: Annotated[Optional[Path], typer.Option("--trace", help="把 ŝ_{i,q} 写成 CSV")] = None,
    override_gate: OverrideOpt = False,
    config: ConfigOpt = None,
    out: OutOpt = None,
):
    """理论价格与二阶矩"""
    with _handled():
        run = _resolve(
            config, tol=tol, max_terms=max_terms, stability_margin=stability_margin,
            n_paths=paths, seed=seed, output_path=str(out) if out else None,
        )
        numerics = run.numerics()
        var_model, ctx = _load(model, context)
        ctx_f = ctx.without_prices()
        companion_form, spectral_info = analyze(var_model, numerics)
        selectors = build_selectors(var_model.layout)
        moments = limit_moments(var_model, companion_form, spectral_info, numerics)

        result, gate = value_companies(
            ctx_f, var_model, companion_form, selectors, numerics,
            override_gate=override_gate, keep_trace=trace is not None, moments=moments,
        )
        estimate_mc = None
        if paths is not None:
            estimate_mc = monte_carlo_price(
                ctx_f, var_model, companion_form, selectors, run.n_paths, run.seed, config=numerics
            )
        if trace is not None:
            write_trace(trace, result.trace, var_model.layout.company_ids)

        company_ids = var_model.layout.company_ids or ctx.company_ids
        _emit(build_report(
            run,
            convergence=convergence_section(gate),
            prices=prices_section(result, company_ids, estimate_mc),
            second_moments=second_moments_section(result, estimate_mc),
        ), out)


@app.command()
def forecast(
    model: ModelOpt,
    horizon: HorizonOpt = None,
    context: ContextOpt = None,
    tol: TolOpt = None,
    max_terms: MaxTermsOpt = None,
    stability_margin: MarginOpt = None,
    config: ConfigOpt = None,
    out: OutOpt = None,
):
    """r 期价格预测：给定当期价格（闭式），以及仅用股利信息的预测（收敛时）"""
    with _handled():
        run = _resolve(config, horizon=horizon, tol=tol, max_terms=max_terms, stability_margin=stability_margin)
        numerics = run.numerics()
        var_model, ctx = _load(model, context)
        companion_form, spectral_info = analyze(var_model, numerics)
        selectors = build_selectors(var_model.layout)

        # 给定当期价格的预测只需要有限步条件矩，不要求平稳
        gate = None
        given_dividends = None
        if spectral_info.stable:
            moments = limit_moments(var_model, companion_form, spectral_info, numerics)
            gate = check_convergence(var_model, moments, selectors, numerics.gate_tol)
            given_prices = price_forecast(ctx, var_model, companion_form, selectors, run.horizon, moments)
            if gate.all_first_ok:
                given_dividends = dividend_form_forecast(
                    ctx.without_prices(), var_model, companion_form, selectors, run.horizon,
                    numerics, moments=moments,
                )
            else:
                logger.warning("收敛条件不成立，跳过仅基于股利信息的预测")
        else:
            logger.warning(
                f"unstable: 最大特征值模 {spectral_info.max_modulus:.10f}，跳过仅基于股利信息的预测"
            )
            given_prices = price_forecast(ctx, var_model, companion_form, selectors, run.horizon)

        company_ids = var_model.layout.company_ids or ctx.company_ids
        _emit(build_report(
            run,
            convergence=convergence_section(gate) if gate is not None else None,
            forecasts=forecasts_section(run.horizon, company_ids, given_prices, given_dividends),
        ), out)


@app.command()
def irf(
    model: ModelOpt,
    horizon: HorizonOpt = None,
    context: ContextOpt = None,
    paths: Annotated[Optional[int], typer.Option("--paths", help="同时计算期望脉冲响应的路径数")] = None,
    seed: SeedOpt = None,
    stability_margin: MarginOpt = None,
    config: ConfigOpt = None,
    out: OutOpt = None,
):
    """价格脉冲响应 ∂P_{t+r}/∂ξ_t'（均值路径；给定 --paths 时附加期望脉冲响应）"""
    with _handled():
        run = _resolve(config, horizon=horizon, n_paths=paths, seed=seed, stability_margin=stability_margin)
        numerics = run.numerics()
        var_model, ctx = _load(model, context)
        companion_form, _ = analyze(var_model, numerics)
        selectors = build_selectors(var_model.layout)

        mean_path_irf = price_irf(ctx, var_model, companion_form, selectors, run.horizon)
        ensemble = None
        if paths is not None:
            ensemble = price_irf_paths(
                ctx, var_model, companion_form, selectors, run.horizon, run.n_paths, run.seed, numerics
            )
        _emit(build_report(run, irf=irf_section(run.horizon, var_model.layout, mean_path_irf, ensemble)), out)


@app.command()
def simulate(
    model: ModelOpt,
    horizon: HorizonOpt = None,
    paths: PathsOpt = None,
    seed: SeedOpt = None,
    context: ContextOpt = None,
    config: ConfigOpt = None,
    out: OutOpt = None,
):
    """模拟 P_{t+r} 的路径分布"""
    with _handled():
        run = _resolve(config, horizon=horizon, n_paths=paths, seed=seed)
        numerics = run.numerics()
        var_model, ctx = _load(model, context)
        companion_form, _ = analyze(var_model, numerics)
        selectors = build_selectors(var_model.layout)
        result = simulate_prices(
            ctx, var_model, companion_form, selectors, run.horizon, run.n_paths, run.seed, config=numerics
        )
        _emit(build_report(run, simulation=simulation_section(result)), out)


@app.command()
def compare(
    model: ModelOpt,
    horizon: HorizonOpt = None,
    paths: PathsOpt = None,
    seed: SeedOpt = None,
    regime: Annotated[str, typer.Option("--regime", help="observed：用观测价格；nested：按模型抽取当期价格")] = "observed",
    context: ContextOpt = None,
    tol: TolOpt = None,
    max_terms: MaxTermsOpt = None,
    stability_margin: MarginOpt = None,
    override_gate: OverrideOpt = False,
    config: ConfigOpt = None,
    out: OutOpt = None,
):
    """比较给定价格与仅用股利信息的两种预测的均方误差"""
    with _handled():
        if regime not in ("observed", "nested"):
            logger.error(f"--regime 只能是 observed 或 nested: {regime}")
            raise typer.Exit(code=2)
        run = _resolve(
            config, horizon=horizon, n_paths=paths, seed=seed, tol=tol,
            max_terms=max_terms, stability_margin=stability_margin,
        )
        numerics = run.numerics()
        var_model, ctx = _load(model, context)
        companion_form, spectral_info = analyze(var_model, numerics)
        selectors = build_selectors(var_model.layout)
        moments = limit_moments(var_model, companion_form, spectral_info, numerics)
        gate = check_convergence(var_model, moments, selectors, numerics.gate_tol)
        if not (override_gate or gate.all_first_ok):
            raise NotConvergent(f"比较需要收敛条件成立: lhs={gate.first_moment_lhs.tolist()}")

        comparison = forecast_comparison(
            ctx.without_prices(), ctx, var_model, companion_form, selectors,
            run.horizon, run.n_paths, run.seed, regime=regime, config=numerics,
            override_gate=override_gate,
        )
        company_ids = var_model.layout.company_ids or ctx.company_ids
        _emit(build_report(
            run,
            convergence=convergence_section(gate),
            forecasts=forecasts_section(run.horizon, company_ids, comparison=comparison),
        ), out)


if __name__ == "__main__":
    sys.exit(app())
