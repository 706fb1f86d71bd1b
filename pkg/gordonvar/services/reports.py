"""
报告组装
每个命令生成同一结构的 JSON：config / convergence / prices / second_moments / forecasts / irf / simulation，
未涉及的部分为 null；报告不含时间戳，相同输入与种子得到逐字节相同的文件
"""
from typing import Any, Dict, Optional, Sequence

import numpy as np

from gordonvar.config.run_config import RunConfig
from gordonvar.services.market_data import VarLayout
from gordonvar.services.simulation import ComparisonResult, IrfEnsemble, MonteCarloEstimate, SimulationResult
from gordonvar.services.valuation import ConvergenceReport, ValuationResult

REPORT_SECTIONS = ("convergence", "prices", "second_moments", "forecasts", "irf", "simulation")


def build_report(config: RunConfig, **sections: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    unknown = set(sections) - set(REPORT_SECTIONS)
    if unknown:
        raise KeyError(f"未知的报告部分: {sorted(unknown)}")
    report: Dict[str, Any] = {"config": config.model_dump()}
    for name in REPORT_SECTIONS:
        report[name] = sections.get(name)
    return report


def convergence_section(report: ConvergenceReport) -> Dict[str, Any]:
    return report.to_dict()


def prices_section(
    result: ValuationResult,
    company_ids: Sequence[str],
    monte_carlo: Optional[MonteCarloEstimate] = None,
) -> Dict[str, Any]:
    section: Dict[str, Any] = {
        "company_ids": list(company_ids),
        "price": result.price,
        "terms_used": result.terms_used,
        "truncation_error_bound": result.truncation_error_bound,
    }
    if monte_carlo is not None:
        section["monte_carlo"] = {
            "n_paths": monte_carlo.n_paths,
            "q_terms": monte_carlo.q_terms,
            "mean": monte_carlo.mean,
            "stderr": monte_carlo.stderr,
        }
    return section


def second_moments_section(
    result: ValuationResult,
    monte_carlo: Optional[MonteCarloEstimate] = None,
) -> Optional[Dict[str, Any]]:
    if result.second_moment is None:
        return None
    section: Dict[str, Any] = {
        "matrix": result.second_moment,
        "truncation_error_bound": result.second_moment_bound,
    }
    if monte_carlo is not None:
        section["monte_carlo"] = {
            "matrix": monte_carlo.second_moment,
            "stderr": monte_carlo.second_moment_stderr,
        }
    return section


def forecasts_section(
    horizon: int,
    company_ids: Sequence[str],
    forecast_g: Optional[np.ndarray] = None,
    forecast_f: Optional[np.ndarray] = None,
    comparison: Optional[ComparisonResult] = None,
) -> Dict[str, Any]:
    section: Dict[str, Any] = {
        "horizon": horizon,
        "company_ids": list(company_ids),
        "given_prices": forecast_g,
        "given_dividends": forecast_f,
    }
    if comparison is not None:
        section["comparison"] = comparison.to_dict()
    return section


def irf_section(
    horizon: int,
    layout: VarLayout,
    mean_path: np.ndarray,
    ensemble: Optional[IrfEnsemble] = None,
) -> Dict[str, Any]:
    section: Dict[str, Any] = {
        "horizon": horizon,
        "rows": list(layout.company_ids) or [str(i) for i in range(layout.m)],
        "columns": layout.column_names(),
        "mean_path": mean_path,
    }
    if ensemble is not None:
        section["expected"] = ensemble.mean
        section["n_paths"] = ensemble.paths.shape[0]
    return section


def simulation_section(result: SimulationResult, quantile_levels: Optional[Sequence[float]] = None) -> Dict[str, Any]:
    return {
        "horizon": result.horizon,
        "seed": result.seed,
        "n_paths": result.n_paths,
        "mean": result.mean,
        "std": result.std,
        "stderr": result.stderr,
        "quantiles": result.quantiles(quantile_levels),
        "negativity_fraction": result.negativity_fraction,
    }
