"""
文件处理工具函数
JSON 原子写入、模型/上下文文件编解码、级数轨迹 CSV
"""
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from gordonvar.config.settings import get_settings
from gordonvar.core.exceptions import InvalidModelFile
from gordonvar.services.market_data import VarLayout
from gordonvar.services.valuation import ForecastContext
from gordonvar.services.var_engine import VarModel

logger = logging.getLogger(__name__)

_MODEL_KEYS = ("n", "m", "ell", "p", "nu", "lags", "sigma")


def to_jsonable(value: Any) -> Any:
    """numpy 数组/标量转为内置类型；非有限浮点数写为 null"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    """先写临时文件再替换，避免留下半截文件"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.with_suffix(path.suffix + ".tmp")
    with open(temp_file, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(payload), f, ensure_ascii=False, indent=2, allow_nan=False)
        f.write("\n")
    temp_file.replace(path)
    logger.debug(f"已写入 {path}")


def read_json(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise InvalidModelFile(f"文件不存在: {path}")
    except json.JSONDecodeError as e:
        raise InvalidModelFile(f"JSON 解析失败 {path}: {e}")
    if not isinstance(data, dict):
        raise InvalidModelFile(f"{path} 顶层必须是对象")
    return data


# ── 模型文件 ──────────────────────────────────────────
def model_to_dict(model: VarModel) -> Dict[str, Any]:
    payload: Dict[str, Any] = {
        "n": model.n,
        "m": model.m,
        "ell": model.ell,
        "p": model.p,
        "nu": model.nu.tolist(),
        "lags": [a.tolist() for a in model.lags],
        "sigma": model.sigma.tolist(),
    }
    if model.layout.company_ids:
        payload["company_ids"] = list(model.layout.company_ids)
    if model.layout.macro_ids:
        payload["macro_ids"] = list(model.layout.macro_ids)
    return payload


def model_from_dict(data: Dict[str, Any]) -> VarModel:
    """
    解析模型 JSON {n, m, ell, p, nu, lags, sigma, company_ids?, macro_ids?}

    Raises:
        InvalidModelFile: 缺字段或维度与 n = 2m + ell 不一致
    """
    missing = [k for k in _MODEL_KEYS if k not in data]
    if missing:
        raise InvalidModelFile(f"模型文件缺少字段: {missing}")
    try:
        n, m, ell, p = (int(data[k]) for k in ("n", "m", "ell", "p"))
        nu = np.asarray(data["nu"], dtype=float)
        lags = tuple(np.asarray(a, dtype=float) for a in data["lags"])
        sigma = np.asarray(data["sigma"], dtype=float)
    except (TypeError, ValueError) as e:
        raise InvalidModelFile(f"模型文件字段类型错误: {e}")
    if n != 2 * m + ell:
        raise InvalidModelFile(f"n={n} 与 2m + ell = {2 * m + ell} 不符")
    if len(lags) != p:
        raise InvalidModelFile(f"滞后矩阵个数 {len(lags)} 与 p={p} 不符")

    company_ids = tuple(str(c) for c in data.get("company_ids") or ())
    macro_ids = tuple(str(c) for c in data.get("macro_ids") or ())
    if company_ids and len(company_ids) != m:
        raise InvalidModelFile(f"company_ids 个数 {len(company_ids)} 与 m={m} 不符")
    if macro_ids and len(macro_ids) != ell:
        raise InvalidModelFile(f"macro_ids 个数 {len(macro_ids)} 与 ell={ell} 不符")

    layout = VarLayout(m=m, ell=ell, company_ids=company_ids, macro_ids=macro_ids)
    return VarModel(nu=nu, lags=lags, sigma=sigma, layout=layout)


def save_model(model: VarModel, path: Path) -> None:
    write_json(path, model_to_dict(model))
    logger.info(f"模型已保存: {path}")


def load_model(path: Path) -> VarModel:
    return model_from_dict(read_json(path))


# ── 上下文文件 ────────────────────────────────────────
def context_path_for(model_path: Path) -> Path:
    """<model>.json 对应的默认上下文文件 <model>.context.json"""
    model_path = Path(model_path)
    return model_path.with_name(model_path.stem + get_settings().CONTEXT_SUFFIX)


def context_to_dict(ctx: ForecastContext) -> Dict[str, Any]:
    return {
        "as_of": ctx.as_of,
        "state": ctx.state.tolist(),
        "log_dividends_now": ctx.log_dividends_now.tolist(),
        "prices_now": None if ctx.prices_now is None else ctx.prices_now.tolist(),
        "company_ids": list(ctx.company_ids),
    }


def context_from_dict(data: Dict[str, Any]) -> ForecastContext:
    for key in ("state", "log_dividends_now"):
        if key not in data:
            raise InvalidModelFile(f"上下文文件缺少字段: {key}")
    prices = data.get("prices_now")
    return ForecastContext(
        state=np.asarray(data["state"], dtype=float),
        log_dividends_now=np.asarray(data["log_dividends_now"], dtype=float),
        prices_now=None if prices is None else np.asarray(prices, dtype=float),
        as_of=data.get("as_of"),
        company_ids=tuple(data.get("company_ids") or ()),
    )


def save_context(ctx: ForecastContext, path: Path) -> None:
    write_json(path, context_to_dict(ctx))


def load_context(path: Path) -> ForecastContext:
    return context_from_dict(read_json(path))


# ── 级数轨迹 ──────────────────────────────────────────
def write_trace(path: Path, trace: List[Optional[np.ndarray]], company_ids: Sequence[str] = ()) -> None:
    """长表 CSV：company,q,term，每行一个 ŝ_{i,q}"""
    frames = []
    for i, terms in enumerate(trace):
        if terms is None or len(terms) == 0:
            continue
        label = company_ids[i] if i < len(company_ids) else str(i)
        frames.append(pd.DataFrame({
            "company": label,
            "q": np.arange(1, len(terms) + 1),
            "term": np.asarray(terms, dtype=float),
        }))
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["company", "q", "term"])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"级数轨迹已写入: {path}（{len(table)} 行）")
