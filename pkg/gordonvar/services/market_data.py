"""
行情数据服务
读取价格/股利/宏观面板，计算必要收益率与股利增长率序列，组装 VAR 输入
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from gordonvar.config.settings import get_settings
from gordonvar.core.exceptions import (
    DuplicateDate,
    FrequencyGap,
    LengthMismatch,
    MissingColumn,
    MissingObservation,
    NonPositiveDividend,
    NonPositiveGross,
    NonPositivePrice,
)

logger = logging.getLogger(__name__)

# 支持的面板频率（pandas Period 别名）
_FREQUENCY_ALIASES = {"D": "D", "W": "W", "M": "M", "Q": "Q", "Y": "Y", "A": "Y"}


@dataclass(frozen=True)
class PanelSchema:
    """CSV 列名映射"""
    date_column: str = "date"
    company_column: str = "company"
    price_column: str = "price"
    dividend_column: str = "dividend"
    # 显式公司顺序；为空时按 id 排序
    companies: Optional[Tuple[str, ...]] = None
    # 宽表宏观文件：date,<macro_id>...
    macro_path: Optional[Path] = None
    macro_columns: Optional[Tuple[str, ...]] = None
    frequency: str = field(default_factory=lambda: get_settings().DEFAULT_FREQUENCY)


@dataclass(frozen=True)
class CompanyPanel:
    """对齐后的 T+1 期价格、股利与宏观变量"""
    timestamps: pd.DatetimeIndex
    prices: np.ndarray
    dividends: np.ndarray
    macro: np.ndarray
    company_ids: Tuple[str, ...]
    macro_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        rows = len(self.timestamps)
        m = len(self.company_ids)
        if m < 1:
            raise MissingColumn("面板至少需要一家公司")
        if self.prices.shape != (rows, m) or self.dividends.shape != (rows, m):
            raise LengthMismatch(
                f"价格/股利维度 {self.prices.shape}/{self.dividends.shape} 与 ({rows}, {m}) 不符"
            )
        if self.macro.shape != (rows, len(self.macro_ids)):
            raise LengthMismatch(f"宏观维度 {self.macro.shape} 与 ({rows}, {len(self.macro_ids)}) 不符")
        if np.isnan(self.prices).any() or np.isnan(self.dividends).any() or np.isnan(self.macro).any():
            raise MissingObservation("面板存在缺失值（不做插补）")
        if (self.prices <= 0).any():
            raise NonPositivePrice(f"价格必须为正: {_first_bad(self.prices, self.timestamps, self.company_ids)}")
        if (self.dividends <= 0).any():
            raise NonPositiveDividend(
                f"股利必须为正: {_first_bad(self.dividends, self.timestamps, self.company_ids)}"
            )
        if rows > 1 and not self.timestamps.is_monotonic_increasing:
            raise DuplicateDate("日期必须严格递增")
        if self.timestamps.has_duplicates:
            raise DuplicateDate("日期重复")

    @property
    def m(self) -> int:
        return len(self.company_ids)

    @property
    def ell(self) -> int:
        return len(self.macro_ids)

    @property
    def n_rows(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class RatePanel:
    """收益率面板：T 期转移的 k、g 及其对数形式，T+1 期对数股利"""
    log_required: np.ndarray
    log_growth: np.ndarray
    log_dividends: np.ndarray
    raw_required: np.ndarray
    raw_growth: np.ndarray

    @property
    def n_transitions(self) -> int:
        return self.log_required.shape[0]


@dataclass(frozen=True)
class VarLayout:
    """列块布局 [k̃ | g̃ | macro]"""
    m: int
    ell: int
    company_ids: Tuple[str, ...] = ()
    macro_ids: Tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return 2 * self.m + self.ell

    def k_columns(self) -> slice:
        return slice(0, self.m)

    def g_columns(self) -> slice:
        return slice(self.m, 2 * self.m)

    def macro_columns(self) -> slice:
        return slice(2 * self.m, self.n)

    def column_names(self) -> list:
        companies = self.company_ids or tuple(str(i) for i in range(self.m))
        return (
            [f"k:{c}" for c in companies]
            + [f"g:{c}" for c in companies]
            + list(self.macro_ids or (f"x{i}" for i in range(self.ell)))
        )


@dataclass(frozen=True)
class VarInput:
    """VAR 观测矩阵 T×n，第 t 行即 y_t"""
    observations: np.ndarray
    layout: VarLayout
    timestamps: Optional[pd.DatetimeIndex] = None

    def __post_init__(self):
        if self.observations.ndim != 2 or self.observations.shape[1] != self.layout.n:
            raise LengthMismatch(
                f"观测列数 {self.observations.shape} 与布局 n={self.layout.n} 不符"
            )


def _first_bad(values: np.ndarray, timestamps: pd.DatetimeIndex, ids: Sequence[str]) -> str:
    row, col = np.argwhere(values <= 0)[0]
    return f"{ids[col]} @ {timestamps[row].date()} = {values[row, col]}"


def _check_frequency(timestamps: pd.DatetimeIndex, frequency: str) -> None:
    """按声明频率检查等间隔；同一周期出现两个日期视为重复"""
    alias = _FREQUENCY_ALIASES.get(frequency.upper())
    if alias is None:
        raise FrequencyGap(f"不支持的频率: {frequency}")
    if len(timestamps) < 2:
        return
    ordinals = timestamps.to_period(alias).asi8
    steps = np.diff(ordinals)
    if (steps == 0).any():
        raise DuplicateDate(f"同一{frequency}周期内出现多个日期")
    if (steps != 1).any():
        gap_at = int(np.argmax(steps != 1))
        raise FrequencyGap(
            f"日期不连续: {timestamps[gap_at].date()} → {timestamps[gap_at + 1].date()}（频率 {frequency}）"
        )


def _require_columns(frame: pd.DataFrame, columns: Sequence[str], source: Path) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise MissingColumn(f"{source} 缺少列: {missing}")


def _load_macro(schema: PanelSchema, dates: pd.DatetimeIndex) -> Tuple[np.ndarray, Tuple[str, ...]]:
    if schema.macro_path is None:
        return np.empty((len(dates), 0)), ()

    frame = pd.read_csv(schema.macro_path, encoding="utf-8")
    _require_columns(frame, [schema.date_column], schema.macro_path)
    frame[schema.date_column] = pd.to_datetime(frame[schema.date_column])
    if frame[schema.date_column].duplicated().any():
        raise DuplicateDate(f"宏观文件日期重复: {schema.macro_path}")

    macro_ids = schema.macro_columns or tuple(c for c in frame.columns if c != schema.date_column)
    _require_columns(frame, macro_ids, schema.macro_path)

    aligned = frame.set_index(schema.date_column).reindex(dates)[list(macro_ids)]
    if aligned.isna().any().any():
        raise MissingObservation(f"宏观数据未覆盖全部面板日期: {schema.macro_path}")
    return aligned.to_numpy(dtype=float), tuple(str(c) for c in macro_ids)


def load_panel(path: Path, schema: Optional[PanelSchema] = None) -> CompanyPanel:
    """
    读取长表 CSV（date,company,price,dividend）及可选的宽表宏观文件

    Args:
        path: 面板 CSV 路径（UTF-8，含表头，ISO-8601 日期）
        schema: 列名映射

    Returns:
        按日期排序并校验过的 CompanyPanel

    Raises:
        MissingColumn / NonPositivePrice / NonPositiveDividend / DuplicateDate / FrequencyGap
    """
    schema = schema or PanelSchema()
    path = Path(path)
    frame = pd.read_csv(path, encoding="utf-8")
    required = [schema.date_column, schema.company_column, schema.price_column, schema.dividend_column]
    _require_columns(frame, required, path)

    frame[schema.date_column] = pd.to_datetime(frame[schema.date_column])
    frame[schema.company_column] = frame[schema.company_column].astype(str)

    if frame.duplicated([schema.date_column, schema.company_column]).any():
        raise DuplicateDate(f"同一公司同一日期存在多条记录: {path}")

    if (frame[schema.price_column] <= 0).any():
        raise NonPositivePrice(f"{path} 存在非正价格")
    if (frame[schema.dividend_column] <= 0).any():
        raise NonPositiveDividend(f"{path} 存在非正股利（对数模型要求 d > 0）")

    companies = schema.companies or tuple(sorted(frame[schema.company_column].unique()))
    unknown = set(companies) - set(frame[schema.company_column].unique())
    if unknown:
        raise MissingColumn(f"面板中不存在公司: {sorted(unknown)}")
    frame = frame[frame[schema.company_column].isin(companies)]

    prices = frame.pivot(index=schema.date_column, columns=schema.company_column, values=schema.price_column)
    dividends = frame.pivot(index=schema.date_column, columns=schema.company_column, values=schema.dividend_column)
    prices = prices.sort_index()[list(companies)]
    dividends = dividends.sort_index()[list(companies)]
    if prices.isna().any().any() or dividends.isna().any().any():
        raise MissingObservation(f"部分公司在某些日期缺少观测: {path}")

    dates = pd.DatetimeIndex(prices.index)
    _check_frequency(dates, schema.frequency)
    macro, macro_ids = _load_macro(schema, dates)

    panel = CompanyPanel(
        timestamps=dates,
        prices=prices.to_numpy(dtype=float),
        dividends=dividends.to_numpy(dtype=float),
        macro=macro,
        company_ids=tuple(companies),
        macro_ids=macro_ids,
    )
    logger.info(f"面板已加载: {path.name}，{panel.n_rows} 期，{panel.m} 家公司，{panel.ell} 个宏观变量")
    return panel


def compute_rates(panel: CompanyPanel) -> RatePanel:
    """
    由相邻两期价格与股利计算 k_t、g_t 及其对数形式

    k_t = (P_t + d_t) / P_{t-1} − 1，g_t = d_t / d_{t-1} − 1
    """
    if panel.n_rows < 2:
        raise LengthMismatch("至少需要两期观测才能计算收益率")

    prices, dividends = panel.prices, panel.dividends
    gross_required = (prices[1:] + dividends[1:]) / prices[:-1]
    gross_growth = dividends[1:] / dividends[:-1]
    if (gross_required <= 0).any() or (gross_growth <= 0).any():
        raise NonPositiveGross("毛收益率非正，对数未定义")

    log_dividends = np.log(dividends)
    return RatePanel(
        log_required=np.log(gross_required),
        log_growth=np.log(gross_growth),
        log_dividends=log_dividends,
        raw_required=gross_required - 1.0,
        raw_growth=gross_growth - 1.0,
    )


def assemble_var_input(rates: RatePanel, panel: CompanyPanel) -> VarInput:
    """按 [k̃ | g̃ | macro] 排列列块，第 t 行对应转移 t（t = 1..T）"""
    transitions = rates.n_transitions
    if panel.n_rows != transitions + 1:
        raise LengthMismatch(f"收益率 {transitions} 期与面板 {panel.n_rows} 期不匹配")
    if rates.log_growth.shape != rates.log_required.shape or rates.log_required.shape[1] != panel.m:
        raise LengthMismatch("k̃ 与 g̃ 块维度不一致")

    observations = np.hstack([rates.log_required, rates.log_growth, panel.macro[1:]])
    layout = VarLayout(
        m=panel.m,
        ell=panel.ell,
        company_ids=panel.company_ids,
        macro_ids=panel.macro_ids,
    )
    return VarInput(observations=observations, layout=layout, timestamps=panel.timestamps[1:])


def reconstruct_prices(p0: np.ndarray, raw_required: np.ndarray, dividends: np.ndarray) -> np.ndarray:
    """
    按 P_t = (1 + k_t) P_{t-1} − d_t 从 P_0 递推价格

    Args:
        p0: 初始价格 (m,)
        raw_required: k_t，T×m
        dividends: d_t，T×m（t = 1..T）

    Returns:
        (T+1)×m 价格矩阵，首行为 P_0
    """
    prices = np.empty((raw_required.shape[0] + 1, raw_required.shape[1]))
    prices[0] = p0
    for t in range(raw_required.shape[0]):
        prices[t + 1] = (1.0 + raw_required[t]) * prices[t] - dividends[t]
    return prices


def reconstruct_dividends(d0: np.ndarray, raw_growth: np.ndarray) -> np.ndarray:
    """按 d_t = (1 + g_t) d_{t-1} 递推股利"""
    return np.vstack([d0, d0 * np.cumprod(1.0 + raw_growth, axis=0)])


def accumulate_log_dividends(log_dividend_now: np.ndarray, log_growth: np.ndarray) -> np.ndarray:
    """d̃_{t+r} = d̃_t + Σ_{j≤r} g̃_{t+j}，返回 r = 0..R"""
    cumulative = np.cumsum(log_growth, axis=0)
    return np.vstack([log_dividend_now, log_dividend_now + cumulative])
