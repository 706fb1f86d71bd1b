"""
测试夹具
确定性 Gordon 模型、小型随机模型、随机稳定 VAR(2) 生成器与合成面板
"""
import json
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd
import pytest

from gordonvar.config.numerics import NumericsConfig
from gordonvar.services.market_data import VarLayout
from gordonvar.services.valuation import ForecastContext, build_selectors
from gordonvar.services.var_engine import VarModel, analyze, companion

K_GORDON = np.log(1.10)
G_GORDON = np.log(1.05)


class Fixture:
    """模型 + 伴随形式 + 选择矩阵 + 上下文"""

    def __init__(self, model: VarModel, ctx: ForecastContext, config: Optional[NumericsConfig] = None):
        self.model = model
        self.ctx = ctx
        self.config = config or NumericsConfig(read_env=False)
        self.companion, self.spectral = analyze(model, self.config)
        self.selectors = build_selectors(model.layout)

    @property
    def args(self):
        return self.model, self.companion, self.selectors


def steady_state(model: VarModel) -> np.ndarray:
    mu = np.linalg.solve(np.eye(model.n) - sum(model.lags), model.nu)
    return np.tile(mu, model.p)


@pytest.fixture
def numerics() -> NumericsConfig:
    return NumericsConfig(read_env=False)


@pytest.fixture
def gordon() -> Fixture:
    """k = 10%、g = 5% 恒定，Σ = 0，d_t = 1，P_t = 21"""
    layout = VarLayout(m=1, ell=0, company_ids=("ACME",))
    model = VarModel(
        nu=np.array([K_GORDON, G_GORDON]),
        lags=(np.zeros((2, 2)),),
        sigma=np.zeros((2, 2)),
        layout=layout,
    )
    ctx = ForecastContext(
        state=np.array([K_GORDON, G_GORDON]),
        log_dividends_now=np.array([0.0]),
        prices_now=np.array([21.0]),
        as_of="2024-12-31",
        company_ids=("ACME",),
    )
    return Fixture(model, ctx)


@pytest.fixture
def single_company() -> Fixture:
    """n = 2，A = 0.2 I，Σ = 0.0025 I，μ_k = 0.10，μ_g = 0.04"""
    mu = np.array([0.10, 0.04])
    a = 0.2 * np.eye(2)
    model = VarModel(
        nu=(np.eye(2) - a) @ mu,
        lags=(a,),
        sigma=0.0025 * np.eye(2),
        layout=VarLayout(m=1, ell=0),
    )
    ctx = ForecastContext(state=mu, log_dividends_now=np.array([0.0]), prices_now=np.array([18.0]))
    return Fixture(model, ctx)


@pytest.fixture
def two_company_macro() -> Fixture:
    """两家公司加一个宏观因子，n = 5，p = 1"""
    mu = np.array([0.09, 0.11, 0.03, 0.05, 0.0])
    a = np.array([
        [0.30, 0.05, 0.00, 0.00, 0.10],
        [0.05, 0.25, 0.00, 0.00, 0.10],
        [0.00, 0.00, 0.20, 0.05, 0.05],
        [0.00, 0.00, 0.05, 0.20, 0.05],
        [0.00, 0.00, 0.00, 0.00, 0.50],
    ])
    sigma = np.diag([0.0020, 0.0025, 0.0010, 0.0012, 0.0030])
    sigma[0, 1] = sigma[1, 0] = 0.0008
    sigma[2, 3] = sigma[3, 2] = 0.0004
    model = VarModel(
        nu=(np.eye(5) - a) @ mu,
        lags=(a,),
        sigma=sigma,
        layout=VarLayout(m=2, ell=1, company_ids=("A", "B"), macro_ids=("rate",)),
    )
    ctx = ForecastContext(
        state=mu + np.array([0.01, -0.01, 0.005, 0.0, 0.02]),
        log_dividends_now=np.log(np.array([1.0, 2.0])),
        prices_now=np.array([20.0, 28.0]),
        as_of="2024-12-31",
        company_ids=("A", "B"),
    )
    return Fixture(model, ctx)


def random_stable_var(
    seed: int,
    p: int = 2,
    max_modulus: float = 0.9,
    convergent: bool = False,
) -> VarModel:
    """随机稳定 VAR(p)：缩放滞后矩阵使伴随矩阵谱半径等于 max_modulus"""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 3))
    ell = int(rng.integers(0, 3))
    n = 2 * m + ell
    lags = [rng.normal(scale=0.3, size=(n, n)) for _ in range(p)]
    draft = VarModel(nu=np.zeros(n), lags=tuple(lags), sigma=np.eye(n), layout=VarLayout(m=m, ell=ell))
    radius = float(np.max(np.abs(np.linalg.eigvals(companion(draft).a_star))))
    scale = max_modulus / radius
    lags = [a * scale ** (i + 1) for i, a in enumerate(lags)]

    root = rng.normal(size=(n, n))
    noise_scale = 2e-5 if convergent else 1e-2
    sigma = noise_scale * (root @ root.T / n + 0.1 * np.eye(n))
    if convergent:
        mu = np.concatenate([np.full(m, 0.15), np.full(m, 0.02), np.zeros(ell)])
    else:
        mu = rng.normal(scale=0.05, size=n)
    nu = (np.eye(n) - sum(lags)) @ mu
    return VarModel(nu=nu, lags=tuple(lags), sigma=sigma, layout=VarLayout(m=m, ell=ell))


@pytest.fixture
def stable_var() -> Callable[..., VarModel]:
    return random_stable_var


# ── 文件夹具 ──────────────────────────────────────────
def write_panel(path: Path, dates, prices: np.ndarray, dividends: np.ndarray, companies) -> Path:
    rows = []
    for t, date in enumerate(dates):
        for i, company in enumerate(companies):
            rows.append({
                "date": pd.Timestamp(date).strftime("%Y-%m-%d"),
                "company": company,
                "price": prices[t, i],
                "dividend": dividends[t, i],
            })
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


def synthetic_panel(rows: int = 48, seed: int = 7):
    """价格围绕 21 倍股利波动的季度面板，两家公司"""
    rng = np.random.default_rng(seed)
    dates = pd.date_range("2010-03-31", periods=rows, freq="QE")
    growth = np.log(1.05) + 0.01 * rng.standard_normal((rows, 2))
    growth[0] = 0.0
    dividends = np.exp(np.cumsum(growth, axis=0)) * np.array([1.0, 0.5])
    multiple = 21.0 * np.exp(0.01 * rng.standard_normal((rows, 2)))
    return dates, multiple * dividends, dividends


@pytest.fixture
def panel_csv(tmp_path) -> Path:
    dates, prices, dividends = synthetic_panel()
    return write_panel(tmp_path / "panel.csv", dates, prices, dividends, ["AAA", "BBB"])


@pytest.fixture
def macro_csv(tmp_path) -> Path:
    dates, _, _ = synthetic_panel()
    rng = np.random.default_rng(11)
    frame = pd.DataFrame({
        "date": [d.strftime("%Y-%m-%d") for d in dates],
        "rate": 0.02 + 0.002 * rng.standard_normal(len(dates)),
    })
    path = tmp_path / "macro.csv"
    frame.to_csv(path, index=False)
    return path


def write_model_files(directory: Path, fixture: Fixture, name: str = "model") -> Path:
    """把夹具写成 <name>.json 与 <name>.context.json"""
    from gordonvar.utils.file_handler import context_path_for, save_context, save_model

    model_path = directory / f"{name}.json"
    save_model(fixture.model, model_path)
    save_context(fixture.ctx, context_path_for(model_path))
    return model_path


def read_report(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def with_sigma(fixture: Fixture, sigma: np.ndarray) -> Fixture:
    """同一夹具换一个冲击协方差"""
    return Fixture(replace(fixture.model, sigma=sigma), fixture.ctx, fixture.config)
