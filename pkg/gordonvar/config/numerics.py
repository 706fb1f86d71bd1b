"""
数值计算统一配置
管理级数截断、谱判定、Monte Carlo 分块等参数
"""
from dataclasses import dataclass, field, replace
import os
from pathlib import Path
from dotenv import load_dotenv

# 加载环境变量
PROJECT_ROOT = Path(__file__).parent.parent.parent
load_dotenv(dotenv_path=PROJECT_ROOT / ".env")


@dataclass(frozen=True)
class NumericsConfig:
    """数值参数"""

    # 级数截断：剩余质量 < tol · 部分和
    tol: float = 1e-10
    max_terms: int = 100000

    # 谱判定
    stability_margin: float = 1e-8
    distinctness_tol: float = 1e-7
    max_condition: float = 1e12
    imag_tol: float = 1e-8

    # 收敛门槛：lhs 必须 < -gate_tol
    gate_tol: float = 1e-12

    # 比值检验截断规则
    ratio_min_terms: int = 10
    ratio_window: int = 5

    # Γ 截断求和的绝对精度
    gamma_tail_tol: float = 1e-12

    # Monte Carlo
    mc_block_size: int = 1024
    mc_series_terms: int = 400

    # 二阶矩双重级数网格上限
    max_grid_cells: int = 25_000_000

    # Φ 缓存长度
    phi_cache_horizon: int = 64

    # 显式覆盖后的副本不再读取环境变量
    read_env: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.read_env:
            self._apply_env()

        if self.tol <= 0:
            raise ValueError(f"tol 必须为正数: {self.tol}")
        if self.max_terms < self.ratio_min_terms:
            raise ValueError(f"max_terms 过小: {self.max_terms}")

    def _apply_env(self):
        # 从环境变量读取（frozen dataclass 需借助 object.__setattr__）
        env_tol = os.getenv("GORDONVAR_TOL")
        if env_tol:
            try:
                object.__setattr__(self, "tol", float(env_tol))
            except ValueError:
                pass

        env_max_terms = os.getenv("GORDONVAR_MAX_TERMS")
        if env_max_terms:
            try:
                object.__setattr__(self, "max_terms", int(env_max_terms))
            except ValueError:
                pass

        env_margin = os.getenv("GORDONVAR_STABILITY_MARGIN")
        if env_margin:
            try:
                object.__setattr__(self, "stability_margin", float(env_margin))
            except ValueError:
                pass

    def with_overrides(self, **overrides) -> "NumericsConfig":
        """返回替换了部分字段的新配置；值为 None 的项忽略"""
        fields = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, read_env=False, **fields)


# 创建全局配置实例
numerics_config = NumericsConfig()


def get_numerics_config() -> NumericsConfig:
    """获取数值配置"""
    return numerics_config
