"""
命令行运行配置
CLI 参数 + 可选 YAML 文件，合并后写入报告以便溯源
"""
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field

from .numerics import NumericsConfig, get_numerics_config
from .settings import get_settings


class RunConfig(BaseModel):
    """一次运行的完整配置"""

    model_config = ConfigDict(extra="forbid")

    lag_order: int = Field(default=1, ge=1)
    # 数值字段缺省取 NumericsConfig（含 GORDONVAR_* 环境变量）
    tol: float = Field(default_factory=lambda: get_numerics_config().tol, gt=0)
    max_terms: int = Field(default_factory=lambda: get_numerics_config().max_terms, ge=10)
    stability_margin: float = Field(default_factory=lambda: get_numerics_config().stability_margin, ge=0, lt=1)
    n_paths: int = Field(default=10000, ge=1)
    seed: int = Field(default=0, ge=0)
    horizon: int = Field(default=1, ge=1)
    output_path: Optional[str] = None
    frequency: str = Field(default_factory=lambda: get_settings().DEFAULT_FREQUENCY)

    @classmethod
    def from_yaml(cls, path: Path, **overrides) -> "RunConfig":
        """
        从 YAML 读取配置，CLI 显式给出的参数覆盖文件值

        Args:
            path: YAML 文件路径（键名与字段名一致）
            overrides: 命令行参数，值为 None 的忽略

        Returns:
            合并后的 RunConfig
        """
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    @classmethod
    def resolve(cls, config_path: Optional[Path] = None, **overrides) -> "RunConfig":
        if config_path is not None:
            return cls.from_yaml(config_path, **overrides)
        return cls(**{k: v for k, v in overrides.items() if v is not None})

    def numerics(self, base: Optional[NumericsConfig] = None) -> NumericsConfig:
        """转换为服务层使用的数值配置"""
        base = base or get_numerics_config()
        return base.with_overrides(
            tol=self.tol,
            max_terms=self.max_terms,
            stability_margin=self.stability_margin,
        )
