"""
配置模块
统一管理运行配置和数值参数
"""
from .settings import settings, get_settings
from .numerics import NumericsConfig, numerics_config, get_numerics_config
from .run_config import RunConfig

__all__ = [
    'settings',
    'get_settings',
    'NumericsConfig',
    'numerics_config',
    'get_numerics_config',
    'RunConfig'
]
