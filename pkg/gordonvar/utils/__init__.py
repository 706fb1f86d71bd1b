"""
工具函数模块
"""
from .linalg import (
    symmetrize,
    is_symmetric,
    nearest_pd,
    psd_factor,
    is_psd
)

__all__ = [
    'symmetrize',
    'is_symmetric',
    'nearest_pd',
    'psd_factor',
    'is_psd'
]
