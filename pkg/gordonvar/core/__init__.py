"""
核心基础设施模块
"""
from .exceptions import (
    GordonVarError,
    DataError,
    ModelStateError,
    NumericalError,
)
from .logging import setup_logging

__all__ = [
    'GordonVarError',
    'DataError',
    'ModelStateError',
    'NumericalError',
    'setup_logging'
]
