"""
异常体系
每类错误携带 CLI 退出码：2 输入/数据，3 模型状态，4 数值失败
"""
from typing import Any, Dict, Optional


class GordonVarError(Exception):
    """所有业务错误的基类"""

    exit_code: int = 1

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = dict(context or {})

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": self.message, **self.context}


# ── 输入 / 数据错误 ───────────────────────────────────
class DataError(GordonVarError):
    exit_code = 2


class MissingColumn(DataError):
    pass


class NonPositivePrice(DataError):
    pass


class NonPositiveDividend(DataError):
    pass


class DuplicateDate(DataError):
    pass


class FrequencyGap(DataError):
    pass


class MissingObservation(DataError):
    pass


class NonPositiveGross(DataError):
    pass


class LengthMismatch(DataError):
    pass


class InsufficientData(DataError):
    pass


class MissingPrices(DataError):
    pass


class HorizonZero(DataError):
    pass


class InvalidModelFile(DataError):
    pass


class ContextMismatch(DataError):
    pass


# ── 模型状态错误 ──────────────────────────────────────
class ModelStateError(GordonVarError):
    exit_code = 3


class UnstableModel(ModelStateError):
    """伴随矩阵谱半径 ≥ 1 − margin"""

    def __init__(self, message: str, spectral_summary: Optional[Dict[str, Any]] = None):
        super().__init__(message, {"spectral_summary": spectral_summary or {}})
        self.spectral_summary = spectral_summary or {}


class NotConvergent(ModelStateError):
    pass


# ── 数值失败 ──────────────────────────────────────────
class NumericalError(GordonVarError):
    exit_code = 4


class SingularRegressorMatrix(NumericalError):
    pass


class EigenSolverFailure(NumericalError):
    pass


class TailBoundNotReached(NumericalError):
    pass


class NonPdSigma(NumericalError):
    pass
