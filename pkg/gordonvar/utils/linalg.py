"""
线性代数工具函数
对称化、最近正定矩阵、半正定因子分解等
"""
import logging

import numpy as np

logger = logging.getLogger(__name__)


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def is_symmetric(matrix: np.ndarray, tol: float = 1e-12) -> bool:
    """按相对误差判断对称性"""
    scale = max(1.0, float(np.max(np.abs(matrix)))) if matrix.size else 1.0
    return bool(np.max(np.abs(matrix - matrix.T), initial=0.0) <= tol * scale)


def nearest_pd(matrix: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """
    截断特征值得到最近的对称正定矩阵

    Args:
        matrix: 方阵
        floor: 相对于最大特征值的下限

    Returns:
        对称正定矩阵；已正定时原样（对称化后）返回
    """
    sym = symmetrize(matrix)
    eigvals, eigvecs = np.linalg.eigh(sym)
    scale = max(1.0, float(np.max(np.abs(eigvals), initial=0.0)))
    lower = floor * scale
    if eigvals.min(initial=np.inf) > lower:
        return sym
    logger.warning(f"协方差矩阵非正定（最小特征值 {eigvals.min():.3e}），已截断到 {lower:.1e}")
    clipped = np.clip(eigvals, lower, None)
    return symmetrize((eigvecs * clipped) @ eigvecs.T)


def psd_factor(matrix: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """
    返回 L 使得 L L' = matrix；先尝试 Cholesky，失败时用特征分解处理半正定情形

    Raises:
        np.linalg.LinAlgError: 存在显著为负的特征值
    """
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    eigvals, eigvecs = np.linalg.eigh(symmetrize(matrix))
    scale = max(1.0, float(np.max(np.abs(eigvals), initial=0.0)))
    if eigvals.min(initial=0.0) < -tol * scale:
        raise np.linalg.LinAlgError(f"矩阵非半正定，最小特征值 {eigvals.min():.3e}")
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def is_psd(matrix: np.ndarray, tol: float = 1e-10) -> bool:
    eigvals = np.linalg.eigvalsh(symmetrize(matrix))
    scale = max(1.0, float(np.max(np.abs(eigvals), initial=0.0)))
    return bool(eigvals.min(initial=0.0) >= -tol * scale)
