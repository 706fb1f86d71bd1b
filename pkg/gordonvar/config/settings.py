"""
基础运行配置
路径、环境变量、并行度等
"""
from pathlib import Path
import os
from dotenv import load_dotenv

# 加载环境变量
PROJECT_ROOT = Path(__file__).parent.parent.parent
load_dotenv(dotenv_path=PROJECT_ROOT / ".env")


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        return default


class Settings:
    """运行设置"""

    # ========== 路径配置 ==========
    PROJECT_ROOT: Path = PROJECT_ROOT

    # ========== 应用配置 ==========
    APP_NAME: str = "gordonvar"
    LOG_LEVEL: str = os.getenv("GORDONVAR_LOG_LEVEL", "INFO").upper()

    # ========== 数据配置 ==========
    # 面板频率：D / W / M / Q / Y，缺期即报错，不做插值
    DEFAULT_FREQUENCY: str = os.getenv("GORDONVAR_FREQUENCY", "Q").upper()

    # ========== 并行配置 ==========
    # Monte Carlo 线程上限（默认 CPU 核数）。numpy 在矩阵运算中释放 GIL，线程即可
    THREADS: int = max(1, _env_int("GORDONVAR_THREADS", os.cpu_count() or 1))

    # ========== 报告配置 ==========
    REPORT_QUANTILES: tuple = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)
    CONTEXT_SUFFIX: str = ".context.json"


# 创建全局配置实例
settings = Settings()


def get_settings() -> Settings:
    """获取配置实例"""
    return settings
