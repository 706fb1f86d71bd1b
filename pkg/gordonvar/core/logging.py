"""
日志初始化
仅由 CLI 入口调用，库代码只使用模块级 logger
"""
import sys
from typing import Optional

import coloredlogs

from gordonvar.config.settings import get_settings

LOG_FORMAT = "%(levelname)s | %(message)s"
DATE_FORMAT = "%H:%M:%S"


def setup_logging(level: Optional[str] = None) -> None:
    """安装彩色日志到 stderr，stdout 留给报告输出"""
    level = (level or get_settings().LOG_LEVEL).upper()
    coloredlogs.install(
        level=level,
        fmt=LOG_FORMAT,
        datefmt=DATE_FORMAT,
        stream=sys.stderr,
    )
