"""
multilevel_qi 日志工具
"""

import logging
import os
from typing import Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# 根记录器名，所有模块日志都挂在它下面
ROOT_LOGGER = "multilevel_qi"

_LEVEL_MAP = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
    "CRITICAL": logging.CRITICAL,
}


def get_logger(name: str, log_file: Optional[str] = None, log_level: Optional[str] = None) -> logging.Logger:
    """
    获取具有指定名称的日志记录器

    包内模块的记录器不单独挂处理器，统一由根记录器 ``multilevel_qi`` 输出，
    这样 ``configure_logging`` 调整级别时对所有模块生效。

    参数:
        name (str): 日志记录器名称，通常为 ``__name__``
        log_file (str, 可选): 日志文件路径，仅对根记录器生效
        log_level (str, 可选): 日志级别 (DEBUG, INFO, WARNING, ERROR, CRITICAL)

    返回:
        logging.Logger: 配置好的日志记录器
    """
    logger = logging.getLogger(name)

    if name != ROOT_LOGGER and name.startswith(ROOT_LOGGER + "."):
        # 子记录器沿用根记录器的处理器
        if log_level:
            logger.setLevel(_LEVEL_MAP.get(log_level.upper(), logging.INFO))
        _ensure_root_configured()
        return logger

    logger.setLevel(_LEVEL_MAP.get((log_level or "INFO").upper(), logging.INFO))

    # 如果日志记录器已有处理器，清除它们
    if logger.handlers:
        logger.handlers.clear()

    formatter = logging.Formatter(LOG_FORMAT)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        # 确保日志目录存在
        log_dir = os.path.dirname(log_file)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir)

        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def _ensure_root_configured() -> None:
    root = logging.getLogger(ROOT_LOGGER)
    if not root.handlers:
        get_logger(ROOT_LOGGER)


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """按设置（或 --verbose）重新配置根记录器"""
    return get_logger(ROOT_LOGGER, log_file=log_file, log_level=level)
