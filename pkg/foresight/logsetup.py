"""
Logging setup.

Messages use the same tagged console style as the rest of the tooling
("[INFO] ...", "[WARNING] ...") and always go to stderr; data goes to files.
"""

import logging
import os
import sys
from typing import Optional

LOG_FORMAT = "[%(levelname)s] %(name)s: %(message)s"
PACKAGE_LOGGER = "foresight"


def setup_logging(level: Optional[str] = None) -> logging.Logger:
    """
    Configure the package logger once.

    Args:
        level: Level name (DEBUG, INFO, WARNING, ...). Falls back to
            FOPO_LOG_LEVEL and then INFO.

    Returns:
        logging.Logger: the package root logger
    """
    level_name = (level or os.getenv("FOPO_LOG_LEVEL", "INFO")).upper()
    numeric = logging.getLevelName(level_name)
    if not isinstance(numeric, int):
        numeric = logging.INFO

    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(numeric)

    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    logger.propagate = False
    return logger


def progress_enabled() -> bool:
    """tqdm bars are shown only when INFO messages would be shown."""
    return logging.getLogger(PACKAGE_LOGGER).getEffectiveLevel() <= logging.INFO


def format_metrics(record: dict) -> str:
    """Single key=value line for per-phase metric logging."""
    parts = []
    for key, value in record.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.4f}")
        else:
            parts.append(f"{key}={value}")
    return " ".join(parts)
