"""Logging configuration and progress bars"""
import logging
import os
import sys
from typing import Iterable, Optional

from tqdm import tqdm

LOG_ENV_VAR = "REPUNLEARN_LOG"
LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None) -> int:
    """Configure the root logger from REPUNLEARN_LOG (default INFO); returns the numeric level"""
    name = (level or os.environ.get(LOG_ENV_VAR) or "INFO").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.INFO
    logging.basicConfig(level=numeric, format=LOG_FORMAT, stream=sys.stderr, force=True)
    return numeric


def progress(iterable: Iterable, desc: str, total: Optional[int] = None, logger: Optional[logging.Logger] = None):
    """tqdm bar on stderr, shown only when `logger` would emit INFO records"""
    enabled = logger.isEnabledFor(logging.INFO) if logger is not None else True
    return tqdm(iterable, desc=desc, total=total, leave=False, disable=not enabled, file=sys.stderr)
