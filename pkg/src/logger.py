"""Console and per-run debug logging for the 'ltibayes' logger."""

import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

LOGGER_NAME = 'ltibayes'


def debug_log_path(output_path: Path, run_name: str, stamp: Optional[datetime] = None) -> Path:
    """Debug log location inside the artifact folder, one file per command run."""
    stamp = stamp or datetime.now()
    return Path(output_path) / f"ltibayes_{run_name}_debug_{stamp.strftime('%Y%m%d_%H%M%S')}.log"


def setup_logger(output_path: Path, run_name: str = "run", debug_mode: bool = False) -> logging.Logger:
    """
    Configure the 'ltibayes' logger for one command.

    Args:
        output_path: Artifact folder; the debug log is written next to the artifacts.
        run_name: Command being run (``offline``, ``infer``, ...); tags every file record.
        debug_mode: If True, sets logging level to DEBUG and enables file logging.
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.handlers.clear()
    logger.propagate = False

    log_level = logging.DEBUG if debug_mode else logging.INFO
    logger.setLevel(log_level)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(logging.Formatter('%(message)s'))
    console_handler.setLevel(log_level)
    logger.addHandler(console_handler)

    if debug_mode:
        output_path = Path(output_path)
        output_path.mkdir(parents=True, exist_ok=True)
        log_file = debug_log_path(output_path, run_name)

        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(logging.Formatter(
            f'%(asctime)s - {run_name} - %(levelname)s - %(module)s - %(message)s'))
        file_handler.setLevel(logging.DEBUG)
        logger.addHandler(file_handler)

        logger.info(f"✓ Debug mode enabled. {run_name} log: {log_file}")

    return logger


def close_file_handlers() -> None:
    """Flush and detach file handlers so the debug log can be moved or removed."""
    logger = logging.getLogger(LOGGER_NAME)
    for handler in [h for h in logger.handlers if isinstance(h, logging.FileHandler)]:
        handler.close()
        logger.removeHandler(handler)
