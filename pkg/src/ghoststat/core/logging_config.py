"""
ghoststat Logging Configuration
Rotating file log plus a rich console handler for the whole package.
"""

import os
import logging
import logging.handlers
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

from ghoststat import LOGS_DIR

LOG_FILE_NAME = "ghoststat.log"


def setup_logging(
    level: str = "INFO",
    log_to_file: bool = True,
    log_to_console: bool = True,
    max_file_mb: int = 10,
    backup_count: int = 5,
    log_file: Optional[str] = None,
) -> None:
    """
    Configure the ``ghoststat`` logger tree.

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_to_file: Enable file logging with rotation
        log_to_console: Enable console logging on stderr
        max_file_mb: Max log file size in MB before rotation
        backup_count: Number of rotated log files to keep
        log_file: Custom log file path
    """
    numeric_level = getattr(logging, level.upper(), logging.INFO)
    root_logger = logging.getLogger("ghoststat")
    root_logger.setLevel(logging.DEBUG if log_to_file else numeric_level)
    root_logger.handlers.clear()

    if log_to_file:
        log_path = log_file or os.path.join(LOGS_DIR, LOG_FILE_NAME)
        os.makedirs(os.path.dirname(log_path), exist_ok=True)

        file_handler = logging.handlers.RotatingFileHandler(
            log_path,
            maxBytes=max_file_mb * 1024 * 1024,
            backupCount=backup_count,
            encoding="utf-8",
        )
        file_handler.setFormatter(logging.Formatter(
            fmt="%(asctime)s | %(levelname)-8s | %(name)-24s | %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        ))
        file_handler.setLevel(logging.DEBUG)
        root_logger.addHandler(file_handler)

    if log_to_console:
        console_handler = RichHandler(
            console=Console(stderr=True),
            show_time=False,
            show_path=False,
            markup=False,
        )
        console_handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        console_handler.setLevel(numeric_level)
        root_logger.addHandler(console_handler)

    root_logger.debug("Logging configured: level=%s, file=%s", level, log_to_file)


def get_log_files() -> list:
    """List all log files."""
    if not os.path.exists(LOGS_DIR):
        return []
    files = []
    for f in sorted(os.listdir(LOGS_DIR)):
        path = os.path.join(LOGS_DIR, f)
        if os.path.isfile(path):
            files.append({
                "name": f,
                "path": path,
                "size_kb": round(os.path.getsize(path) / 1024, 1),
                "modified": os.path.getmtime(path),
            })
    return files


def get_recent_logs(lines: int = 100) -> str:
    """Get the last N lines from the current log file."""
    log_path = os.path.join(LOGS_DIR, LOG_FILE_NAME)
    if not os.path.exists(log_path):
        return "No log file found"
    with open(log_path, "r", encoding="utf-8") as f:
        return "".join(f.readlines()[-lines:])
