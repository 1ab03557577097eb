import logging
import os
from pathlib import Path

from dotenv import load_dotenv
from pythonjsonlogger.json import JsonFormatter

load_dotenv()

DEFAULT_SECOND_MOMENT_C = 0.5
DEFAULT_CACHE_DIR = Path("data/processed/kernels")


def get_thread_count() -> int:
    """
    Reads the worker pool size from CATMIX_THREADS.

    Returns:
        Number of worker threads, defaulting to the CPU count.

    Raises:
        ValueError: If CATMIX_THREADS is set but is not a positive integer.
    """
    raw = os.getenv("CATMIX_THREADS")
    if not raw:
        return os.cpu_count() or 1

    try:
        threads = int(raw)
    except ValueError:
        raise ValueError(f"CATMIX_THREADS must be a positive integer, got {raw!r}") from None

    if threads < 1:
        raise ValueError(f"CATMIX_THREADS must be a positive integer, got {raw!r}")
    return threads


def get_second_moment_constant() -> float:
    """
    Reads the frozen second-moment constant used for R = C·n·log n.

    Returns:
        The constant from CATMIX_SECOND_MOMENT_C, or the default.

    Raises:
        ValueError: If the value is not a positive number.
    """
    raw = os.getenv("CATMIX_SECOND_MOMENT_C")
    if not raw:
        return DEFAULT_SECOND_MOMENT_C

    try:
        value = float(raw)
    except ValueError:
        raise ValueError(f"CATMIX_SECOND_MOMENT_C must be a number, got {raw!r}") from None

    if value <= 0:
        raise ValueError(f"CATMIX_SECOND_MOMENT_C must be positive, got {raw!r}")
    return value


def get_cache_dir() -> Path:
    """Directory where materialized kernels are cached."""
    raw = os.getenv("CATMIX_CACHE_DIR")
    return Path(raw) if raw else DEFAULT_CACHE_DIR


def configure_logging(level: str | None = None) -> None:
    """
    Attaches a JSON stream handler to the root logger.

    Calling it more than once only updates the level.

    Args:
        level: Log level name; falls back to CATMIX_LOG_LEVEL, then INFO.
    """
    level = (level or os.getenv("CATMIX_LOG_LEVEL") or "INFO").upper()
    root = logging.getLogger()
    root.setLevel(level)

    if any(getattr(h, "_catmix", False) for h in root.handlers):
        return

    handler = logging.StreamHandler()
    handler.setFormatter(JsonFormatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
    handler._catmix = True
    root.addHandler(handler)
