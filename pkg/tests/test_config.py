import logging
import os
from pathlib import Path
from unittest.mock import patch

import pytest

from src.config import (
    DEFAULT_CACHE_DIR,
    configure_logging,
    get_cache_dir,
    get_second_moment_constant,
    get_thread_count,
)


# ── Environment settings ─────────────────────────────────────────────────────

def test_thread_count_defaults_to_cpu_count():
    with patch.dict("os.environ", {}, clear=True):
        assert get_thread_count() == (os.cpu_count() or 1)


def test_thread_count_from_env():
    with patch.dict("os.environ", {"CATMIX_THREADS": "3"}):
        assert get_thread_count() == 3


@pytest.mark.parametrize("raw", ["zero", "0", "-2"])
def test_thread_count_rejects_bad_values(raw):
    with patch.dict("os.environ", {"CATMIX_THREADS": raw}):
        with pytest.raises(ValueError, match="CATMIX_THREADS"):
            get_thread_count()


def test_second_moment_constant_default():
    with patch.dict("os.environ", {}, clear=True):
        assert get_second_moment_constant() == pytest.approx(0.5)


def test_second_moment_constant_rejects_garbage():
    with patch.dict("os.environ", {"CATMIX_SECOND_MOMENT_C": "lots"}):
        with pytest.raises(ValueError, match="CATMIX_SECOND_MOMENT_C"):
            get_second_moment_constant()


def test_second_moment_constant_must_be_positive():
    with patch.dict("os.environ", {"CATMIX_SECOND_MOMENT_C": "-1"}):
        with pytest.raises(ValueError, match="must be positive"):
            get_second_moment_constant()


def test_cache_dir():
    with patch.dict("os.environ", {}, clear=True):
        assert get_cache_dir() == DEFAULT_CACHE_DIR
    with patch.dict("os.environ", {"CATMIX_CACHE_DIR": "/tmp/kernels"}):
        assert get_cache_dir() == Path("/tmp/kernels")


# ── Logging ──────────────────────────────────────────────────────────────────

def test_configure_logging_is_idempotent():
    configure_logging("WARNING")
    configure_logging("DEBUG")
    root = logging.getLogger()
    handlers = [h for h in root.handlers if getattr(h, "_catmix", False)]
    assert len(handlers) == 1
    assert root.level == logging.DEBUG


def test_configure_logging_reads_env_level():
    with patch.dict("os.environ", {"CATMIX_LOG_LEVEL": "error"}):
        configure_logging()
    assert logging.getLogger().level == logging.ERROR
