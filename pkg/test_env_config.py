"""
Test script for the environment-driven runtime settings
"""
import logging

import pytest

import settings


def test_settings_info_is_complete():
    info = settings.get_settings_info()
    assert set(info) == {"log_level", "num_threads", "default_seed", "schema_version"}
    assert info["schema_version"] == settings.REPORT_SCHEMA_VERSION
    print(f"Effective settings: {info}")


@pytest.mark.parametrize("raw, expected", [(None, None), ("4", 4), ("0", None), ("many", None)])
def test_thread_count_override(monkeypatch, raw, expected):
    monkeypatch.setattr(settings, "NUM_THREADS", raw)
    assert settings.get_thread_count() == expected
    assert settings.get_worker_count() == (expected or -1)


def test_thread_limits_context(monkeypatch):
    monkeypatch.setattr(settings, "NUM_THREADS", "1")
    with settings.thread_limits():
        pass
    monkeypatch.setattr(settings, "NUM_THREADS", None)
    with settings.thread_limits():
        pass


def test_configure_logging(monkeypatch):
    root = logging.getLogger()
    previous = root.level
    try:
        settings.configure_logging(verbose=True)
        assert root.level == logging.DEBUG
        monkeypatch.setattr(settings, "LOG_LEVEL", "chatty")
        settings.configure_logging()
        assert root.level == logging.INFO
    finally:
        root.setLevel(previous)


if __name__ == "__main__":
    test_settings_info_is_complete()
