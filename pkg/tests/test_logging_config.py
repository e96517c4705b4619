"""Queue-based logging setup."""

from __future__ import annotations

import logging
from types import SimpleNamespace

import pytest

from dloplan.logging_config import SOLVER_LOGGERS, configure_logging, level_from_name, stop_logging


def _toolkit(**config):
    return SimpleNamespace(config=config, logging_configured=False)


@pytest.fixture
def restore_logging():
    root = logging.getLogger()
    saved_handlers, saved_level = list(root.handlers), root.level
    yield
    stop_logging()
    root.handlers[:] = saved_handlers
    root.setLevel(saved_level)
    for name in SOLVER_LOGGERS:
        logging.getLogger(name).setLevel(logging.NOTSET)


class TestLevelFromName:
    def test_known_name_is_case_insensitive(self):
        assert level_from_name("debug") == logging.DEBUG

    def test_unknown_name_gives_default(self):
        assert level_from_name("LOUD", default=logging.ERROR) == logging.ERROR
        assert level_from_name(None) == logging.INFO


@pytest.mark.usefixtures("restore_logging")
class TestConfigureLogging:
    def test_records_reach_the_log_file(self, tmp_path):
        log_file = tmp_path / "logs" / "run.log"
        configure_logging(_toolkit(LOG_LEVEL="WARNING", LOG_FILE=str(log_file)))
        logging.getLogger("dloplan.tests").warning("replan budget exhausted")
        logging.getLogger("dloplan.tests").info("not written")
        stop_logging()
        text = log_file.read_text(encoding="utf-8")
        assert "[WARNING] dloplan.tests: replan budget exhausted" in text
        assert "not written" not in text

    def test_solver_loggers_follow_their_own_level(self):
        configure_logging(_toolkit(LOG_LEVEL="DEBUG", SOLVER_LOG_LEVEL="ERROR"))
        assert logging.getLogger().level == logging.DEBUG
        for name in SOLVER_LOGGERS:
            assert logging.getLogger(name).level == logging.ERROR

    def test_solver_loggers_default_to_info_under_debug(self):
        configure_logging(_toolkit(LOG_LEVEL="DEBUG"))
        assert logging.getLogger(SOLVER_LOGGERS[0]).level == logging.INFO

    def test_second_call_is_ignored(self):
        toolkit = _toolkit(LOG_LEVEL="WARNING")
        configure_logging(toolkit)
        handlers = list(logging.getLogger().handlers)
        configure_logging(toolkit)
        assert toolkit.logging_configured
        assert logging.getLogger().handlers == handlers
