"""
Structured JSON logging with a per-run context.
Every record carries the current run id so sweep points and CLI runs can be told apart.
"""
import logging
import json
import sys
from contextvars import ContextVar

# Context variable holding the id of the current run
_current_run = ContextVar("current_run", default="no-run")

PACKAGES = ("mlrtg", "core", "engine", "evaluation", "storage", "schemas", "benchmarks", "main", "config")


def set_run_id(run_id: str):
    _current_run.set(run_id)


def get_run_id():
    return _current_run.get()


class RunFilter(logging.Filter):
    def filter(self, record):
        record.run_id = get_run_id()
        return True


class JsonFormatter(logging.Formatter):
    def format(self, record):
        log_record = {
            "timestamp": self.formatTime(record, self.datefmt),
            "level": record.levelname,
            "run_id": getattr(record, "run_id", "no-run"),
            "message": record.getMessage(),
            "logger": record.name,
        }
        if hasattr(record, "extra"):
            log_record.update(record.extra)
        return json.dumps(log_record, default=str)


def setup_logger(level="INFO"):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    handler.addFilter(RunFilter())
    for name in PACKAGES:
        pkg_logger = logging.getLogger(name)
        pkg_logger.setLevel(level)
        pkg_logger.handlers = [handler]
    return logging.getLogger("mlrtg")

# Usage:
# from observability.logging import setup_logger, set_run_id
# set_run_id("synth-7")
# logger = setup_logger("DEBUG")
# logger.info("Synthesis started", extra={"extra": {"shape": [100, 100]}})
