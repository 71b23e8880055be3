# src/logger.py
import os
import sys

from loguru import logger

LOG_DIR = "logs"

# one file per level, like the console filters below
_LEVEL_FILES = {
    "INFO": "info.log",
    "SUCCESS": "success.log",
    "WARNING": "warning.log",
}

_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} - {level} - {message}"

_state = {"initialized": False, "sinks": []}


def init_logging(log_dir=None, level="INFO", console=True):
    """
    Configure loguru sinks once. Later calls are no-ops unless reset_logging()
    was called in between.
    """
    if _state["initialized"]:
        return logger

    log_dir = log_dir or os.environ.get("KOLMOGOROV_LOG_DIR", LOG_DIR)
    os.makedirs(log_dir, exist_ok=True)

    logger.remove()
    sinks = []

    # all log
    sinks.append(logger.add(os.path.join(log_dir, "all.log"), level="DEBUG",
                            format=_FORMAT, encoding="utf-8"))

    # error log (errors and above)
    sinks.append(logger.add(os.path.join(log_dir, "error.log"), level="ERROR",
                            format=_FORMAT, encoding="utf-8"))

    # exact-level logs
    for name, filename in _LEVEL_FILES.items():
        sinks.append(logger.add(
            os.path.join(log_dir, filename),
            level=name,
            format=_FORMAT,
            encoding="utf-8",
            filter=lambda record, name=name: record["level"].name == name,
        ))

    # console
    if console:
        sinks.append(logger.add(sys.stderr, level=level, format=_FORMAT))

    _state["initialized"] = True
    _state["sinks"] = sinks
    return logger


def reset_logging():
    """Drop every sink so the next init_logging() starts fresh (tests)."""
    for sink_id in _state["sinks"]:
        try:
            logger.remove(sink_id)
        except ValueError:
            pass
    _state["initialized"] = False
    _state["sinks"] = []


# convenience getter (some modules import get_logger)
def get_logger():
    return init_logging()


# helper wrappers
def log_info(msg):
    init_logging().info(msg)

def log_error(msg):
    init_logging().error(msg)

def log_debug(msg):
    init_logging().debug(msg)

def log_warning(msg):
    init_logging().warning(msg)

def log_success(msg):
    init_logging().success(msg)
