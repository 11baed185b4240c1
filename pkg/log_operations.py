# standard
import logging
import sys


def active_loggers() -> list[logging.Logger]:
    """Every logger created so far except root (root is not in loggerDict)."""
    return [logger for logger in logging.root.manager.loggerDict.values()
            if not isinstance(logger, logging.PlaceHolder)]


def set_logs_to_stdout(loggers: list[logging.Logger]) -> None:
    """
    Send solver and CLI logs to stdout through a single root handler.
    Handlers of the given loggers are dropped, so their records propagate to root.
    """
    for logger in loggers + [logging.getLogger()]:
        logger.handlers.clear()
    logging.getLogger().addHandler(logging.StreamHandler(sys.stdout))


def set_formatter(formatter: logging.Formatter, loggers: list[logging.Logger]) -> None:
    """Formatter for every handler on the given loggers and on root."""
    handlers = {handler for logger in loggers + [logging.getLogger()] for handler in logger.handlers}
    for handler in handlers:
        handler.setFormatter(formatter)


def set_level(level: int, loggers: list[logging.Logger]) -> None:
    """
    Level for the given loggers and root.
    At DEBUG, Python warnings (e.g. numpy overflow warnings from the kernel) are routed to the logs as well.
    """
    for logger in loggers + [logging.getLogger()]:
        logger.setLevel(level)
    logging.captureWarnings(level <= logging.DEBUG)


class StandardFormatter(logging.Formatter):
    read_trap_indicator = " | ---READ-TRAP---"

    def __init__(self, indicator: str, run_id: str, read_trap: bool = False):
        read_trap_string = read_trap * self.read_trap_indicator
        super().__init__(
            fmt=f"{indicator}{{asctime}} | {run_id}{read_trap_string} | {{levelname}}: {{message}}",
            datefmt="%m/%d/%Y %H:%M:%S",
            style="{")
