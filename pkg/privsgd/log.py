import logging

from privsgd import config

_FORMAT = "[%(levelname)s] %(name)s: %(message)s"


def setup_logging(level: str = None) -> None:
    """Install a single stream handler on the package logger."""
    root = logging.getLogger("privsgd")
    root.setLevel((level or config.LOG_LEVEL).upper())
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_FORMAT))
        root.addHandler(handler)
