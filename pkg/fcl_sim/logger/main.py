import logging
import colorlog
import sys

ROOT_NAME = "fcl_sim"
_level = logging.INFO


def get_logger(name: str) -> logging.Logger:
    """
    Creates a logger to use for logging.
    """
    logger = logging.getLogger(name)
    logger.setLevel(_level)
    logger.propagate = False
    if not logger.handlers:
        handler = create_handler()
        logger.addHandler(handler)

    return logger


def set_level(level) -> None:
    """
    Changes the level of every fcl_sim logger created so far, and of those created later.
    """
    global _level
    _level = logging.getLevelName(level) if isinstance(level, str) else level

    for name, logger in logging.root.manager.loggerDict.items():
        if name.startswith(ROOT_NAME) and isinstance(logger, logging.Logger):
            logger.setLevel(_level)


def create_handler():
    """
    Creates a stdout handler with the coloured formatter.
    """
    handler = logging.StreamHandler(stream=sys.stdout)
    handler.setFormatter(create_default_formatter())
    return handler


def create_default_formatter():
    """
    Colours the level tag so round summaries stand out from file-write notices.
    """
    return colorlog.ColoredFormatter(
        "%(log_color)s[%(levelname)1.1s %(asctime)s]%(reset)s %(message)s"
    )
