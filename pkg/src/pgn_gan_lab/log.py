"""
Logging setup.
"""

import logging
import os
from typing import Optional

from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler

LOG_LEVEL_ENV = "PGN_LOG_LEVEL"
DEFAULT_LEVEL = "info"
LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

PACKAGE_LOGGER = "pgn_gan_lab"


def resolve_level(name: Optional[str]) -> Optional[int]:
    """Map a level name to a logging level, None if unknown."""
    if name is None:
        return LEVELS[DEFAULT_LEVEL]
    return LEVELS.get(name.strip().lower())


def configure_logging(level: Optional[str] = None, env_path: Optional[str] = None) -> int:
    """
    Route package logs to stderr through rich.

    Args:
        level: error, info or debug; falls back to PGN_LOG_LEVEL, then info.
        env_path: Optional path to a .env file.

    Returns:
        The numeric level in effect.
    """
    if env_path:
        load_dotenv(env_path)
    else:
        load_dotenv()

    requested = level if level is not None else os.getenv(LOG_LEVEL_ENV)
    numeric = resolve_level(requested)
    unknown = numeric is None
    if unknown:
        numeric = LEVELS[DEFAULT_LEVEL]

    handler = RichHandler(console=Console(stderr=True), show_path=False, markup=False)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.handlers = [handler]
    logger.setLevel(numeric)

    if unknown:
        logger.warning(
            "Unknown log level %r; expected one of %s. Using %s.",
            requested,
            ", ".join(LEVELS),
            DEFAULT_LEVEL,
        )
    return numeric
