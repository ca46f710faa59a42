"""
Tests for the log module.
"""

import logging
from unittest.mock import patch

from rich.logging import RichHandler

from pgn_gan_lab.log import LOG_LEVEL_ENV, PACKAGE_LOGGER, configure_logging, resolve_level


class TestConfigureLogging:
    """Tests for logging setup."""

    def test_resolve_level(self):
        """Test level names and the default."""
        assert resolve_level(None) == logging.INFO
        assert resolve_level("DEBUG") == logging.DEBUG
        assert resolve_level(" error ") == logging.ERROR
        assert resolve_level("verbose") is None

    def test_explicit_level(self, tmp_path):
        """Test that an explicit level wins and installs a rich handler."""
        level = configure_logging("debug", env_path=str(tmp_path / "none.env"))
        logger = logging.getLogger(PACKAGE_LOGGER)
        assert level == logging.DEBUG
        assert logger.level == logging.DEBUG
        assert len(logger.handlers) == 1
        assert isinstance(logger.handlers[0], RichHandler)

    @patch.dict("os.environ", {LOG_LEVEL_ENV: "error"})
    def test_level_from_environment(self, tmp_path):
        """Test PGN_LOG_LEVEL."""
        assert configure_logging(env_path=str(tmp_path / "none.env")) == logging.ERROR

    @patch.dict("os.environ", {LOG_LEVEL_ENV: "chatty"})
    def test_unknown_level_falls_back(self, tmp_path):
        """Test that unknown levels fall back to info."""
        assert configure_logging(env_path=str(tmp_path / "none.env")) == logging.INFO

    @patch.dict("os.environ", {}, clear=True)
    def test_level_from_env_file(self, tmp_path):
        """Test that a .env file supplies the level."""
        env = tmp_path / ".env"
        env.write_text(f"{LOG_LEVEL_ENV}=debug\n")
        assert configure_logging(env_path=str(env)) == logging.DEBUG

    def test_repeated_setup_keeps_one_handler(self, tmp_path):
        """Test that configuring twice does not duplicate handlers."""
        configure_logging("info", env_path=str(tmp_path / "none.env"))
        configure_logging("info", env_path=str(tmp_path / "none.env"))
        assert len(logging.getLogger(PACKAGE_LOGGER).handlers) == 1
