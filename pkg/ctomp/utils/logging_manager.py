import sys
from typing import Optional

from loguru import logger

FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} | {message}"


class LoggingManager:
    """
    Centralized logging manager using Loguru.
    Console output goes to stderr so that report output on stdout stays clean.
    """

    _configured = False

    @classmethod
    def configure_logging(
        cls,
        level: str = "INFO",
        debug: bool = False,
        log_to_file: bool = False,
        log_file_path: Optional[str] = None,
        rotation: str = "10 MB",
        retention: str = "30 days",
        file_format: str = FILE_FORMAT,
    ) -> None:
        """Configure loguru logger with appropriate settings"""
        if cls._configured:
            return

        # Remove default handler
        logger.remove()

        log_level = "DEBUG" if debug else level

        logger.add(
            sys.stderr,
            level=log_level,
            format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
            "<level>{level: <8}</level> | "
            "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
            "<level>{message}</level>",
            colorize=True,
            diagnose=debug,
        )

        if log_to_file:
            logger.add(
                "logs/error.log",
                level="ERROR",
                format=file_format,
                rotation=rotation,
                retention=retention,
                compression="zip",
                delay=True,
            )
            if log_file_path:
                cls.add_file_handler(
                    log_file_path, level=log_level, rotation=rotation, retention=retention, file_format=file_format
                )

        if debug:
            logger.add(
                "logs/debug.log",
                level="DEBUG",
                format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} | {message} | {extra}",
                rotation="50 MB",
                retention="7 days",
                compression="zip",
                delay=True,
            )

        cls._configured = True
        logger.debug("Logging configured", level=log_level)

    @classmethod
    def get_logger(cls, name: Optional[str] = None):
        """Get a logger instance with optional name binding"""
        if not cls._configured:
            from ..config import settings

            cls.configure_logging(
                level=settings.log_level,
                debug=settings.debug,
                log_to_file=settings.log_to_file,
                log_file_path=settings.log_file_path,
                rotation=settings.log_rotation,
                retention=settings.log_retention,
                file_format=settings.log_format,
            )

        if name:
            return logger.bind(name=name)
        return logger

    @classmethod
    def add_file_handler(
        cls,
        file_path: str,
        level: str = "INFO",
        rotation: str = "10 MB",
        retention: str = "30 days",
        file_format: str = FILE_FORMAT,
    ) -> None:
        """Add additional file handler"""
        logger.add(
            file_path,
            level=level,
            format=file_format,
            rotation=rotation,
            retention=retention,
            compression="zip",
            delay=True,
        )
        logger.info("Added file handler", path=file_path)

    @classmethod
    def reset(cls) -> None:
        """Drop all sinks so the next configure_logging call starts fresh"""
        logger.remove()
        cls._configured = False
