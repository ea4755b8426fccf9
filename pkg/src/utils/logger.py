import json
import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, ClassVar, Dict, Optional

LOG_LEVEL_ENV = "VFARB_LOG_LEVEL"
LOG_DIR_ENV = "VFARB_LOG_DIR"

MAX_LOG_BYTES = 10 * 1024 * 1024
LOG_BACKUPS = 5


class JsonFormatter(logging.Formatter):
    """One JSON object per record; ``extra={"fields": {...}}`` is merged into it."""

    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "timestamp": self.formatTime(record, self.datefmt),
            "name": record.name,
            "level": record.levelname,
            "message": record.getMessage(),
            "where": f"{record.module}:{record.funcName}:{record.lineno}",
            "process": record.process,
            "thread": record.thread,
        }
        fields = getattr(record, "fields", None)
        if isinstance(fields, dict):
            payload.update(fields)
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        # numpy scalars and paths fall back to str
        return json.dumps(payload, default=str)


class Logger:
    """
    Registry of JSON loggers, one per component name.

    Console output goes to stderr so results printed on stdout stay clean. A
    rotating ``<component>.json`` file is added when a log directory is given,
    either explicitly or through VFARB_LOG_DIR.
    """

    _instances: ClassVar[Dict[str, logging.Logger]] = {}
    # Set by set_global_level; components created afterwards start at it
    _override_level: ClassVar[Optional[int]] = None

    def __init__(self, name: str, level: Optional[int] = None, log_dir: Optional[str] = None):
        self.name = name
        self.level = level if level is not None else self._default_level()
        log_dir = log_dir if log_dir is not None else os.getenv(LOG_DIR_ENV)
        self.log_dir = Path(log_dir) if log_dir else None
        if name not in self._instances:
            self._instances[name] = self._configure()

    @staticmethod
    def _level_from_env() -> int:
        level = logging.getLevelName(os.getenv(LOG_LEVEL_ENV, "INFO").upper())
        return level if isinstance(level, int) else logging.INFO

    @classmethod
    def _default_level(cls) -> int:
        return cls._override_level if cls._override_level is not None else cls._level_from_env()

    def _configure(self) -> logging.Logger:
        logger = logging.getLogger(self.name)
        logger.setLevel(self.level)
        formatter = JsonFormatter()

        console = logging.StreamHandler()
        console.setFormatter(formatter)
        logger.addHandler(console)

        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            file_handler = RotatingFileHandler(self.log_dir / f"{self.name}.json", maxBytes=MAX_LOG_BYTES,
                                               backupCount=LOG_BACKUPS, encoding="utf-8")
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)

        logger.propagate = False
        return logger

    @classmethod
    def get_instance(cls, name: str, **kwargs: Any) -> logging.Logger:
        """Get or create the logger for a component."""
        if name not in cls._instances:
            cls(name, **kwargs)
        return cls._instances[name]

    @classmethod
    def set_global_level(cls, level: Optional[int]) -> None:
        """
        Apply a level to the root logger, every registered component and every one
        created later. None drops the override and restores the VFARB_LOG_LEVEL default.
        """
        cls._override_level = level
        effective = cls._default_level()
        logging.getLogger().setLevel(effective)
        for logger in cls._instances.values():
            logger.setLevel(effective)
