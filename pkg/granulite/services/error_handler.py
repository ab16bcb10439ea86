"""
Error reporting for pipeline stages.

This module provides functionality for:
1. Stage-tagged, user-friendly failure messages with hints
2. Tracking error counts and recent failures
"""
import logging
import os
from collections import defaultdict
from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

import yaml

from granulite.errors import StageFailure

logger = logging.getLogger(__name__)

MAX_RECENT_ERRORS = 100


class StageErrorHandler:
    def __init__(self, messages_file: Optional[str] = None):
        self.messages, self.default = self._load_messages(messages_file)
        self.error_stats: Dict[str, int] = defaultdict(int)
        self.recent_errors: List[Dict[str, Any]] = []

    @staticmethod
    def _load_messages(messages_file: Optional[str]) -> Tuple[Dict[str, Dict[str, str]], Dict[str, str]]:
        """Load per-class descriptions and hints"""
        config_path = messages_file or os.path.join(os.path.dirname(__file__), "error_messages.yaml")
        with open(config_path, "r", encoding="utf-8") as f:
            config = yaml.safe_load(f) or {}
        return config.get("error_messages", {}), config.get("default", {})

    def describe(self, error: BaseException) -> Dict[str, str]:
        """Entry for the most specific class of `error` that has one."""
        for cls in type(error).__mro__:
            if cls.__name__ in self.messages:
                return self.messages[cls.__name__]
        return self.default

    def format(self, stage: str, error: BaseException) -> str:
        """
        Stage-tagged message, e.g.
        `[segment] NonManifoldEdge: edge (3, 7) is shared by 3 faces. Hint: ...`
        """
        if isinstance(error, StageFailure):
            stage, error = error.stage, error.cause
        message = f"[{stage}] {type(error).__name__}: {error}"
        hint = self.describe(error).get("hint")
        return f"{message}. Hint: {hint}" if hint else message

    def track(self, stage: str, error: BaseException) -> str:
        """Record a failure and return its formatted message."""
        if isinstance(error, StageFailure):
            stage, error = error.stage, error.cause
        message = self.format(stage, error)
        error_type = type(error).__name__
        self.error_stats[error_type] += 1
        self.recent_errors.append({
            "stage": stage,
            "error_type": error_type,
            "description": self.describe(error).get("description", ""),
            "message": message,
            "timestamp": datetime.now().isoformat(),
        })
        if len(self.recent_errors) > MAX_RECENT_ERRORS:
            self.recent_errors.pop(0)
        logger.error(message)
        return message

    def get_error_stats(self) -> Dict[str, Any]:
        return {
            "total_errors": sum(self.error_stats.values()),
            "error_types": dict(self.error_stats),
            "recent_errors": self.recent_errors[-10:],
        }
