import json
from pathlib import Path
from typing import Any

from ...utils.logging_manager import LoggingManager
from .base import StorageBackend

logger = LoggingManager.get_logger(__name__)


class LocalStorage(StorageBackend):
    """Local filesystem storage backend"""

    def __init__(self, base_dir: str = "reports"):
        self.base_dir = Path(base_dir)

    def _prepare(self, filepath: str) -> Path:
        full_path = self.base_dir / filepath
        full_path.parent.mkdir(parents=True, exist_ok=True)
        return full_path

    def save_text(self, content: str, filepath: str) -> str:
        full_path = self._prepare(filepath)
        # csv rows carry their own terminators
        with open(full_path, "w", encoding="utf-8", newline="") as f:
            f.write(content)

        logger.info(
            "Saved artefact locally",
            filepath=str(full_path),
            size_bytes=full_path.stat().st_size,
        )
        return str(full_path)

    def save_json(self, data: dict[str, Any], filepath: str) -> str:
        return self.save_text(json.dumps(data, indent=2, sort_keys=True) + "\n", filepath)

    def file_exists(self, filepath: str) -> bool:
        return (self.base_dir / filepath).exists()

    def get_file_url(self, filepath: str) -> str:
        return str(self.base_dir / filepath)
