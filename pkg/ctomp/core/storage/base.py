from abc import ABC, abstractmethod
from typing import Any


class StorageBackend(ABC):
    """Where report artefacts end up"""

    @abstractmethod
    def save_text(self, content: str, filepath: str) -> str:
        """
        Save a text artefact (CSV tables, rendered summaries)

        Args:
            content: Text to save
            filepath: Path relative to the backend root

        Returns:
            Full path of the saved artefact
        """
        pass

    @abstractmethod
    def save_json(self, data: dict[str, Any], filepath: str) -> str:
        """
        Save a JSON document with stable key order

        Args:
            data: JSON-compatible data
            filepath: Path relative to the backend root

        Returns:
            Full path of the saved artefact
        """
        pass

    @abstractmethod
    def file_exists(self, filepath: str) -> bool:
        pass

    @abstractmethod
    def get_file_url(self, filepath: str) -> str:
        """Get the path used to open the artefact"""
        pass
