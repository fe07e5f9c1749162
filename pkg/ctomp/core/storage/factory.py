from typing import Optional

from ...config import settings
from ...utils.exceptions import ConfigurationError
from ...utils.logging_manager import LoggingManager
from .base import StorageBackend
from .local_storage import LocalStorage

logger = LoggingManager.get_logger(__name__)


class StorageFactory:
    """Factory class to create storage backends"""

    @staticmethod
    def create_storage(
        backend_type: Optional[str] = None, base_dir: Optional[str] = None
    ) -> StorageBackend:
        """
        Create a storage backend based on configuration

        Args:
            backend_type: Override the configured backend type
            base_dir: Override the configured report directory

        Returns:
            StorageBackend instance
        """
        backend = backend_type or settings.storage_backend

        if backend == "local":
            root = base_dir or settings.report_dir
            logger.debug("Using local storage backend", base_dir=root)
            return LocalStorage(base_dir=root)

        raise ConfigurationError("storage_backend", f"unsupported backend '{backend}'")
