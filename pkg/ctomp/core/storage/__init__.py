# Storage module initialization
from .base import StorageBackend
from .factory import StorageFactory
from .local_storage import LocalStorage

__all__ = ["StorageBackend", "LocalStorage", "StorageFactory"]
