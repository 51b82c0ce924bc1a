"""
Path-estimation and memory-recall navigation in procedurally generated houses
"""
from .config import APP_NAME, APP_VERSION

__version__ = APP_VERSION
__all__ = ['APP_NAME', '__version__']
