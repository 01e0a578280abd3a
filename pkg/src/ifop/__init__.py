"""Extension-based operator learning for interface problems on varying domains."""
from .grid import GridSpec
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["GridSpec", "BACKEND", "__version__"]
