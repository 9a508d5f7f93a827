"""Cell tracking with an edge-oriented message-passing graph network."""
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
