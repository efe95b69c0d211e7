"""Two-stage LEO constellation network simulator: precompute topology deltas, then play them back."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
