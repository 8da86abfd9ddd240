"""turbfuse: desk-scale dual-branch face verification under turbulence."""

__version__ = "0.1.0"

from .tensor import Tensor, backward, no_grad  # noqa: F401
