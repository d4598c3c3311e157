"""flowsig: joint representation encoder + flow-matching generator for
3-axis sensor windows, with a diffusion baseline and evaluation suite."""

from . import backend

__version__ = "0.1.0"
__all__ = ["backend", "__version__"]
