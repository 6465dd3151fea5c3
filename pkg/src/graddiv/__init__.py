"""Gradient diversity of fully-connected networks.

Measures and predicts how width and depth affect gradient diversity, and
hence the largest mini-batch size usable without a convergence slow-down:
exact Gaussian-weight expectations (closed forms), Monte Carlo verification
of every formula, and a desk-scale training protocol with batch-size sweeps.
"""

from ._backend import ACTIVE_NAME as backend_name
from ._backend import available_backends

__version__ = "0.1.0"

__all__ = ["backend_name", "available_backends", "__version__"]
