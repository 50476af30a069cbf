"""Desk-scale three-way sentiment classification stack.

Contrastive pretraining of a small transformer encoder, fine-tuning with
configurable classification heads and losses, fill-mask class rebalancing,
and cross-domain macro-F1 evaluation. All numerics run on a tiny reverse-mode
autodiff core (`trisent.tensor`) whose hot kernels have a compiled Cython
path with a pure-numpy fallback.
"""

from ._kernels import BACKEND_NAME

__version__ = "0.1.0"


def backend_name() -> str:
    """Which kernel backend is active: "compiled" or "numpy"."""
    return BACKEND_NAME
