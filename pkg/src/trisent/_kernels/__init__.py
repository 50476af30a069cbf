"""Kernel backend selection.

The hot kernels (softmax, layer norm, embedding scatter-add, AdamW update)
exist twice: a compiled Cython extension and a pure-numpy fallback with the
same API. The compiled one is picked when importable; set TRISENT_BACKEND to
"python" or "compiled" to force a choice. `trisent.backend_name()` reports
which one is active.
"""

import os

from . import numpy_backend

_requested = os.environ.get("TRISENT_BACKEND", "auto").lower()

if _requested == "python":
    impl = numpy_backend
elif _requested == "compiled":
    from . import _fast as impl  # ImportError here means the build is broken
else:
    try:
        from . import _fast as impl
    except ImportError:
        impl = numpy_backend

BACKEND_NAME = impl.NAME

softmax_fwd = impl.softmax_fwd
softmax_bwd = impl.softmax_bwd
layernorm_fwd = impl.layernorm_fwd
layernorm_bwd = impl.layernorm_bwd
scatter_add_rows = impl.scatter_add_rows
adamw_update = impl.adamw_update
