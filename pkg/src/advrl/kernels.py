"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation. Set ``ADVRL_KERNELS=python`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
forward = _kernels_py.forward
backward = _kernels_py.backward

if os.environ.get("ADVRL_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        BACKEND = "cython"
        forward = _compiled.forward
        backward = _compiled.backward

IDENTITY = _kernels_py.IDENTITY
RELU = _kernels_py.RELU
TANH = _kernels_py.TANH
