"""Kernel backend selection.

The compiled ``_ext`` module is used when it imports; setting
``DESVQ_PURE=1`` forces the numpy fallback. Both modules stay reachable as
``compiled`` and ``fallback`` for the parity tests and the benchmark.
"""

import os

from . import _fallback as fallback

try:
    from . import _ext as compiled
except ImportError:  # not built
    compiled = None

if compiled is not None and os.environ.get("DESVQ_PURE", "") != "1":
    kernels, name = compiled, "cython"
else:
    kernels, name = fallback, "numpy"
