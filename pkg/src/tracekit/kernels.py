"""Kernel dispatch: the compiled extension when importable, else the pure-Python twin.

Set ``TRACEKIT_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback as fallback

compiled = None
if not os.environ.get("TRACEKIT_PURE_PYTHON"):
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

impl = compiled if compiled is not None else fallback
IMPLEMENTATION = impl.IMPLEMENTATION

code_bits = impl.code_bits
single_scores = impl.single_scores
subset_scores = impl.subset_scores
splitting = impl.splitting
direct_scores = impl.direct_scores
