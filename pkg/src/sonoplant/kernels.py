"""Select the render-kernel backend at import time.

Prefers the compiled Cython extension; falls back to the numpy
implementation when the extension was not built. Set SONOPLANT_KERNEL to
``python`` or ``cython`` to force a backend (the latter raises if the
extension is missing, so CI can assert the build happened).
"""

from __future__ import annotations

import os

from . import _kernels_py

_forced = os.environ.get("SONOPLANT_KERNEL", "").strip().lower()

if _forced == "python":
    BACKEND = "python"
    render_sine_bank = _kernels_py.render_sine_bank
else:
    try:
        from . import _render_kernel

        BACKEND = "cython"
        render_sine_bank = _render_kernel.render_sine_bank
    except ImportError:
        if _forced == "cython":
            raise
        BACKEND = "python"
        render_sine_bank = _kernels_py.render_sine_bank
