"""Kernel backend selection.

The differentiable-rollout hot loop funnels through a small set of fused
kernels.  At import we pick the compiled Cython extension when it is built,
otherwise the pure-numpy fallback.  `ROTORADAPT_BACKEND=python|ext` forces a
choice (forcing `ext` raises if the extension is missing).

Results are deterministic for a fixed backend; the two backends agree to
floating-point roundoff but are not guaranteed bit-identical to each other.
"""

from __future__ import annotations

import os

from . import pykern

_forced = os.environ.get("ROTORADAPT_BACKEND", "").strip().lower()

if _forced == "python":
    kernels = pykern
elif _forced == "ext":
    from .. import _extkern as kernels  # noqa: F401
else:
    try:
        from .. import _extkern as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = pykern


def backend_name() -> str:
    return kernels.NAME
