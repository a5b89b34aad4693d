"""Backend selection for the two hot kernels.

At import time the compiled extension is preferred; set
``CFDETOX_PURE_PYTHON=1`` to force the numpy fallback.  ``BACKEND`` records
which one is active.  Both backends are bit-compatible, so training results
do not depend on the choice.
"""

from __future__ import annotations

import os

from cfdetox.kernels import pure

BACKEND = "pure"
_impl = pure

if os.environ.get("CFDETOX_PURE_PYTHON", "") != "1":
    try:
        from cfdetox.kernels import _fast  # type: ignore[attr-defined]

        _impl = _fast
        BACKEND = "compiled"
    except ImportError:
        pass

scatter_add_rows = _impl.scatter_add_rows
adamw_update = _impl.adamw_update

__all__ = ["BACKEND", "adamw_update", "pure", "scatter_add_rows"]
