"""Backend selection for the Monte Carlo kernels.

The compiled Cython extension is preferred when importable; the pure numpy
module implements the same contracts and is selected automatically when the
extension was not built.  ``GRADDIV_BACKEND`` forces the choice: ``compiled``,
``pure``, or ``auto`` (default).  Both backends are deterministic given the
same inputs; they agree to floating-point reassociation, not bit-for-bit.
"""

import os

from . import pure

_requested = os.environ.get("GRADDIV_BACKEND", "auto").lower()

compiled = None
if _requested in ("auto", "compiled"):
    try:
        from . import _core as compiled
    except ImportError:
        compiled = None
        if _requested == "compiled":
            raise ImportError(
                "GRADDIV_BACKEND=compiled but the extension is not built; "
                "reinstall with a C compiler or use GRADDIV_BACKEND=pure"
            )

_active = compiled if compiled is not None else pure

ACTIVE_NAME = _active.NAME

lnn_block_stats = _active.lnn_block_stats
lnn_block_layer_stats = _active.lnn_block_layer_stats
lnn_block_entry_stats = _active.lnn_block_entry_stats
twolayer_block_terms = _active.twolayer_block_terms


def available_backends():
    names = ["pure"]
    if compiled is not None:
        names.insert(0, "compiled")
    return names
