"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the pure-Python
module. Set ``EARLYRISK_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("EARLYRISK_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _pykernels as _impl

        BACKEND = "python"

trigrams = _impl.trigrams
count_trigrams = _impl.count_trigrams
global_value = _impl.global_value
global_values = _impl.global_values
score_text = _impl.score_text
first_decision_index = _impl.first_decision_index

__all__ = [
    "BACKEND",
    "trigrams",
    "count_trigrams",
    "global_value",
    "global_values",
    "score_text",
    "first_decision_index",
]
