"""Selects the scan kernel implementation at import time.

The compiled extension is used when it imports cleanly; set
``TV3S_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _scan_py

BACKEND = "python"
scan_forward = _scan_py.scan_forward
scan_backward = _scan_py.scan_backward

if os.environ.get("TV3S_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _scan_ext
    except ImportError:  # extension not built
        _scan_ext = None
    if _scan_ext is not None:
        BACKEND = "compiled"
        scan_forward = _scan_ext.scan_forward
        scan_backward = _scan_ext.scan_backward


def implementations():
    """All importable kernel pairs keyed by backend name."""
    impls = {"python": (_scan_py.scan_forward, _scan_py.scan_backward)}
    try:
        from . import _scan_ext as ext
    except ImportError:
        return impls
    impls["compiled"] = (ext.scan_forward, ext.scan_backward)
    return impls
