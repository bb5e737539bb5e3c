"""Hash-scan kernels.

The compiled extension (`_speedups`, Cython + OpenSSL) is preferred; the
pure-Python twin is selected when the extension is missing or when the
environment variable METACHAIN_KERNEL=pure forces it. Both implement the
same functions with identical results.
"""

import os

from . import pure

if os.environ.get("METACHAIN_KERNEL", "").strip().lower() == "pure":
    _impl = pure
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = pure

BACKEND: str = "pure" if _impl is pure else "compiled"

pow_scan = _impl.pow_scan
leading_zero_bits = _impl.leading_zero_bits


def available_backends() -> dict:
    """Map backend name -> module, for parity tests and benchmarks."""
    backends = {"pure": pure}
    try:
        from . import _speedups

        backends["compiled"] = _speedups
    except ImportError:
        pass
    return backends
