"""Selection of the local-moment kernel implementation.

The compiled extension ``pleass._lls_core`` is used when it was built;
otherwise the numpy fallback is used. Setting ``PLEASS_BACKEND=python`` in
the environment forces the fallback.
"""

import os

from pleass import _lls_fallback

try:
    from pleass import _lls_core
except ImportError:  # extension not built
    _lls_core = None

_BACKENDS = {"python": _lls_fallback}
if _lls_core is not None:
    _BACKENDS["compiled"] = _lls_core

if os.environ.get("PLEASS_BACKEND", "").lower() == "python" or _lls_core is None:
    NAME = "python"
else:
    NAME = "compiled"


def available():
    return sorted(_BACKENDS)


def get(name=None):
    """Return the kernel module named ``name`` (default: the active one)."""
    return _BACKENDS[name or NAME]


def moments_1d(*args):
    return _BACKENDS[NAME].moments_1d(*args)


def moments_2d(*args):
    return _BACKENDS[NAME].moments_2d(*args)
