"""Optional numba acceleration.

Set ``ONLINETRACK_NO_NUMBA=1`` to force the pure-numpy kernels. When numba is
missing the numpy kernels are used as well.
"""
import os

DISABLED = os.environ.get("ONLINETRACK_NO_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` if numba is importable, identity otherwise.

    The decorated function is compiled lazily; whether it is *called* is decided
    by ``USE_NUMBA`` at dispatch time in :mod:`onlinetrack.kernels`.
    """
    kwargs.setdefault("cache", True)
    if numba is None:  # pragma: no cover
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def backend():
    return "numba" if USE_NUMBA else "numpy"
