"""JIT switch for the numeric kernels.

Set ``GPREG_DISABLE_JIT=1`` in the environment before import to run every
kernel through its pure-numpy implementation instead of numba.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}

JIT_REQUESTED = os.environ.get("GPREG_DISABLE_JIT", "").strip().lower() in _FALSY

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_JIT = JIT_REQUESTED and HAS_NUMBA


def njit(*args, **kwargs):
    """``numba.njit`` with the package defaults, or a no-op without numba.

    The defaults are ``cache=True``, ``nogil=True`` (fitness fan-out runs on
    threads) and the numpy error model so float division by zero yields
    inf instead of raising.
    """
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    kwargs.setdefault("error_model", "numpy")

    if not HAS_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_JIT else "numpy"
