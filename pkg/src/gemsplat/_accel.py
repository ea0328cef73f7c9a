"""Numba acceleration toggle.

Hot kernels are written as plain loops over numpy arrays and compiled with
numba when available. Setting the environment variable GEMSPLAT_NUMBA to
"0", "false" or "off" selects the uncompiled numpy path (same source,
interpreted), which is the reference fallback and the slow side of
benchmarks/bench_render.py. The paths agree to the last ulp except inside
transcendental calls, where numba's libm may round differently.
"""

import os


def _numba_wanted() -> bool:
    flag = os.environ.get("GEMSPLAT_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _numba_wanted()

if USE_NUMBA:
    from numba import njit

    def jit(func):
        return njit(cache=True)(func)
else:

    def jit(func):
        return func


def uncompiled(func):
    """Return the pure-python version of a (possibly) jitted kernel."""
    return getattr(func, "py_func", func)
