"""Backend selection for the numerical kernels.

``FRACMA_NUMBA=0`` forces the pure-numpy kernels even when numba is
installed. ``FRACMA_THREADS`` caps the number of numba worker threads.
"""
import os
import warnings

# numba probes TBB first and warns when only an old version is present
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None


def _env_flag(name, default):
    value = os.environ.get(name)
    if value is None:
        return default
    return value.strip().lower() not in ("0", "false", "no", "off", "")


USE_NUMBA = HAVE_NUMBA and _env_flag("FRACMA_NUMBA", True)


def _apply_thread_cap():
    cap = os.environ.get("FRACMA_THREADS")
    if not HAVE_NUMBA or not cap:
        return
    n = max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


_apply_thread_cap()


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or the identity without numba."""
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


prange = numba.prange if HAVE_NUMBA else range
