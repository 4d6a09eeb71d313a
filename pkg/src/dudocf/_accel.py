"""Backend selection for the hot numeric kernels.

Kernels are written once as plain Python loops and compiled with numba when
it is available. Setting ``DUDO_NUMBA=0`` in the environment (before import)
switches every kernel to its pure-numpy counterpart, which is what the
benchmark in ``benchmarks/bench_kernels.py`` compares against.
"""
import os

_flag = os.environ.get("DUDO_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        import numba as _numba
    except ImportError:  # pragma: no cover - numba is a hard dependency
        USE_NUMBA = False


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched when numba is off."""
    if USE_NUMBA:
        return _numba.njit(cache=True)(fn)
    return fn


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def set_deterministic(flag: bool = True) -> None:
    """Pin numba and BLAS to one thread so reductions run in a fixed order."""
    if not flag:
        return
    if USE_NUMBA:
        import warnings

        with warnings.catch_warnings():
            # probing the threading layer warns about an old TBB we never use
            warnings.simplefilter("ignore")
            try:
                _numba.set_num_threads(1)
            except (ValueError, AttributeError):
                pass
    from threadpoolctl import threadpool_limits

    threadpool_limits(1)
