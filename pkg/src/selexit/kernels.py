"""Hot loops, compiled when the extension is built and numpy otherwise.

Set ``SELEXIT_PURE_PYTHON=1`` to force the numpy path.
"""

import os

from . import _kernels_py

EXIT, DEFER = 0, 1

if os.environ.get("SELEXIT_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"


def gate_walk(conf, hard, alpha, beta, backend=None):
    """Terminal decision (EXIT/DEFER) and 1-based layer for every row of scores."""
    import numpy as np

    impl = _pick(backend)
    conf = np.ascontiguousarray(conf, dtype=np.float64)
    hard = np.ascontiguousarray(hard, dtype=np.float64)
    if conf.shape != hard.shape or conf.ndim != 2 or conf.shape[1] < 1:
        raise ValueError("confidence and hardness must be matching (m, n) arrays with n >= 1")
    return impl.gate_walk(conf, hard, float(alpha), float(beta))


def simulate_walk(u, q, qd, a, b, backend=None):
    """Count rows: covered, miscovered, deferred (pipeline walk), then covered
    and miscovered under the per-layer conditional view; each (n,)."""
    import numpy as np

    impl = _pick(backend)
    args = [np.ascontiguousarray(v, dtype=np.float64) for v in (q, qd, a, b)]
    return impl.simulate_walk(np.ascontiguousarray(u, dtype=np.float64), *args)


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        if _impl is _kernels_py:
            from . import _kernels  # raises ImportError if not built

            return _kernels
        return _impl
    raise ValueError(f"unknown backend {backend!r}")
