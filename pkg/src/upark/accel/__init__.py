"""Backend dispatch for the numeric hot paths.

Two interchangeable backends expose the same five kernels:

- "numba": the loop kernels from _kernels.py compiled with numba.njit
- "numpy": the same loop source interpreted (DTW, MPC rollouts, whose
  recurrences defeat vectorization) plus vectorized twins for the batch
  geometry kernels (_vectorized.py)

Selection at import time via the UPARK_NUMBA environment variable:
"1"/"true"/"on" require numba, "0"/"false"/"off" force numpy, unset or
"auto" picks numba when importable. use() switches at runtime so a single
process can benchmark both.

Both paths run identical formulas and epsilons with no fastmath, and repeated
runs on one backend are bitwise reproducible. Across backends, sin/cos can
differ by 1 ulp (the JIT links a different libm lowering), so closed-loop
results agree only to solver tolerance, not bitwise.
"""

import os

from . import _kernels, _vectorized

_KERNEL_NAMES = (
    "dtw_accumulate",
    "polyline_min_distances",
    "rasterize_polygon",
    "mpc_rollout_cost",
    "mpc_rollout_grad",
)

_NUMPY_IMPLS = {
    "dtw_accumulate": _kernels.dtw_accumulate,
    "mpc_rollout_cost": _kernels.mpc_rollout_cost,
    "mpc_rollout_grad": _kernels.mpc_rollout_grad,
    "polyline_min_distances": _vectorized.polyline_min_distances,
    "rasterize_polygon": _vectorized.rasterize_polygon,
}
# the descent driver composes the rollout kernels, so each backend builds
# its own instance around its own cost/grad pair
_NUMPY_IMPLS["mpc_descent"] = _kernels.make_mpc_descent(
    _kernels.mpc_rollout_cost, _kernels.mpc_rollout_grad)

_numba_impls = None


def _load_numba_impls():
    global _numba_impls
    if _numba_impls is None:
        from numba import njit

        _numba_impls = {
            name: njit(cache=True)(getattr(_kernels, name))
            for name in _KERNEL_NAMES
        }
        _numba_impls["mpc_descent"] = njit(cache=True)(
            _kernels.make_mpc_descent(_numba_impls["mpc_rollout_cost"],
                                      _numba_impls["mpc_rollout_grad"]))
    return _numba_impls


def numba_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _initial_backend():
    flag = os.environ.get("UPARK_NUMBA", "").strip().lower()
    if flag in ("0", "false", "off"):
        return "numpy"
    if flag in ("1", "true", "on"):
        if not numba_available():
            raise RuntimeError("UPARK_NUMBA=1 but numba is not importable")
        return "numba"
    if flag in ("", "auto"):
        return "numba" if numba_available() else "numpy"
    raise RuntimeError("unrecognized UPARK_NUMBA value: %r" % flag)


_active_name = None
_active = None


def use(name):
    """Switch the active backend ("numba" or "numpy")."""
    global _active_name, _active
    if name == "numpy":
        _active = _NUMPY_IMPLS
    elif name == "numba":
        if not numba_available():
            raise RuntimeError("numba backend requested but numba is not importable")
        _active = _load_numba_impls()
    else:
        raise ValueError("unknown backend: %r" % name)
    _active_name = name


def backend():
    """Name of the active backend."""
    return _active_name


use(_initial_backend())


def dtw_accumulate(ax, ay, bx, by):
    """Full-window DTW cost and warping path length. See _kernels."""
    return _active["dtw_accumulate"](ax, ay, bx, by)


def polyline_min_distances(px, py, qx, qy):
    """Distance from each point (px, py) to the nearest point of polyline q."""
    return _active["polyline_min_distances"](px, py, qx, qy)


def rasterize_polygon(ox, oy, res, width, height, px, py, inflation, out):
    """OR into `out` the cells whose inflated footprint overlaps the polygon."""
    return _active["rasterize_polygon"](ox, oy, res, width, height, px, py, inflation, out)


def mpc_rollout_cost(x0, y0, th0, u, refs, prev_v, prev_w, wp, wth, wv, ww, wterm, dt):
    """Tracking cost of a command sequence. See _kernels for the stage terms."""
    return _active["mpc_rollout_cost"](x0, y0, th0, u, refs, prev_v, prev_w,
                                       wp, wth, wv, ww, wterm, dt)


def mpc_rollout_grad(x0, y0, th0, u, refs, prev_v, prev_w, wp, wth, wv, ww, wterm, dt, grad):
    """Cost plus exact gradient wrt commands, written into grad (N, 2)."""
    return _active["mpc_rollout_grad"](x0, y0, th0, u, refs, prev_v, prev_w,
                                       wp, wth, wv, ww, wterm, dt, grad)


def mpc_descent(x0, y0, th0, u, refs, prev_v, prev_w, wp, wth, wv, ww, wterm,
                dt, v_max, w_max, dv_max, dw_max, c0, max_iters,
                backtrack_max, cost_tol, grad, trial):
    """Projected-gradient descent on the rollout cost, in place on u.

    u arrives feasible with cost c0; grad and trial are (N, 2) scratch.
    Returns the improved cost (never above c0).
    """
    return _active["mpc_descent"](x0, y0, th0, u, refs, prev_v, prev_w, wp,
                                  wth, wv, ww, wterm, dt, v_max, w_max,
                                  dv_max, dw_max, c0, max_iters,
                                  backtrack_max, cost_tol, grad, trial)
