"""Hot numeric kernels with an optional numba backend.

Set ``DCLC_DISABLE_NUMBA=1`` to force the pure numpy/python path (useful for
debugging and for platforms without numba). Both paths evaluate the same
floating-point expressions in the same order, so results are bit-identical.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("DCLC_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:  # pragma: no cover - import guard
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover
    _njit = None
    NUMBA_ENABLED = False


def njit(fn):
    """``numba.njit(cache=False)`` when available, identity otherwise."""
    if NUMBA_ENABLED:
        return _njit(cache=False)(fn)
    return fn


def _latency_ok_py(t_first, t_token, ceiling, replicas, k, resolution, slo_first_ms, slo_token_ms):
    load = k * resolution / replicas
    if load >= ceiling:
        return False
    inflation = 1.0 / (1.0 - load / ceiling)
    return (t_first * 1e3 * inflation <= slo_first_ms) and (t_token * 1e3 * inflation <= slo_token_ms)


def _search_steps_py(t_first, t_token, ceiling, replicas, resolution, slo_first_ms, slo_token_ms):
    """Largest integer k with load k*resolution meeting both bounds; -1 if none."""
    if not _latency_ok(t_first, t_token, ceiling, replicas, 0, resolution, slo_first_ms, slo_token_ms):
        return -1
    lo = 0
    hi = int(np.ceil(ceiling * replicas / resolution)) + 1
    # invariant: lo feasible, hi infeasible
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _latency_ok(t_first, t_token, ceiling, replicas, mid, resolution, slo_first_ms, slo_token_ms):
            lo = mid
        else:
            hi = mid
    return lo


def _goodput_grid_py(t_first, t_token, ceiling, replicas, resolution, slo_first_ms, slo_token_ms):
    n = t_first.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _search_steps(t_first[i], t_token[i], ceiling[i], replicas[i],
                               resolution, slo_first_ms, slo_token_ms)
    return out


_latency_ok = njit(_latency_ok_py)
_search_steps = njit(_search_steps_py)
_goodput_grid_compiled = njit(_goodput_grid_py)


def search_steps(t_first: float, t_token: float, ceiling: float, replicas: int,
                 resolution: float, slo_first_ms: float, slo_token_ms: float) -> int:
    return int(_search_steps(float(t_first), float(t_token), float(ceiling), int(replicas),
                             float(resolution), float(slo_first_ms), float(slo_token_ms)))


def latency_ok(t_first: float, t_token: float, ceiling: float, replicas: int, k: int,
               resolution: float, slo_first_ms: float, slo_token_ms: float) -> bool:
    return bool(_latency_ok(float(t_first), float(t_token), float(ceiling), int(replicas), int(k),
                            float(resolution), float(slo_first_ms), float(slo_token_ms)))


def goodput_grid(t_first: np.ndarray, t_token: np.ndarray, ceiling: np.ndarray, replicas: np.ndarray,
                 resolution: float, slo_first_ms: float, slo_token_ms: float) -> np.ndarray:
    """Binary-search goodput steps for many (sku, model) pairs at once."""
    args = (np.ascontiguousarray(t_first, dtype=np.float64),
            np.ascontiguousarray(t_token, dtype=np.float64),
            np.ascontiguousarray(ceiling, dtype=np.float64),
            np.ascontiguousarray(replicas, dtype=np.int64),
            float(resolution), float(slo_first_ms), float(slo_token_ms))
    return _goodput_grid_compiled(*args)


def goodput_grid_numpy(t_first: np.ndarray, t_token: np.ndarray, ceiling: np.ndarray, replicas: np.ndarray,
                       resolution: float, slo_first_ms: float, slo_token_ms: float) -> np.ndarray:
    """Vectorised bisection over all pairs simultaneously (no numba needed)."""
    t_first = np.asarray(t_first, dtype=np.float64)
    t_token = np.asarray(t_token, dtype=np.float64)
    ceiling = np.asarray(ceiling, dtype=np.float64)
    replicas = np.asarray(replicas, dtype=np.int64)

    def ok(k: np.ndarray) -> np.ndarray:
        load = k * resolution / replicas
        with np.errstate(divide="ignore", invalid="ignore"):
            inflation = 1.0 / (1.0 - load / ceiling)
            good = (t_first * 1e3 * inflation <= slo_first_ms) & (t_token * 1e3 * inflation <= slo_token_ms)
        return good & (load < ceiling)

    zero = np.zeros_like(replicas)
    feasible0 = ok(zero)
    lo = zero.copy()
    hi = np.ceil(ceiling * replicas / resolution).astype(np.int64) + 1
    active = feasible0 & (hi - lo > 1)
    while active.any():
        mid = (lo + hi) // 2
        good = ok(mid)
        lo = np.where(active & good, mid, lo)
        hi = np.where(active & ~good, mid, hi)
        active = feasible0 & (hi - lo > 1)
    return np.where(feasible0, lo, -1)
