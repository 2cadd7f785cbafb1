"""One-dimensional grid search with local refinement."""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar


def grid(lo: float, hi: float, n: int) -> np.ndarray:
    """``n`` cell midpoints of ``(lo, hi)``; never touches the end points."""
    return lo + (hi - lo) * (np.arange(n) + 0.5) / n


def refine_max(f: Callable[[float], float], x0: float, half_width: float, lo: float, hi: float,
               xatol: float = 1e-13) -> float:
    """Maximize scalar ``f`` on ``[x0 - half_width, x0 + half_width]`` clipped to ``[lo, hi]``."""
    a, b = max(lo, x0 - half_width), min(hi, x0 + half_width)
    if b <= a:
        return x0
    res = minimize_scalar(lambda x: -f(x), bounds=(a, b), method="bounded", options={"xatol": xatol})
    return float(res.x) if -res.fun >= f(x0) else x0


def grid_refine_max(f_vec: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, n_grid: int) -> float:
    """Global maximizer of ``f_vec`` on a grid, refined inside the neighbouring cells."""
    xs = grid(lo, hi, n_grid)
    vals = f_vec(xs)
    i = int(np.argmax(vals))
    step = (hi - lo) / n_grid
    return refine_max(lambda x: float(f_vec(np.array([x]))[0]), float(xs[i]), step, lo, hi)


def grid_refine_max_columns(scores: np.ndarray, xs: np.ndarray, f_scalar: Callable[[int, float], float],
                            lo: float, hi: float) -> np.ndarray:
    """Per-column version of :func:`grid_refine_max` for precomputed ``scores`` of shape ``(len(xs), Q)``."""
    step = xs[1] - xs[0] if len(xs) > 1 else hi - lo
    best = np.argmax(scores, axis=0)
    return np.array([refine_max(lambda x, j=j: f_scalar(j, x), float(xs[i]), step, lo, hi)
                     for j, i in enumerate(best)])


def local_maxima(vals: np.ndarray) -> np.ndarray:
    """Indices of interior samples strictly larger than the left and at least the right neighbour."""
    v = np.asarray(vals)
    if v.size < 3:
        return np.array([int(np.argmax(v))]) if v.size else np.array([], dtype=int)
    idx = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])) + 1
    return idx
