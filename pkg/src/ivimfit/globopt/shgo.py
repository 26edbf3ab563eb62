"""Simplicial homology global optimization on a 2-D box.

Phases: Sobol sampling of the box, Delaunay triangulation, orientation of
edges by objective value, extraction of the minimizer pool (local sinks of
the directed graph), and a bounded quasi-Newton polish from every pool
vertex.
"""

import numpy as np

from ..lsq import bqn_minimize
from .complex import build_complex, extract_pool
from .objective import GlobalResult, ObjectiveHandle, UnitBoxObjective
from .sampling import sobol_points

_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


def sample_unit_box(n):
    """The four box corners followed by ``n - 4`` Sobol points (origin skipped).

    Prefixes are nested: ``sample_unit_box(n)`` begins with
    ``sample_unit_box(m)`` for every ``m <= n``.
    """
    if n < 5:
        raise ValueError("need at least 5 samples")
    return np.vstack([_CORNERS, sobol_points(2, n - 4, skip=1)])


def _distinct(minima, tol=1e-6):
    out = []
    for x, f in sorted(minima, key=lambda m: (m[1], tuple(m[0]))):
        if all(np.max(np.abs(x - y)) > tol for y, _ in out):
            out.append((x, f))
    return out


def shgo_minimize(obj, lower, upper, n_samples=64, iterations=1, local_options=None):
    """Minimize ``obj`` over the box ``[lower, upper]``.

    Parameters
    ----------
    obj : callable or ObjectiveHandle
        Finite-valued objective on physical coordinates.
    lower, upper : array_like, shape (2,)
    n_samples : int
        Sample count of the first pass (>= 8).
    iterations : int
        Number of passes; each one doubles the sample count and
        re-triangulates. Cached values are reused, so only new samples cost
        evaluations.
    local_options : dict, optional
        Extra keyword arguments for :func:`ivimfit.lsq.bqn_minimize`.

    Returns
    -------
    GlobalResult
    """
    if n_samples < 8:
        raise ValueError("n_samples must be >= 8")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    handle = obj if isinstance(obj, ObjectiveHandle) else ObjectiveHandle(obj)
    start = handle.count
    unit = UnitBoxObjective(handle, lower, upper)
    if unit.width.size != 2:
        raise ValueError("shgo_minimize works on 2-D boxes")
    local_options = dict(local_options or {})

    values = np.empty(0)
    best_x, best_f = None, np.inf
    trace = []
    polished = {}
    pool = np.empty(0, dtype=int)
    for it in range(iterations):
        pts = sample_unit_box(n_samples * 2**it)
        new = [unit(p) for p in pts[values.size:]]
        values = np.concatenate([values, new])
        k = int(np.argmin(values))
        if values[k] < best_f:
            best_x, best_f = pts[k].copy(), float(values[k])
        trace.append(best_f)

        cx = build_complex(pts, values)
        pool = extract_pool(cx)
        for v in pool:
            key = tuple(pts[v])
            if key in polished:
                continue
            res = bqn_minimize(unit, pts[v], np.zeros(2), np.ones(2), **local_options)
            polished[key] = (res.x, res.fun)
            if res.fun < best_f:
                best_x, best_f = res.x.copy(), float(res.fun)
            trace.append(best_f)

    minima = [(unit.to_box(x), f) for x, f in _distinct(list(polished.values()))]
    return GlobalResult(
        unit.to_box(best_x),
        best_f,
        handle.count - start,
        trace,
        pool_size=int(pool.size),
        local_minima=minima,
        nit=iterations,
    )
