"""Counting objective wrapper and the unit-box affine map."""

import threading

import numpy as np


class ObjectiveHandle:
    """Wrap ``fun`` and count every evaluation (thread-safe)."""

    def __init__(self, fun):
        self.fun = fun
        self._count = 0
        self._lock = threading.Lock()

    def __call__(self, x):
        with self._lock:
            self._count += 1
        return float(self.fun(x))

    @property
    def count(self):
        return self._count


class UnitBoxObjective:
    """Present ``fun`` defined on ``[lower, upper]`` as a function on the unit box."""

    def __init__(self, fun, lower, upper):
        self.fun = fun
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.upper <= self.lower):
            raise ValueError("bounds must satisfy lower < upper")
        self.width = self.upper - self.lower

    def to_box(self, u):
        return np.clip(self.lower + np.asarray(u, dtype=float) * self.width, self.lower, self.upper)

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / self.width

    def __call__(self, u):
        return self.fun(self.to_box(u))


class GlobalResult:
    """Outcome of a global optimizer run.

    Attributes
    ----------
    x : ndarray
        Best point, in the caller's bounds.
    fun : float
    nfev : int
        Objective evaluations spent by the run (sampling plus polish).
    trace : list of float
        Best-so-far value after each phase or generation; non-increasing.
    pool_size : int or None
        Number of minimizer-pool vertices (simplicial optimizer only).
    local_minima : list of (ndarray, float)
        Distinct polished minima, best first.
    """

    def __init__(self, x, fun, nfev, trace, pool_size=None, local_minima=None, nit=0):
        self.x = x
        self.fun = fun
        self.nfev = nfev
        self.trace = trace
        self.pool_size = pool_size
        self.local_minima = local_minima or []
        self.nit = nit

    def __repr__(self):
        return f"GlobalResult(x={self.x!r}, fun={self.fun!r}, nfev={self.nfev})"
