"""Directed simplicial complex over sampled points and minimizer pools."""

from dataclasses import dataclass

import numpy as np

from .delaunay import DegenerateInput, chain_edges, triangulate


@dataclass
class SimplicialComplex:
    points: np.ndarray
    values: np.ndarray
    simplices: np.ndarray
    """Triangles as vertex-index rows; empty for the collinear fallback."""
    edges: np.ndarray
    """Directed edges ``(u, v)``: ``u`` is worse than ``v``."""

    def neighbors(self):
        nb = [[] for _ in range(len(self.points))]
        for u, v in self.edges:
            nb[u].append(v)
            nb[v].append(u)
        return nb


def _precedes(points, values, i, j):
    """True when vertex ``i`` ranks strictly better than ``j``.

    Ranking is by value with ties broken by lexicographic point order.
    """
    if values[i] != values[j]:
        return values[i] < values[j]
    return tuple(points[i]) < tuple(points[j])


def build_complex(points, values):
    """Triangulate ``points`` and orient every edge downhill.

    Falls back to a chain over lexicographically sorted points when the
    samples are collinear.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    try:
        tri = triangulate(points)
    except DegenerateInput:
        if len(points) < 2:
            return SimplicialComplex(points, values, np.empty((0, 3), int), np.empty((0, 2), int))
        undirected = chain_edges(points)
        simplices = np.empty((0, 3), int)
    else:
        if len(tri.points) != len(points):
            raise ValueError("sample points must be distinct")
        undirected = tri.edges()
        simplices = tri.simplices
    directed = np.array(
        [(u, v) if _precedes(points, values, v, u) else (v, u) for u, v in undirected],
        dtype=int,
    ).reshape(-1, 2)
    return SimplicialComplex(points, values, simplices, directed)


def extract_pool(cx):
    """Vertices with no outgoing edge: each is no worse than all its neighbors.

    Ties are resolved by lexicographic point order, so a flat region yields
    a single vertex.
    """
    n = len(cx.points)
    if n == 0:
        return np.empty(0, dtype=int)
    has_out = np.zeros(n, dtype=bool)
    if len(cx.edges):
        has_out[cx.edges[:, 0]] = True
    return np.flatnonzero(~has_out)
