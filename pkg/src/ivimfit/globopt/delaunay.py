"""Bowyer-Watson Delaunay triangulation of planar point sets."""

from dataclasses import dataclass

import numpy as np


class DegenerateInput(ValueError):
    """Fewer than three distinct points, or all points collinear."""


@dataclass(frozen=True)
class Triangulation:
    points: np.ndarray
    """Unique input points, shape (n, 2)."""
    simplices: np.ndarray
    """Counter-clockwise vertex indices into ``points``, shape (m, 3)."""
    index_map: np.ndarray
    """For every original input point, its row in ``points``."""

    def edges(self):
        """Sorted unique undirected edges as an (k, 2) integer array."""
        s = self.simplices
        e = np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)


def _dedupe(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must have shape (n, 2)")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    _, first, inverse = np.unique(pts, axis=0, return_index=True, return_inverse=True)
    # keep first-occurrence order so results follow the caller's ordering
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return pts[first[order]], rank[np.ravel(inverse)]


def _incircle(tri, p):
    """Positive when ``p`` is inside the circumcircle of each CCW triangle."""
    a = tri[:, 0] - p
    b = tri[:, 1] - p
    c = tri[:, 2] - p
    a2 = np.einsum("ij,ij->i", a, a)
    b2 = np.einsum("ij,ij->i", b, b)
    c2 = np.einsum("ij,ij->i", c, c)
    return (
        a2 * (b[:, 0] * c[:, 1] - c[:, 0] * b[:, 1])
        - b2 * (a[:, 0] * c[:, 1] - c[:, 0] * a[:, 1])
        + c2 * (a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1])
    )


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def triangulate(points, tol=1e-12):
    """Delaunay triangulation by incremental Bowyer-Watson insertion.

    Points are shifted and uniformly rescaled so the longer side of their
    bounding box is 1 (the triangulation is unchanged by this);
    ``tol`` is the in-circle tolerance on that scale. Duplicates are merged.

    Raises
    ------
    DegenerateInput
        Fewer than three distinct points, or all points collinear.
    """
    pts, index_map = _dedupe(points)
    n = pts.shape[0]
    if n < 3:
        raise DegenerateInput("need at least three distinct points")
    origin = pts.min(axis=0)
    span = float(np.max(pts.max(axis=0) - origin))
    q = (pts - origin) / span
    rel = q[1:] - q[0]
    cross = rel[:, None, 0] * rel[None, :, 1] - rel[:, None, 1] * rel[None, :, 0]
    if np.max(np.abs(cross)) <= tol:
        raise DegenerateInput("all points are collinear")

    big = 1e4
    work = np.vstack([q, [[-big, -big], [big, -big], [0.5, big]]])
    sv = (n, n + 1, n + 2)
    tris = [sv]

    for i in range(n):
        p = work[i]
        coords = work[np.asarray(tris)]
        bad = np.flatnonzero(_incircle(coords, p) > tol)
        if bad.size == 0:
            # p lies on circumcircles only; fall back to the containing triangle
            bad = np.array([_containing(coords, p)])
        edge_count = {}
        for t in bad:
            a, b, c = tris[t]
            for e in ((a, b), (b, c), (c, a)):
                key = (min(e), max(e))
                if key in edge_count:
                    edge_count[key] = None
                else:
                    edge_count[key] = e
        bad_set = set(bad.tolist())
        tris = [t for k, t in enumerate(tris) if k not in bad_set]
        for e in edge_count.values():
            if e is None:
                continue
            a, b = e
            # new triangles are stored counter-clockwise
            if _orient(work[a], work[b], p) > 0:
                tris.append((a, b, i))
            else:
                tris.append((b, a, i))

    simplices = np.array([t for t in tris if max(t) < n], dtype=int).reshape(-1, 3)
    return Triangulation(pts, simplices, index_map)


def _containing(coords, p):
    best, best_k = -np.inf, 0
    for k, (a, b, c) in enumerate(coords):
        m = min(_orient(a, b, p), _orient(b, c, p), _orient(c, a, p))
        if m > best:
            best, best_k = m, k
    return best_k


def chain_edges(points):
    """Edges of the path through points sorted lexicographically.

    Used in place of a triangulation when the samples are collinear.
    """
    pts = np.asarray(points, dtype=float)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    return np.column_stack([order[:-1], order[1:]])

