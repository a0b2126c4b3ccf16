"""Piecewise-linear scattered-data interpolation on a Delaunay triangulation.

Values are barycentric-linear inside the convex hull; the gradient is the
constant facet gradient of the containing triangle. Queries outside the hull
clamp to the nearest point on the hull boundary (value interpolated along the
hull edge, gradient zero), which keeps density-like data bounded by its
nodal range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay as _Delaunay
from scipy.spatial import QhullError

from .errors import GeometryError


@dataclass(eq=False)
class Triangulation:
    points: np.ndarray
    triangles: np.ndarray
    qhull: _Delaunay

    @property
    def hull_segments(self):
        return self.qhull.convex_hull


def delaunay(points):
    """Delaunay triangulation of a 2D point set; deterministic for fixed input."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise GeometryError("points must be an (N, 2) array")
    if points.shape[0] < 3:
        raise GeometryError("need at least 3 points")
    span = points - points[0]
    ref = None
    for row in span[1:]:
        if row[0] != 0.0 or row[1] != 0.0:
            ref = row
            break
    scale = max(float(np.abs(span).max()), 1.0)
    if ref is None or np.all(
        np.abs(span[:, 0] * ref[1] - span[:, 1] * ref[0]) < 1e-14 * scale * scale
    ):
        raise GeometryError("all points are collinear")
    try:
        qhull = _Delaunay(points)
    except QhullError as exc:
        raise GeometryError(f"triangulation failed: {exc}") from exc
    tris = np.array(qhull.simplices, dtype=np.int64, copy=True)
    p0, p1, p2 = points[tris[:, 0]], points[tris[:, 1]], points[tris[:, 2]]
    areas = 0.5 * (
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    )
    flip = areas < 0.0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return Triangulation(points, tris, qhull)


class LinearInterpolant:
    """Vectorized evaluation of a PL interpolant and its facet gradients.

    Immutable after construction; concurrent queries are safe (the lazy facet
    gradient cache is computed idempotently).
    """

    def __init__(self, tri, values):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != (tri.points.shape[0],):
            raise GeometryError("values length must match the point count")
        self.tri = tri
        self.values = values
        self._facet_grads = None

    def _grads(self):
        # Facet gradients are indexed by qhull simplex id (same order as
        # tri.triangles; orientation flips do not change the gradient).
        if self._facet_grads is None:
            pts = self.tri.points
            tris = self.tri.triangles
            p0, p1, p2 = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
            v0, v1, v2 = (self.values[tris[:, k]] for k in range(3))
            d1, d2 = p1 - p0, p2 - p0
            det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
            dv1, dv2 = v1 - v0, v2 - v0
            gx = (dv1 * d2[:, 1] - dv2 * d1[:, 1]) / det
            gy = (dv2 * d1[:, 0] - dv1 * d2[:, 0]) / det
            self._facet_grads = np.column_stack([gx, gy])
        return self._facet_grads

    def _clamp_to_hull(self, queries):
        """Nearest point on the hull boundary and the value interpolated there."""
        segs = self.tri.hull_segments
        a = self.tri.points[segs[:, 0]]
        b = self.tri.points[segs[:, 1]]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        out_vals = np.empty(queries.shape[0])
        for k, q in enumerate(queries):
            t = np.einsum("ij,ij->i", q - a, ab) / denom
            t = np.clip(t, 0.0, 1.0)
            proj = a + t[:, None] * ab
            d2 = np.einsum("ij,ij->i", q - proj, q - proj)
            s = int(np.argmin(d2))
            va = self.values[segs[s, 0]]
            vb = self.values[segs[s, 1]]
            out_vals[k] = (1.0 - t[s]) * va + t[s] * vb
        return out_vals

    def __call__(self, queries):
        return self.value_and_gradient(queries)[0]

    def value_and_gradient(self, queries):
        """Values and gradients at (Q, 2) query points; gradient 0 outside the hull."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        simplex = self.tri.qhull.find_simplex(queries)
        values = np.empty(queries.shape[0])
        grads = np.zeros((queries.shape[0], 2))
        inside = simplex >= 0
        if inside.any():
            s = simplex[inside]
            tr = self.tri.qhull.simplices[s]
            transform = self.tri.qhull.transform[s]
            delta = queries[inside] - transform[:, 2]
            b01 = np.einsum("ijk,ik->ij", transform[:, :2], delta)
            bary = np.column_stack([b01, 1.0 - b01.sum(axis=1)])
            values[inside] = np.einsum("ij,ij->i", bary, self.values[tr])
            grads[inside] = self._grads()[s]
        outside = ~inside
        if outside.any():
            values[outside] = self._clamp_to_hull(queries[outside])
        return values, grads


def interpolate(tri, values, query):
    """Value and gradient of the PL interpolant at a single query point."""
    interp = LinearInterpolant(tri, values)
    vals, grads = interp.value_and_gradient(np.asarray(query, dtype=float)[None, :])
    return float(vals[0]), grads[0]


def facet_boundary_distance(tri, query):
    """Distance from ``query`` to the nearest edge of its containing triangle.

    Returns 0 for queries outside the hull. Used to exclude finite-difference
    probes that would straddle a facet of the interpolant.
    """
    query = np.asarray(query, dtype=float)
    s = int(tri.qhull.find_simplex(query[None, :])[0])
    if s < 0:
        return 0.0
    pts = tri.points[tri.qhull.simplices[s]]
    dists = []
    for k in range(3):
        a, b = pts[k], pts[(k + 1) % 3]
        ab = b - a
        t = np.clip(np.dot(query - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        proj = a + t * ab
        dists.append(float(np.linalg.norm(query - proj)))
    return min(dists)
