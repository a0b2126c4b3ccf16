import numpy as np
import pytest

from equimesh import LinearInterpolant, delaunay, interpolate
from equimesh.errors import GeometryError
from equimesh.interp import facet_boundary_distance


def brute_force_delaunay_check(tri, tol=1e-9):
    """Empty-circumcircle oracle: no point strictly inside any circumcircle."""
    pts = tri.points
    for simplex in tri.triangles:
        a, b, c = pts[simplex]
        # circumcenter from the perpendicular-bisector linear system
        m = 2.0 * np.array([b - a, c - a])
        rhs = np.array([b @ b - a @ a, c @ c - a @ a])
        center = np.linalg.solve(m, rhs)
        radius2 = np.sum((a - center) ** 2)
        d2 = np.sum((pts - center) ** 2, axis=1)
        inside = d2 < radius2 * (1.0 - tol)
        inside[simplex] = False
        assert not inside.any(), f"circumcircle of {simplex} contains other points"


class TestDelaunay:
    def test_square_corners(self):
        tri = delaunay(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
        assert tri.triangles.shape == (2, 3)
        areas = []
        for t in tri.triangles:
            a, b, c = tri.points[t]
            d1, d2 = b - a, c - a
            areas.append(0.5 * (d1[0] * d2[1] - d2[0] * d1[1]))
        assert sum(areas) == pytest.approx(1.0)
        assert min(areas) > 0

    def test_three_points(self):
        tri = delaunay(np.array([[0.0, 0.0], [2.0, 0.0], [0.5, 1.0]]))
        assert tri.triangles.shape == (1, 3)

    def test_collinear_raises(self):
        with pytest.raises(GeometryError, match="collinear"):
            delaunay(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]))

    def test_too_few_points(self):
        with pytest.raises(GeometryError):
            delaunay(np.array([[0.0, 0.0], [1.0, 0.0]]))

    def test_empty_circumcircle_random_cloud(self, rng):
        pts = rng.uniform(0, 1, size=(200, 2))
        tri = delaunay(pts)
        brute_force_delaunay_check(tri)

    def test_deterministic(self, rng):
        pts = rng.uniform(0, 1, size=(60, 2))
        a = delaunay(pts)
        b = delaunay(pts.copy())
        assert np.array_equal(a.triangles, b.triangles)


class TestInterpolate:
    def setup_method(self):
        rng = np.random.default_rng(5)
        boundary = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        self.points = np.vstack([boundary, rng.uniform(0, 1, size=(80, 2))])
        self.tri = delaunay(self.points)

    def test_linear_reproduction(self, rng):
        values = 2.0 * self.points[:, 0] + 3.0 * self.points[:, 1] - 0.7
        interp = LinearInterpolant(self.tri, values)
        queries = rng.uniform(0.01, 0.99, size=(1000, 2))
        vals, grads = interp.value_and_gradient(queries)
        exact = 2.0 * queries[:, 0] + 3.0 * queries[:, 1] - 0.7
        assert np.abs(vals - exact).max() <= 1e-10
        assert np.abs(grads - [2.0, 3.0]).max() <= 1e-8

    def test_value_at_data_point(self, rng):
        values = rng.uniform(-5, 5, len(self.points))
        interp = LinearInterpolant(self.tri, values)
        for k in [0, 10, 41]:
            val, _ = interpolate(self.tri, values, self.points[k])
            assert val == pytest.approx(values[k], abs=1e-12)

    def test_convex_combination_bound(self, rng):
        values = rng.uniform(1.0, 6.0, len(self.points))
        interp = LinearInterpolant(self.tri, values)
        queries = rng.uniform(0, 1, size=(500, 2))
        vals = interp(queries)
        assert vals.min() >= values.min() - 1e-12
        assert vals.max() <= values.max() + 1e-12

    def test_gradient_matches_finite_differences(self, rng):
        values = np.sin(3 * self.points[:, 0]) * self.points[:, 1] ** 2
        interp = LinearInterpolant(self.tri, values)
        step = 1e-6
        checked = 0
        for _ in range(400):
            q = rng.uniform(0.05, 0.95, 2)
            if facet_boundary_distance(self.tri, q) < 1e-3:
                continue
            _, grad = interp.value_and_gradient(q[None, :])
            fd = np.empty(2)
            for k in range(2):
                qp, qm = q.copy(), q.copy()
                qp[k] += step
                qm[k] -= step
                fd[k] = (interp(qp[None, :])[0] - interp(qm[None, :])[0]) / (2 * step)
            assert np.abs(fd - grad[0]).max() <= 1e-4
            checked += 1
        assert checked >= 100

    def test_outside_hull_clamps(self):
        corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        tri = delaunay(corners)
        values = np.array([1.0, 2.0, 3.0, 4.0])
        # beyond the right edge: nearest hull point is (1, 0.5)
        val, grad = interpolate(tri, values, np.array([2.0, 0.5]))
        assert val == pytest.approx(0.5 * (2.0 + 3.0))
        assert np.all(grad == 0.0)
        # beyond a corner: nearest hull point is the corner itself
        val, _ = interpolate(tri, values, np.array([3.0, 3.0]))
        assert val == pytest.approx(3.0)

    def test_length_mismatch(self):
        with pytest.raises(GeometryError):
            LinearInterpolant(self.tri, np.zeros(3))
