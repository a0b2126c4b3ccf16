"""Equidistribution metrics.

Each element carries a load ``L_K = m_K * |K|`` (nodal-average density times
unsigned area). An equidistributed mesh makes every ``L_K`` equal, so mesh
quality is measured by variances of ``L_K``: per node patch (the training
objective), and over the whole mesh (the convergence metric). All variances
are population variances (divide by the count, not count - 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .mesh import build_interior_patches
from .monitor import density_interpolant

LAMBDA_DEFAULT = 100.0


@dataclass
class ElementMetric:
    element: int
    m_K: float
    area: float
    L_K: float


def element_metric(mesh, mon, element):
    """Load of one element: mean vertex density times unsigned area."""
    tri = mesh.elements[element]
    m_K = float(np.mean(mon.density[tri]))
    p0, p1, p2 = mesh.nodes[tri]
    area = 0.5 * (
        (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
    )
    return ElementMetric(int(element), m_K, float(area), m_K * abs(area))


def _rotated_incident(mesh, patch):
    """Incident elements with vertices cycled so the patch center sits first."""
    tris = mesh.elements[patch.incident_elements]
    out = np.empty_like(tris)
    for r, tri in enumerate(tris):
        k = int(np.nonzero(tri == patch.center)[0][0])
        out[r] = np.roll(tri, -k)
    return out


def patch_element_loads(mesh, mon, patch, center_override=None, interpolant=None):
    """L values of the patch's incident elements, optionally with a moved center.

    With ``center_override`` the incident areas are recomputed using the
    override position and the center density is interpolated there from the
    monitor's PL interpolant (the other two vertices keep their nodal values).
    """
    rot = _rotated_incident(mesh, patch)
    v1, v2 = rot[:, 1], rot[:, 2]
    if center_override is None:
        c = mesh.nodes[patch.center]
        mc = mon.density[patch.center]
    else:
        c = np.asarray(center_override, dtype=float)
        if interpolant is None:
            interpolant = density_interpolant(mesh, mon)
        mc = float(interpolant(c[None, :])[0])
    d1 = mesh.nodes[v1] - c
    d2 = mesh.nodes[v2] - c
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1])
    m_K = (mc + mon.density[v1] + mon.density[v2]) / 3.0
    return m_K * np.abs(areas)


def patch_variance(mesh, mon, patch, center_override=None, interpolant=None):
    """Population variance of the incident-element loads around one node."""
    loads = patch_element_loads(mesh, mon, patch, center_override, interpolant)
    return float(np.mean((loads - loads.mean()) ** 2))


def equidistribution_loss(mesh, mon, patches, lam=LAMBDA_DEFAULT):
    """Scaled mean patch variance over a set of patches."""
    if lam <= 0:
        raise ValidationError("lambda must be > 0")
    patches = list(patches)
    if not patches:
        raise ValidationError("patch set is empty")
    return lam * float(np.mean([patch_variance(mesh, mon, p) for p in patches]))


def element_loads(mesh, mon):
    """L_K for every element, vectorized."""
    areas = np.abs(mesh.areas())
    m_K = mon.density[mesh.elements].mean(axis=1)
    return m_K * areas


def global_uniformity(mesh, mon):
    """Population variance of L_K over all elements (0 means equidistributed)."""
    loads = element_loads(mesh, mon)
    return float(np.mean((loads - loads.mean()) ** 2))


class PatchTable:
    """Flat incident-element table for a patch set, for vectorized sweeps.

    Row ``r`` is one (patch, incident element) pair with the element's
    vertices cycled so the patch center comes first; ``patch_ids[r]`` maps the
    row back to its patch. Orientation is preserved by the cycling, so signed
    areas keep their meaning.
    """

    def __init__(self, mesh, patches):
        rows = []
        patch_ids = []
        centers = np.empty(len(patches), dtype=np.int64)
        for p, patch in enumerate(patches):
            rot = _rotated_incident(mesh, patch)
            rows.append(rot)
            patch_ids.append(np.full(rot.shape[0], p, dtype=np.int64))
            centers[p] = patch.center
        stacked = np.concatenate(rows) if rows else np.empty((0, 3), dtype=np.int64)
        self.patches = list(patches)
        self.centers = centers
        self.v0 = stacked[:, 0]
        self.v1 = stacked[:, 1]
        self.v2 = stacked[:, 2]
        self.patch_ids = np.concatenate(patch_ids) if patch_ids else np.empty(0, np.int64)
        self.counts = np.bincount(self.patch_ids, minlength=len(patches)).astype(float)

    def loads(self, nodes, density):
        c = nodes[self.v0]
        d1 = nodes[self.v1] - c
        d2 = nodes[self.v2] - c
        areas = 0.5 * (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1])
        m_K = (density[self.v0] + density[self.v1] + density[self.v2]) / 3.0
        return m_K * np.abs(areas), areas, m_K

    def patch_means(self, loads):
        return np.bincount(self.patch_ids, weights=loads, minlength=len(self.counts)) / self.counts

    def patch_variances(self, loads):
        means = self.patch_means(loads)
        dev = loads - means[self.patch_ids]
        return (
            np.bincount(self.patch_ids, weights=dev * dev, minlength=len(self.counts))
            / self.counts
        )


def total_variance_check(mesh, mon, patches=None):
    """Decompose the variance of the patch-multiset L values.

    Gathers every (interior patch, incident element) load with repetition and
    returns ``(var_LK, mean_within, var_between)`` where the within/between
    components weight each patch by its element count, so
    ``var_LK == mean_within + var_between`` holds to rounding error.
    """
    if patches is None:
        patches = build_interior_patches(mesh)
    table = PatchTable(mesh, patches)
    loads, _, _ = table.loads(mesh.nodes, mon.density)
    total_mean = loads.mean()
    var_lk = float(np.mean((loads - total_mean) ** 2))
    means = table.patch_means(loads)
    variances = table.patch_variances(loads)
    weights = table.counts / table.counts.sum()
    mean_within = float(np.sum(weights * variances))
    var_between = float(np.sum(weights * (means - total_mean) ** 2))
    return var_lk, mean_within, var_between
