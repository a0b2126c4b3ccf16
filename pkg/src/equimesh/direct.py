"""Direct variational mover: per-node Gauss-Newton descent on patch variance.

Every interior node is moved to reduce the population variance of its
incident-element loads. The descent direction comes from the analytic
gradient of the variance with respect to the center position (area terms
differentiated by hand, the density term through the PL interpolant's facet
gradient), scaled by a per-node 2x2 Gauss-Newton solve so one relaxation
factor works across mesh resolutions. Updates are Jacobi-style: all gradients
are evaluated on the pre-step mesh, then applied simultaneously, with a
per-node rollback pass that keeps the mesh valid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .mesh import build_interior_patches, element_areas
from .metric import PatchTable
from .monitor import density_interpolant


@dataclass
class DirectMoveConfig:
    # inner_iters is per adaptation epoch; higher values equidistribute harder
    # but over-concentrate the mesh past the point that helps the PDE error.
    step_size: float = 0.2
    inner_iters: int = 3
    max_step_fraction: float = 0.25

    def __post_init__(self):
        if self.step_size <= 0 or self.inner_iters < 1 or not 0 < self.max_step_fraction <= 1:
            raise ValidationError("DirectMoveConfig fields must be positive")


def _load_terms(nodes, density, table, center_pos, center_density, grad_m):
    """Loads and their center derivatives for every (patch, element) row."""
    c = center_pos[table.patch_ids]
    p1 = nodes[table.v1]
    p2 = nodes[table.v2]
    d1 = p1 - c
    d2 = p2 - c
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1])
    m_K = (center_density[table.patch_ids] + density[table.v1] + density[table.v2]) / 3.0
    loads = m_K * np.abs(areas)
    # d|A|/dc = sign(A) * 0.5 * (y1 - y2, x2 - x1)
    darea = 0.5 * np.column_stack([p1[:, 1] - p2[:, 1], p2[:, 0] - p1[:, 0]])
    sign = np.sign(areas)
    dL = (m_K * sign)[:, None] * darea + (np.abs(areas) / 3.0)[:, None] * grad_m[table.patch_ids]
    return loads, dL


def _variance_gradients(table, loads, dL):
    """Per-patch gradient of the load variance and its Gauss-Newton 2x2 matrix."""
    n = len(table.counts)
    means = table.patch_means(loads)
    dev = loads - means[table.patch_ids]
    mean_dL = np.column_stack(
        [
            np.bincount(table.patch_ids, weights=dL[:, k], minlength=n) / table.counts
            for k in range(2)
        ]
    )
    jac = dL - mean_dL[table.patch_ids]
    grad = np.column_stack(
        [
            np.bincount(table.patch_ids, weights=dev * dL[:, k], minlength=n)
            for k in range(2)
        ]
    )
    grad *= (2.0 / table.counts)[:, None]
    hxx = np.bincount(table.patch_ids, weights=jac[:, 0] ** 2, minlength=n)
    hyy = np.bincount(table.patch_ids, weights=jac[:, 1] ** 2, minlength=n)
    hxy = np.bincount(table.patch_ids, weights=jac[:, 0] * jac[:, 1], minlength=n)
    scale = (2.0 / table.counts)
    return grad, hxx * scale, hxy * scale, hyy * scale


def _solve_steps(grad, hxx, hxy, hyy):
    """Damped-solve  -(H + eps I)^{-1} g  per patch."""
    eps = 1e-9 * (hxx + hyy) + 1e-30
    det = (hxx + eps) * (hyy + eps) - hxy * hxy
    sx = -((hyy + eps) * grad[:, 0] - hxy * grad[:, 1]) / det
    sy = -((hxx + eps) * grad[:, 1] - hxy * grad[:, 0]) / det
    return np.column_stack([sx, sy])


def _min_star_edge(nodes, table):
    d1 = nodes[table.v1] - nodes[table.v0]
    lens = np.sqrt(d1[:, 0] ** 2 + d1[:, 1] ** 2)
    out = np.full(len(table.counts), np.inf)
    np.minimum.at(out, table.patch_ids, lens)
    return out


def _apply_with_rollback(nodes, proposals, centers, elements):
    """Simultaneous update; revert nodes touching inverted elements until valid."""
    new = nodes.copy()
    new[centers] = proposals
    movable = np.zeros(nodes.shape[0], dtype=bool)
    movable[centers] = True
    for _ in range(len(centers) + 1):
        bad = element_areas(new, elements) <= 0.0
        if not bad.any():
            return new
        culprits = np.unique(elements[bad])
        culprits = culprits[movable[culprits]]
        if culprits.size == 0:  # inverted element with no moved vertex: impossible
            break
        new[culprits] = nodes[culprits]
        movable[culprits] = False
    raise ValidationError("rollback failed to restore a valid mesh")


def _step_arrays(nodes, density, table, interpolant, config, elements):
    centers = table.centers
    center_pos = nodes[centers]
    _, grad_m = interpolant.value_and_gradient(center_pos)
    loads, dL = _load_terms(nodes, density, table, center_pos, density[centers], grad_m)
    grad, hxx, hxy, hyy = _variance_gradients(table, loads, dL)
    steps = config.step_size * _solve_steps(grad, hxx, hxy, hyy)
    caps = config.max_step_fraction * _min_star_edge(nodes, table)
    norms = np.sqrt(steps[:, 0] ** 2 + steps[:, 1] ** 2)
    over = norms > caps
    steps[over] *= (caps[over] / norms[over])[:, None]
    return _apply_with_rollback(nodes, center_pos + steps, centers, elements)


def patch_variance_gradient(mesh, mon, patch, center_override=None, interpolant=None):
    """Analytic gradient of one patch's load variance w.r.t. its center position.

    Evaluated at ``center_override`` when given (the center density and its
    gradient then come from the monitor interpolant), otherwise at the current
    center. Matches central finite differences of
    :func:`equimesh.metric.patch_variance` away from interpolant facet edges.
    """
    if interpolant is None:
        interpolant = density_interpolant(mesh, mon)
    table = PatchTable(mesh, [patch])
    if center_override is None:
        center_pos = mesh.nodes[patch.center][None, :]
        center_density = np.array([mon.density[patch.center]])
        _, grad_m = interpolant.value_and_gradient(center_pos)
    else:
        center_pos = np.asarray(center_override, dtype=float)[None, :]
        vals, grad_m = interpolant.value_and_gradient(center_pos)
        center_density = vals
    loads, dL = _load_terms(
        mesh.nodes, mon.density, table, center_pos, center_density, grad_m
    )
    grad, *_ = _variance_gradients(table, loads, dL)
    return grad[0]


def direct_step(mesh, mon, config=None, interpolant=None, table=None):
    """One simultaneous descent step on all interior nodes; never tangles."""
    config = config or DirectMoveConfig()
    if interpolant is None:
        interpolant = density_interpolant(mesh, mon)
    if table is None:
        table = PatchTable(mesh, build_interior_patches(mesh))
    nodes = _step_arrays(
        mesh.nodes, mon.density, table, interpolant, config, mesh.elements
    )
    return mesh.with_nodes(nodes)


def direct_move(mesh, mon, config=None):
    """Run ``inner_iters`` descent steps against the monitor field of ``mesh``.

    The density field is frozen as the PL interpolant built from the input
    mesh; after each step the nodal densities are resampled from it at the
    moved positions, so the iteration descends one fixed objective.
    """
    config = config or DirectMoveConfig()
    interpolant = density_interpolant(mesh, mon)
    table = PatchTable(mesh, build_interior_patches(mesh))
    nodes = mesh.nodes
    density = mon.density.copy()
    for _ in range(config.inner_iters):
        nodes = _step_arrays(nodes, density, table, interpolant, config, mesh.elements)
        density = interpolant(nodes)
    return mesh.with_nodes(nodes)
