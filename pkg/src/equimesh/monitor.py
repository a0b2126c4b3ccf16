"""Monitor density construction from recovered derivatives of a nodal field.

The density at a node is ``1 + alpha * r_i / max_j r_j`` where ``r_i`` is the
Frobenius norm of a recovered Hessian (or the Euclidean norm of a recovered
gradient), optionally passed through ``log1p`` first to tame long-tailed
norm distributions. Densities therefore always lie in ``[1, 1 + alpha]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RecoveryError, ValidationError
from .interp import LinearInterpolant, delaunay

_RANK_TOL = 1e-10

VARIANTS = ("hessian", "gradient")


@dataclass
class MonitorField:
    """Per-node mesh density and the configuration that produced it.

    ``raw_norm`` stores the derivative norm after the optional log transform,
    i.e. exactly the quantity that gets max-normalized into ``density`` (and
    the quantity carried between adaptation epochs by interpolation).
    """

    density: np.ndarray
    raw_norm: np.ndarray
    alpha: float
    variant: str = "hessian"
    log_transform: bool = False


def _fit_points(mesh, node, expand):
    topo = mesh.topology
    ids = [int(node)] + [int(j) for j in topo.neighbors(node)]
    if expand:
        second = set(ids)
        for j in list(ids[1:]):
            second.update(int(k) for k in topo.neighbors(j))
        ids = sorted(second)
        ids.remove(int(node))
        ids = [int(node)] + ids
    return np.array(ids, dtype=np.int64)


def recover_gradient(mesh, field):
    """Per-node gradient by a local least-squares linear fit; exact for affine fields."""
    u = mesh.field(field)
    grads = np.empty((mesh.n_nodes, 2))
    for node in range(mesh.n_nodes):
        ids = _fit_points(mesh, node, expand=False)
        pts = mesh.nodes[ids] - mesh.nodes[node]
        scale = max(float(np.abs(pts).max()), np.finfo(float).tiny)
        pts = pts / scale
        design = np.column_stack([np.ones(len(ids)), pts[:, 0], pts[:, 1]])
        sv = np.linalg.svd(design, compute_uv=False)
        if sv[-1] <= _RANK_TOL * sv[0]:
            raise RecoveryError(node, "fewer than 2 distinct neighbour directions")
        # fit the deviation from the nodal value so constant fields recover
        # exact zeros instead of roundoff noise
        coef, *_ = np.linalg.lstsq(design, u[ids] - u[node], rcond=None)
        grads[node] = coef[1:] / scale
    return grads


def recover_hessian(mesh, field):
    """Per-node Hessian by a local least-squares quadratic fit.

    The fit uses the first-ring neighbourhood and widens to the second ring
    when that is rank-deficient (boundary corners, low-degree nodes). Exact
    for globally quadratic fields, symmetric by construction.
    """
    u = mesh.field(field)
    hessians = np.empty((mesh.n_nodes, 2, 2))
    for node in range(mesh.n_nodes):
        for expand in (False, True):
            ids = _fit_points(mesh, node, expand)
            if len(ids) < 6:
                continue
            pts = mesh.nodes[ids] - mesh.nodes[node]
            scale = max(float(np.abs(pts).max()), np.finfo(float).tiny)
            pts = pts / scale
            x, y = pts[:, 0], pts[:, 1]
            design = np.column_stack([np.ones(len(ids)), x, y, x * x, x * y, y * y])
            sv = np.linalg.svd(design, compute_uv=False)
            if sv[-1] <= _RANK_TOL * sv[0]:
                continue
            coef, *_ = np.linalg.lstsq(design, u[ids] - u[node], rcond=None)
            hxx = 2.0 * coef[3] / scale**2
            hxy = coef[4] / scale**2
            hyy = 2.0 * coef[5] / scale**2
            hessians[node] = [[hxx, hxy], [hxy, hyy]]
            break
        else:
            raise RecoveryError(node, "quadratic fit is rank deficient")
    return hessians


def frobenius_norm(hessians):
    return np.sqrt(np.einsum("nij,nij->n", hessians, hessians))


def monitor_from_raw(raw, alpha, variant="hessian", log_transform=False):
    """Density from already-transformed derivative norms (all-zero norms give m == 1)."""
    if alpha <= 0:
        raise ValidationError("alpha must be > 0")
    if variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}")
    raw = np.ascontiguousarray(raw, dtype=np.float64)
    peak = raw.max() if raw.size else 0.0
    if peak > 0.0:
        density = 1.0 + alpha * (raw / peak)
    else:
        density = np.ones_like(raw)
    return MonitorField(density, raw, float(alpha), variant, bool(log_transform))


def build_monitor(mesh, field, alpha=5.0, variant="hessian", log_transform=False):
    """Monitor density for a nodal field: recover derivatives, normalize by the max."""
    if variant == "hessian":
        raw = frobenius_norm(recover_hessian(mesh, field))
    elif variant == "gradient":
        raw = np.linalg.norm(recover_gradient(mesh, field), axis=1)
    else:
        raise ValidationError(f"variant must be one of {VARIANTS}")
    if log_transform:
        raw = np.log1p(raw)
    return monitor_from_raw(raw, alpha, variant, log_transform)


def density_interpolant(mesh, mon):
    """PL interpolant of the monitor density over the mesh nodes."""
    return LinearInterpolant(delaunay(mesh.nodes), mon.density)
