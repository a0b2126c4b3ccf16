"""P1 finite elements for manufactured Poisson and Helmholtz problems.

Problems are registered with a closed-form exact solution; the forcing is
derived symbolically once at import time (``-lap(u)`` for Poisson,
``-lap(u) + u`` for the Helmholtz form used here) and the exact solution
restricted to the boundary supplies the Dirichlet data. Assembly is standard
P1 Galerkin with the three-edge-midpoint quadrature rule, which integrates
quadratics exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import SolverError, ValidationError
from .mesh import tangling_ratio

_X, _Y = sp.symbols("x y")


@dataclass(frozen=True)
class PDEProblem:
    key: str
    kind: str  # poisson | helmholtz
    solution_text: str
    exact: object  # callable (x, y) -> u
    forcing: object  # callable (x, y) -> f

    def __repr__(self):
        return f"PDEProblem({self.key}: {self.kind}, u = {self.solution_text})"


def _vectorized(fn):
    def call(x, y):
        out = fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x)).copy()

    return call


def _desingularized(fn, cx, cy):
    # Derivative expressions of radial solutions contain removable 0/0 factors
    # at the center point; nudge exact hits off it.
    def call(x, y):
        x = np.asarray(x, dtype=float).copy()
        r2 = (x - cx) ** 2 + (np.asarray(y, dtype=float) - cy) ** 2
        x[r2 < 1e-28] += 1e-12
        return fn(x, y)

    return call


PROBLEMS = {}


def _register(key, kind, expr, text, singular_center=None):
    lap = sp.diff(expr, _X, 2) + sp.diff(expr, _Y, 2)
    forcing_expr = -lap + (expr if kind == "helmholtz" else 0)
    exact = _vectorized(sp.lambdify((_X, _Y), expr, "numpy"))
    forcing = _vectorized(sp.lambdify((_X, _Y), sp.simplify(forcing_expr), "numpy"))
    if singular_center is not None:
        forcing = _desingularized(forcing, *singular_center)
    PROBLEMS[key] = PDEProblem(key, kind, text, exact, forcing)


_pi = sp.pi
_gauss_sum = sum(
    sp.exp(-(((_X - xm) / sp.Rational(1, 4)) ** 2) - (((_Y - ym) / sp.Rational(1, 4)) ** 2))
    for xm in (sp.Rational(1, 4), sp.Rational(1, 4))
    for ym in (sp.Rational(1, 4), sp.Rational(1, 4))
)
_r2 = (_X - sp.Rational(1, 2)) ** 2 + (_Y - sp.Rational(1, 2)) ** 2

_register(
    "poisson-cos2pix-cos2piy",
    "poisson",
    1 + 8 * _pi**2 * sp.cos(2 * _pi * _X) * sp.cos(2 * _pi * _Y),
    "1 + 8pi^2 cos(2pix)cos(2piy)",
)
_register("poisson-gaussians", "poisson", _gauss_sum, "sum of offset gaussians")
_register(
    "poisson-sin4pix-sin4piy",
    "poisson",
    sp.sin(4 * _pi * _X) * sp.sin(4 * _pi * _Y),
    "sin(4pix)sin(4piy)",
)
_register(
    "poisson-inv-exp", "poisson", 1 / sp.exp(_r2), "1/exp((x-0.5)^2+(y-0.5)^2)"
)
_register(
    "poisson-sin2pixy", "poisson", sp.sin(2 * _pi * _X + 2 * _pi * _Y), "sin(2pix+2piy)"
)
_register(
    "poisson-cospix-exp",
    "poisson",
    sp.cos(_pi * _X) * sp.exp(-_r2),
    "cos(pix)exp(-((x-0.5)^2+(y-0.5)^2))",
)
_register(
    "poisson-cosr-exp",
    "poisson",
    sp.cos(sp.sqrt(_r2)) * sp.exp(-_r2),
    "cos(r)exp(-r^2), r about (0.5,0.5)",
    singular_center=(0.5, 0.5),
)
_register("poisson-sinpix-sinpiy", "poisson", sp.sin(_pi * _X) * sp.sin(_pi * _Y), "sin(pix)sin(piy)")

_register("helmholtz-cos2piy", "helmholtz", sp.cos(2 * _pi * _Y), "cos(2piy)")
_register("helmholtz-cos2pix", "helmholtz", sp.cos(2 * _pi * _X), "cos(2pix)")
_register(
    "helmholtz-cos2piy-cos2pix",
    "helmholtz",
    sp.cos(2 * _pi * _Y) * sp.cos(2 * _pi * _X),
    "cos(2piy)cos(2pix)",
)
_register(
    "helmholtz-cos2piy-cos4pix",
    "helmholtz",
    sp.cos(2 * _pi * _Y) * sp.cos(4 * _pi * _X),
    "cos(2piy)cos(4pix)",
)
_register(
    "helmholtz-cos4piy-cos2pix",
    "helmholtz",
    sp.cos(4 * _pi * _Y) * sp.cos(2 * _pi * _X),
    "cos(4piy)cos(2pix)",
)

HELMHOLTZ_SUITE = [k for k in PROBLEMS if k.startswith("helmholtz-")]
POISSON_TABLE_SUITE = [
    "poisson-cos2pix-cos2piy",
    "poisson-gaussians",
    "poisson-sin4pix-sin4piy",
    "poisson-inv-exp",
    "poisson-sin2pixy",
    "poisson-cospix-exp",
    "poisson-cosr-exp",
]


def get_problem(key):
    if isinstance(key, PDEProblem):
        return key
    if key not in PROBLEMS:
        raise ValidationError(
            f"unknown problem '{key}'; available: {', '.join(sorted(PROBLEMS))}"
        )
    return PROBLEMS[key]


def _element_geometry(mesh):
    tris = mesh.elements
    p0 = mesh.nodes[tris[:, 0]]
    p1 = mesh.nodes[tris[:, 1]]
    p2 = mesh.nodes[tris[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1])
    # gradients of the three hat functions, shape (M, 3, 2)
    grads = np.empty((tris.shape[0], 3, 2))
    grads[:, 0, 0] = p1[:, 1] - p2[:, 1]
    grads[:, 0, 1] = p2[:, 0] - p1[:, 0]
    grads[:, 1, 0] = p2[:, 1] - p0[:, 1]
    grads[:, 1, 1] = p0[:, 0] - p2[:, 0]
    grads[:, 2, 0] = p0[:, 1] - p1[:, 1]
    grads[:, 2, 1] = p1[:, 0] - p0[:, 0]
    grads /= (2.0 * areas)[:, None, None]
    return p0, p1, p2, areas, grads


def assemble(problem, mesh):
    """Global system matrix and load vector before boundary elimination."""
    problem = get_problem(problem)
    tris = mesh.elements
    p0, p1, p2, areas, grads = _element_geometry(mesh)
    n_elem = tris.shape[0]

    k_local = areas[:, None, None] * np.einsum("mik,mjk->mij", grads, grads)
    if problem.kind == "helmholtz":
        mass = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
        k_local = k_local + areas[:, None, None] * mass[None]

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    matrix = sparse.coo_matrix(
        (k_local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)
    ).tocsr()

    m01 = 0.5 * (p0 + p1)
    m12 = 0.5 * (p1 + p2)
    m20 = 0.5 * (p2 + p0)
    f01 = problem.forcing(m01[:, 0], m01[:, 1])
    f12 = problem.forcing(m12[:, 0], m12[:, 1])
    f20 = problem.forcing(m20[:, 0], m20[:, 1])
    w = areas / 6.0  # quadrature weight area/3 times hat value 1/2
    b_local = np.column_stack([w * (f01 + f20), w * (f01 + f12), w * (f12 + f20)])
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, tris.ravel(), b_local.ravel())
    return matrix, load


def solve(problem, mesh):
    """P1 Galerkin solution with Dirichlet data from the exact solution."""
    problem = get_problem(problem)
    if tangling_ratio(mesh) > 0.0:
        raise ValidationError("refusing to solve on a tangled mesh")
    matrix, load = assemble(problem, mesh)
    boundary = mesh.boundary_mask
    interior = ~boundary
    u = np.zeros(mesh.n_nodes)
    u[boundary] = problem.exact(mesh.nodes[boundary, 0], mesh.nodes[boundary, 1])
    rhs = load - matrix @ u
    k_ii = matrix[interior][:, interior].tocsc()
    rhs_i = rhs[interior]
    try:
        u_i = spsolve(k_ii, rhs_i)
    except Exception as exc:  # singular factorization
        raise SolverError(f"linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(u_i)):
        raise SolverError("linear solve produced non-finite values")
    residual = np.linalg.norm(k_ii @ u_i - rhs_i)
    scale = max(np.linalg.norm(rhs_i), 1e-300)
    if residual / scale > 1e-10:
        raise SolverError(f"relative residual {residual / scale:.2e} exceeds 1e-10")
    u[interior] = u_i
    return u


def l2_error(mesh, numeric, exact):
    """L2 norm of (u_h - u_exact) by the edge-midpoint rule (exact for P1^2)."""
    numeric = np.asarray(numeric, dtype=float)
    if numeric.shape != (mesh.n_nodes,):
        raise ValidationError("numeric field length must match the node count")
    tris = mesh.elements
    p0 = mesh.nodes[tris[:, 0]]
    p1 = mesh.nodes[tris[:, 1]]
    p2 = mesh.nodes[tris[:, 2]]
    areas = np.abs(mesh.areas())
    u0, u1, u2 = numeric[tris[:, 0]], numeric[tris[:, 1]], numeric[tris[:, 2]]
    total = 0.0
    for mid, uh in (
        (0.5 * (p0 + p1), 0.5 * (u0 + u1)),
        (0.5 * (p1 + p2), 0.5 * (u1 + u2)),
        (0.5 * (p2 + p0), 0.5 * (u2 + u0)),
    ):
        diff = uh - exact(mid[:, 0], mid[:, 1])
        total += float(np.sum(areas / 3.0 * diff**2))
    return float(np.sqrt(total))


def solution_error(problem, mesh):
    problem = get_problem(problem)
    return l2_error(mesh, solve(problem, mesh), problem.exact)


def error_reduction(problem, coarse, adapted):
    """Percent reduction of the L2 solution error on the adapted mesh."""
    problem = get_problem(problem)
    e_coarse = solution_error(problem, coarse)
    if e_coarse == 0.0:
        raise SolverError("error reduction undefined: coarse error is zero")
    e_adapted = solution_error(problem, adapted)
    return (e_coarse - e_adapted) / e_coarse * 100.0
