"""Triangular mesh core: data structure, IO, patches, generation, perturbation.

A :class:`Mesh` is a flat container (node coordinates, triangle connectivity,
named per-node fields) plus a lazily built connectivity table shared between
meshes that differ only in node positions. All triangles are stored
counter-clockwise at load/generation time, so a negative signed area later on
always means the element was inverted by node movement.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field as _field

import numpy as np
from scipy.spatial import Delaunay as _Delaunay

from .errors import (
    FormatError,
    PerturbationError,
    TopologyError,
    ValidationError,
)

logger = logging.getLogger(__name__)

_PERTURB_RETRIES = 20


def signed_area(a, b, c):
    """Signed area of triangle (a, b, c); positive for counter-clockwise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


def element_areas(nodes, elements):
    """Signed areas of all triangles, vectorized."""
    p0 = nodes[elements[:, 0]]
    p1 = nodes[elements[:, 1]]
    p2 = nodes[elements[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1])


class _Topology:
    """Connectivity-only tables, shared among meshes with identical elements.

    Incidence and adjacency are stored CSR-style so per-node queries are O(deg)
    and whole-mesh sweeps can reuse the flat arrays.
    """

    def __init__(self, elements, n_nodes):
        self.n_nodes = n_nodes
        self.elements = elements
        n_elem = elements.shape[0]

        # node -> incident elements
        flat = elements.ravel()
        order = np.argsort(flat, kind="stable")
        self._inc_data = np.repeat(np.arange(n_elem), 3)[order]
        self._inc_ptr = np.zeros(n_nodes + 1, dtype=np.int64)
        counts = np.bincount(flat, minlength=n_nodes)
        np.cumsum(counts, out=self._inc_ptr[1:])

        # undirected edges with incidence counts (for the boundary mask)
        pairs = np.concatenate(
            [elements[:, [0, 1]], elements[:, [1, 2]], elements[:, [2, 0]]]
        )
        pairs = np.sort(pairs, axis=1)
        uniq, edge_counts = np.unique(pairs, axis=0, return_counts=True)
        self.edges = uniq
        boundary_edges = uniq[edge_counts == 1]
        mask = np.zeros(n_nodes, dtype=bool)
        mask[boundary_edges.ravel()] = True
        self.boundary_mask = mask

        # node -> sorted unique neighbours
        src = np.concatenate([uniq[:, 0], uniq[:, 1]])
        dst = np.concatenate([uniq[:, 1], uniq[:, 0]])
        order = np.lexsort((dst, src))
        self._nb_data = dst[order]
        self._nb_ptr = np.zeros(n_nodes + 1, dtype=np.int64)
        nb_counts = np.bincount(src, minlength=n_nodes)
        np.cumsum(nb_counts, out=self._nb_ptr[1:])

    def incident_elements(self, node):
        return self._inc_data[self._inc_ptr[node] : self._inc_ptr[node + 1]]

    def neighbors(self, node):
        return self._nb_data[self._nb_ptr[node] : self._nb_ptr[node + 1]]

    @property
    def degrees(self):
        return np.diff(self._nb_ptr)


@dataclass(eq=False)
class Mesh:
    """Unstructured triangular mesh with named per-node scalar fields."""

    nodes: np.ndarray
    elements: np.ndarray
    fields: dict = _field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ValidationError("nodes must be an (N, 2) array")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise ValidationError("elements must be an (M, 3) array")
        n = self.nodes.shape[0]
        if self.elements.size:
            bad = (self.elements < 0) | (self.elements >= n)
            if bad.any():
                e = int(np.nonzero(bad.any(axis=1))[0][0])
                value = int(self.elements[e][bad[e]][0])
                raise ValidationError(f"element {e} references node {value} of {n}")
            a, b, c = self.elements.T
            repeated = (a == b) | (b == c) | (a == c)
            if repeated.any():
                e = int(np.nonzero(repeated)[0][0])
                raise ValidationError(
                    f"element {e} has repeated vertices: {self.elements[e]}"
                )
        self.fields = {
            name: np.ascontiguousarray(v, dtype=np.float64)
            for name, v in self.fields.items()
        }
        for name, v in self.fields.items():
            if v.shape != (n,):
                raise ValidationError(
                    f"field '{name}' has {v.shape[0]} entries, expected {n}"
                )
        self._topology = None

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def topology(self):
        if self._topology is None:
            self._topology = _Topology(self.elements, self.n_nodes)
        return self._topology

    @property
    def boundary_mask(self):
        return self.topology.boundary_mask

    @property
    def interior_nodes(self):
        """Indices of movable nodes: referenced by an element and not on the boundary."""
        topo = self.topology
        referenced = np.diff(topo._inc_ptr) > 0
        return np.nonzero(~topo.boundary_mask & referenced)[0]

    def areas(self):
        return element_areas(self.nodes, self.elements)

    def field(self, name):
        if name not in self.fields:
            raise ValidationError(f"mesh has no field '{name}'")
        return self.fields[name]

    def with_nodes(self, nodes):
        """New mesh sharing connectivity (and its topology cache) with moved nodes."""
        nodes = np.ascontiguousarray(nodes, dtype=np.float64)
        if nodes.shape != self.nodes.shape:
            raise ValidationError("with_nodes: shape mismatch")
        out = Mesh(nodes, self.elements, dict(self.fields))
        out._topology = self._topology
        return out

    def with_field(self, name, values):
        fields = dict(self.fields)
        fields[name] = np.ascontiguousarray(values, dtype=np.float64)
        out = Mesh(self.nodes, self.elements, fields)
        out._topology = self._topology
        return out

    def structurally_equal(self, other):
        return (
            self.nodes.shape == other.nodes.shape
            and self.elements.shape == other.elements.shape
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.elements, other.elements)
            and set(self.fields) == set(other.fields)
            and all(np.array_equal(self.fields[k], other.fields[k]) for k in self.fields)
        )


def orient_ccw(nodes, elements):
    """Flip strictly negative-area triangles to counter-clockwise order."""
    elements = np.array(elements, dtype=np.int64, copy=True)
    areas = element_areas(np.asarray(nodes, dtype=float), elements)
    flip = areas < 0.0
    elements[flip] = elements[flip][:, [0, 2, 1]]
    return elements


def tangling_ratio(mesh):
    """Fraction of elements with non-positive signed area."""
    areas = mesh.areas()
    return float(np.count_nonzero(areas <= 0.0)) / mesh.n_elements


def is_valid(mesh):
    return bool(np.all(mesh.areas() > 0.0))


# ---------------------------------------------------------------------------
# IO
# ---------------------------------------------------------------------------

def _mesh_from_parts(nodes, elements, fields):
    # validate connectivity first, then normalize the orientation
    probe = Mesh(np.asarray(nodes, dtype=float), np.asarray(elements, dtype=np.int64).reshape(-1, 3), fields)
    return Mesh(probe.nodes, orient_ccw(probe.nodes, probe.elements), probe.fields)


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    try:
        nodes = data["nodes"]
        elements = data["elements"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing 'nodes'/'elements' keys") from exc
    fields = data.get("fields", {})
    return _mesh_from_parts(nodes, elements, fields)


def _load_msh2(path):
    """Gmsh MSH 2.2 ASCII subset: triangles only, other element types skipped."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    def fail(lineno, msg):
        raise FormatError(f"{path}:{lineno + 1}: {msg}")

    i = 0
    node_ids, coords, triangles = [], [], []
    skipped = 0
    while i < len(lines):
        tok = lines[i].strip()
        if tok == "$MeshFormat":
            parts = lines[i + 1].split()
            if not parts or not parts[0].startswith("2."):
                fail(i + 1, f"unsupported MSH version '{lines[i + 1].strip()}'")
            i += 3
        elif tok == "$Nodes":
            try:
                count = int(lines[i + 1])
            except ValueError:
                fail(i + 1, "bad node count")
            for k in range(count):
                parts = lines[i + 2 + k].split()
                if len(parts) < 4:
                    fail(i + 2 + k, "node line needs 'id x y z'")
                try:
                    node_ids.append(int(parts[0]))
                    coords.append((float(parts[1]), float(parts[2])))
                except ValueError:
                    fail(i + 2 + k, f"bad node line '{lines[i + 2 + k]}'")
            i += count + 3
        elif tok == "$Elements":
            try:
                count = int(lines[i + 1])
            except ValueError:
                fail(i + 1, "bad element count")
            for k in range(count):
                parts = lines[i + 2 + k].split()
                if len(parts) < 3:
                    fail(i + 2 + k, "element line too short")
                try:
                    etype = int(parts[1])
                    ntags = int(parts[2])
                    vertices = [int(p) for p in parts[3 + ntags :]]
                except ValueError:
                    fail(i + 2 + k, f"bad element line '{lines[i + 2 + k]}'")
                if etype == 2:
                    if len(vertices) != 3:
                        fail(i + 2 + k, "triangle needs exactly 3 vertices")
                    triangles.append(vertices)
                else:
                    skipped += 1
            i += count + 3
        else:
            i += 1
    if skipped:
        logger.warning("%s: skipped %d non-triangle elements", path, skipped)
    if not node_ids:
        raise FormatError(f"{path}: no $Nodes section found")
    id_to_index = {nid: k for k, nid in enumerate(node_ids)}
    try:
        elements = [[id_to_index[v] for v in tri] for tri in triangles]
    except KeyError as exc:
        raise FormatError(f"{path}: element references unknown node id {exc.args[0]}")
    return _mesh_from_parts(np.asarray(coords), elements, {})


def load_mesh(path, fmt=None):
    """Load a mesh from JSON or Gmsh MSH 2.2 ASCII (fmt inferred from suffix)."""
    path = str(path)
    if fmt is None:
        fmt = "msh2" if path.endswith(".msh") else "json"
    if fmt == "json":
        return _load_json(path)
    if fmt == "msh2":
        return _load_msh2(path)
    raise ValidationError(f"unknown mesh format '{fmt}'")


def save_mesh(mesh, path, fmt=None):
    """Write a mesh as JSON or MSH 2.2. Floats use repr, so round trips are exact."""
    path = str(path)
    if fmt is None:
        fmt = "msh2" if path.endswith(".msh") else "json"
    if fmt == "json":
        doc = {
            "nodes": [[float(x), float(y)] for x, y in mesh.nodes],
            "elements": [[int(a), int(b), int(c)] for a, b, c in mesh.elements],
        }
        if mesh.fields:
            doc["fields"] = {
                name: [float(v) for v in vals] for name, vals in sorted(mesh.fields.items())
            }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")
    elif fmt == "msh2":
        out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_nodes)]
        for k, (x, y) in enumerate(mesh.nodes):
            out.append(f"{k + 1} {float(x)!r} {float(y)!r} 0")
        out += ["$EndNodes", "$Elements", str(mesh.n_elements)]
        for k, (a, b, c) in enumerate(mesh.elements):
            out.append(f"{k + 1} 2 2 0 0 {a + 1} {b + 1} {c + 1}")
        out += ["$EndElements", ""]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(out))
    else:
        raise ValidationError(f"unknown mesh format '{fmt}'")


# ---------------------------------------------------------------------------
# Node patches
# ---------------------------------------------------------------------------

@dataclass
class NodePatch:
    """A center node, its first-order neighbours, and the elements around it.

    ``star_edges`` only ever pair the center with a neighbour; connections
    between neighbours are deliberately excluded. ``transform`` holds the
    per-axis (min, max) window set by :func:`normalize_patch`.
    """

    center: int
    neighbors: np.ndarray
    incident_elements: np.ndarray
    transform: np.ndarray | None = None

    @property
    def star_edges(self):
        return [(self.center, int(nb)) for nb in self.neighbors]

    @property
    def node_ids(self):
        """Center first, then neighbours in ascending index order."""
        return np.concatenate(([self.center], self.neighbors))


def build_patch(mesh, node):
    """Patch of ``node``: neighbours sharing an element with it, deduplicated and sorted."""
    topo = mesh.topology
    incident = topo.incident_elements(node)
    if incident.size == 0:
        raise TopologyError(f"node {node} has no incident elements")
    nbs = np.unique(mesh.elements[incident])
    nbs = nbs[nbs != node]
    return NodePatch(int(node), nbs, np.sort(incident))


def build_interior_patches(mesh):
    return [build_patch(mesh, int(i)) for i in mesh.interior_nodes]


def _axis_window(lo, hi):
    # Degenerate axis: unit window centred on the shared value, so every
    # coordinate normalizes to 0.5 and 0.5 denormalizes back exactly.
    if hi - lo == 0.0:
        return lo - 0.5, lo + 0.5
    return lo, hi


def normalize_patch(patch, mesh):
    """Min-max map of the patch nodes onto the unit square.

    Returns the normalized coordinates (center row first) and records the
    per-axis window on ``patch.transform`` for later denormalization.
    """
    ids = patch.node_ids
    pts = mesh.nodes[ids]
    x0, x1 = _axis_window(pts[:, 0].min(), pts[:, 0].max())
    y0, y1 = _axis_window(pts[:, 1].min(), pts[:, 1].max())
    patch.transform = np.array([[x0, x1], [y0, y1]], dtype=float)
    out = np.empty_like(pts)
    out[:, 0] = (pts[:, 0] - x0) / (x1 - x0)
    out[:, 1] = (pts[:, 1] - y0) / (y1 - y0)
    return out


def denormalize_center(patch, predicted):
    """Map a predicted unit-square center position back to domain units."""
    if patch.transform is None:
        raise ValidationError("patch has no stored transform; call normalize_patch first")
    t = patch.transform
    predicted = np.asarray(predicted, dtype=float)
    return np.array(
        [
            t[0, 0] + predicted[0] * (t[0, 1] - t[0, 0]),
            t[1, 0] + predicted[1] * (t[1, 1] - t[1, 0]),
        ]
    )


# ---------------------------------------------------------------------------
# Synthetic meshes
# ---------------------------------------------------------------------------

def generate_unit_square_mesh(target_edge_length):
    """Quasi-uniform triangulation of [0,1]^2 with near-equilateral elements.

    Points are laid out on an offset-row (isometric) lattice, with plain rows
    on the bottom/top so the square corners exist, and triangulated with
    Delaunay. Element count scales like 2.31 / h^2.
    """
    h = float(target_edge_length)
    if not 0.0 < h < 1.0:
        raise ValidationError("target_edge_length must be in (0, 1)")
    nx = max(1, round(1.0 / h))
    ny = max(1, round(1.0 / (h * math.sqrt(3.0) / 2.0)))
    pts = []
    for j in range(ny + 1):
        y = j / ny
        if 0 < j < ny and j % 2 == 1:
            xs = [0.0] + [(i + 0.5) / nx for i in range(nx)] + [1.0]
        else:
            xs = [i / nx for i in range(nx + 1)]
        pts.extend((x, y) for x in xs)
    pts = np.asarray(pts, dtype=float)
    tri = _Delaunay(pts)
    elements = orient_ccw(pts, tri.simplices)
    mesh = Mesh(pts, elements)
    areas = mesh.areas()
    if np.any(areas <= 0.0):
        raise ValidationError("generated mesh contains degenerate elements")
    return mesh


def structured_unit_square_mesh(divisions):
    """Right-triangle grid on [0,1]^2: (n+1)^2 nodes, 2 n^2 elements."""
    n = int(divisions)
    if n < 1:
        raise ValidationError("divisions must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    xv, yv = np.meshgrid(xs, xs, indexing="xy")
    pts = np.column_stack([xv.ravel(), yv.ravel()])
    elements = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b = a + 1
            c = a + n + 1
            d = c + 1
            elements.append((a, b, d))
            elements.append((a, d, c))
    return Mesh(pts, np.asarray(elements, dtype=np.int64))


def perturb_nodes(mesh, magnitude, seed):
    """Displace interior nodes by uniform offsets in [-magnitude, magnitude]^2.

    Nodes are visited in index order and each draw is rejected (up to a retry
    budget) if it would invert one of the node's incident elements against the
    already-updated positions, so a successful result is always a valid mesh.
    Deterministic for a fixed seed.
    """
    if magnitude < 0:
        raise ValidationError("magnitude must be >= 0")
    rng = np.random.default_rng(seed)
    nodes = mesh.nodes.copy()
    topo = mesh.topology
    elements = mesh.elements
    for node in mesh.interior_nodes:
        incident = elements[topo.incident_elements(node)]
        original = nodes[node].copy()
        for _ in range(_PERTURB_RETRIES):
            nodes[node] = original + rng.uniform(-magnitude, magnitude, size=2)
            if np.all(element_areas(nodes, incident) > 0.0):
                break
        else:
            raise PerturbationError(
                f"node {node}: no valid position in {_PERTURB_RETRIES} draws "
                f"(magnitude {magnitude})"
            )
    return mesh.with_nodes(nodes)
