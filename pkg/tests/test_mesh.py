import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from equimesh import (
    Mesh,
    NodePatch,
    build_interior_patches,
    build_patch,
    denormalize_center,
    generate_unit_square_mesh,
    load_mesh,
    normalize_patch,
    perturb_nodes,
    save_mesh,
    signed_area,
    structured_unit_square_mesh,
    tangling_ratio,
)
from equimesh.errors import (
    FormatError,
    PerturbationError,
    TopologyError,
    ValidationError,
)

SQUARE_JSON = {
    "nodes": [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
    "elements": [[0, 1, 2], [0, 2, 3]],
}


class TestIO:
    def test_load_json_square(self, tmp_path):
        path = tmp_path / "square.json"
        path.write_text(json.dumps(SQUARE_JSON))
        mesh = load_mesh(path)
        assert mesh.n_nodes == 4
        assert mesh.n_elements == 2
        assert mesh.boundary_mask.all()

    def test_out_of_range_element(self, tmp_path):
        doc = {"nodes": SQUARE_JSON["nodes"], "elements": [[0, 1, 99]]}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match="element 0 references node 99 of 4"):
            load_mesh(path)

    def test_repeated_vertex(self):
        with pytest.raises(ValidationError, match="repeated"):
            Mesh(np.array(SQUARE_JSON["nodes"]), np.array([[0, 1, 1]]))

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(FormatError, match="line 1"):
            load_mesh(path)

    def test_msh_json_equivalence(self, square2, tmp_path):
        save_mesh(square2, tmp_path / "m.json")
        save_mesh(square2, tmp_path / "m.msh")
        a = load_mesh(tmp_path / "m.json")
        b = load_mesh(tmp_path / "m.msh")
        assert a.structurally_equal(b)

    def test_json_round_trip_exact(self, tmp_path):
        mesh = perturb_nodes(generate_unit_square_mesh(0.3), 0.05, seed=9)
        mesh = mesh.with_field("u", np.sin(mesh.nodes[:, 0] * 7.3))
        save_mesh(mesh, tmp_path / "a.json")
        again = load_mesh(tmp_path / "a.json")
        assert mesh.structurally_equal(again)
        save_mesh(again, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_msh_skips_non_triangles(self, tmp_path, caplog):
        lines = [
            "$MeshFormat", "2.2 0 8", "$EndMeshFormat",
            "$Nodes", "4",
            "1 0 0 0", "2 1 0 0", "3 1 1 0", "4 0 1 0",
            "$EndNodes",
            "$Elements", "3",
            "1 1 2 0 0 1 2",        # 2-node line: skipped
            "2 2 2 0 0 1 2 3",
            "3 2 2 0 0 1 3 4",
            "$EndElements",
        ]
        path = tmp_path / "mixed.msh"
        path.write_text("\n".join(lines))
        mesh = load_mesh(path)
        assert mesh.n_elements == 2

    def test_msh_parse_error_names_line(self, tmp_path):
        lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", "1", "1 oops 0 0", "$EndNodes"]
        path = tmp_path / "broken.msh"
        path.write_text("\n".join(lines))
        with pytest.raises(FormatError, match="broken.msh:6"):
            load_mesh(path)

    def test_msh_wrong_version(self, tmp_path):
        path = tmp_path / "v4.msh"
        path.write_text("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n")
        with pytest.raises(FormatError, match="version"):
            load_mesh(path)


class TestGeometry:
    def test_signed_area_ccw(self):
        assert signed_area((0, 0), (1, 0), (0, 1)) == 0.5

    def test_signed_area_cw(self):
        assert signed_area((0, 0), (0, 1), (1, 0)) == -0.5

    def test_signed_area_collinear(self):
        assert signed_area((0, 0), (1, 1), (2, 2)) == 0.0

    @given(
        st.tuples(*[st.floats(-10, 10) for _ in range(6)]),
        st.floats(-5, 5),
        st.floats(-5, 5),
    )
    def test_signed_area_translation_invariant(self, coords, dx, dy):
        a, b, c = (coords[0], coords[1]), (coords[2], coords[3]), (coords[4], coords[5])
        shifted = [(p[0] + dx, p[1] + dy) for p in (a, b, c)]
        assert signed_area(*shifted) == pytest.approx(signed_area(a, b, c), abs=1e-9)

    @given(st.tuples(*[st.floats(-10, 10) for _ in range(6)]))
    def test_signed_area_swap_antisymmetric(self, coords):
        a, b, c = (coords[0], coords[1]), (coords[2], coords[3]), (coords[4], coords[5])
        assert signed_area(a, c, b) == -signed_area(a, b, c)

    def test_tangling_ratio_valid_mesh(self, coarse_mesh):
        assert tangling_ratio(coarse_mesh) == 0.0

    def test_tangling_ratio_counts_inverted(self):
        mesh = structured_unit_square_mesh(5)  # 50 elements
        elements = mesh.elements.copy()
        elements[[3, 17]] = elements[[3, 17]][:, [0, 2, 1]]
        tangled = Mesh(mesh.nodes, elements)
        assert tangling_ratio(tangled) == pytest.approx(2 / 50)

    def test_tangling_ratio_degenerate_counts(self):
        # 10-element soup with one collinear triangle
        nodes = [[0, 0], [1, 0], [2, 0], [0.5, 1], [1.5, 1], [2.5, 1], [3, 0], [3.5, 1], [4, 0], [4.5, 1], [5, 0], [5.5, 1], [0.25, 0.5]]
        elements = [[0, 1, 3], [1, 4, 3], [1, 2, 4], [2, 5, 4], [2, 6, 5], [6, 7, 5], [6, 8, 7], [8, 9, 7], [8, 10, 9], [0, 1, 2]]
        mesh = Mesh(np.array(nodes, dtype=float), np.array(elements))
        assert tangling_ratio(mesh) == pytest.approx(0.1)


class TestPatches:
    def test_interior_degree_six(self, grid8):
        node = int(grid8.interior_nodes[len(grid8.interior_nodes) // 2])
        patch = build_patch(grid8, node)
        assert len(patch.neighbors) == 6
        assert len(patch.incident_elements) == 6

    def test_corner_with_diagonal(self, square2):
        patch = build_patch(square2, 0)
        assert list(patch.neighbors) == [1, 2, 3]
        assert list(patch.incident_elements) == [0, 1]

    def test_corner_without_diagonal(self, square2):
        patch = build_patch(square2, 1)
        assert list(patch.neighbors) == [0, 2]
        assert list(patch.incident_elements) == [0]

    def test_neighbors_deduplicated(self, grid8):
        for node in grid8.interior_nodes[:10]:
            patch = build_patch(grid8, int(node))
            assert len(set(patch.neighbors.tolist())) == len(patch.neighbors)

    def test_isolated_node(self):
        mesh = Mesh(
            np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]]),
            np.array([[0, 1, 2]]),
        )
        with pytest.raises(TopologyError, match="node 3"):
            build_patch(mesh, 3)

    def test_star_edges_center_only(self, coarse_mesh):
        # exhaustive: star edges pair the center with a neighbour, never two
        # neighbours, and cover every neighbour exactly once
        for node in coarse_mesh.interior_nodes:
            patch = build_patch(coarse_mesh, int(node))
            nbs = set(patch.neighbors.tolist())
            edges = patch.star_edges
            assert len(edges) == len(nbs)
            for a, b in edges:
                assert a == patch.center
                assert b in nbs
                assert a not in nbs

    def test_normalize_basic(self):
        mesh = Mesh(
            np.array([[0.2, 0.2], [0.4, 0.2], [0.2, 0.6]]), np.array([[0, 1, 2]])
        )
        patch = build_patch(mesh, 0)
        coords = normalize_patch(patch, mesh)
        assert np.allclose(coords, [[0, 0], [1, 0], [0, 1]])

    def test_normalize_unit_square_identity(self, square2):
        patch = build_patch(square2, 0)
        coords = normalize_patch(patch, square2)
        assert np.allclose(coords, square2.nodes[patch.node_ids])

    def test_normalize_attains_bounds(self, coarse_mesh):
        for node in coarse_mesh.interior_nodes[::50]:
            patch = build_patch(coarse_mesh, int(node))
            coords = normalize_patch(patch, coarse_mesh)
            assert coords.min() >= 0.0 and coords.max() <= 1.0
            for axis in range(2):
                assert coords[:, axis].min() == 0.0
                assert coords[:, axis].max() == 1.0

    def test_degenerate_axis(self):
        mesh = Mesh(
            np.array([[0.5, 0.0], [0.5, 1.0], [0.5, 0.4]]), np.array([[0, 1, 2]])
        )
        patch = NodePatch(2, np.array([0, 1]), np.array([0]))
        coords = normalize_patch(patch, mesh)
        assert np.all(coords[:, 0] == 0.5)
        restored = denormalize_center(patch, np.array([0.5, 0.5]))
        assert restored[0] == 0.5
        assert restored[1] == pytest.approx(0.5)

    def test_denormalize_inverse(self):
        mesh = Mesh(
            np.array([[0.2, 0.2], [0.4, 0.2], [0.2, 0.6]]), np.array([[0, 1, 2]])
        )
        patch = build_patch(mesh, 0)
        normalize_patch(patch, mesh)
        assert np.allclose(denormalize_center(patch, np.array([0.0, 0.0])), [0.2, 0.2])

    def test_denormalize_requires_transform(self, square2):
        patch = build_patch(square2, 0)
        with pytest.raises(ValidationError):
            denormalize_center(patch, np.array([0.5, 0.5]))

    def test_round_trip_all_interior(self, coarse_mesh):
        for node in coarse_mesh.interior_nodes:
            patch = build_patch(coarse_mesh, int(node))
            coords = normalize_patch(patch, coarse_mesh)
            back = denormalize_center(patch, coords[0])
            ref = coarse_mesh.nodes[patch.center]
            assert np.abs(back - ref).max() <= 1e-12 * max(1.0, np.abs(ref).max())


class TestGeneration:
    @pytest.mark.parametrize("edge,target", [(0.04, 1478), (0.02, 5824)])
    def test_element_counts(self, edge, target):
        mesh = generate_unit_square_mesh(edge)
        assert abs(mesh.n_elements - target) <= 0.15 * target

    def test_small_mesh_valid(self):
        mesh = generate_unit_square_mesh(0.5)
        assert tangling_ratio(mesh) == 0.0
        assert mesh.areas().sum() == pytest.approx(1.0, abs=1e-10)

    def test_area_sums_to_one(self, coarse_mesh):
        assert coarse_mesh.areas().sum() == pytest.approx(1.0, abs=1e-10)

    def test_bad_edge_length(self):
        with pytest.raises(ValidationError):
            generate_unit_square_mesh(1.5)

    def test_structured_counts(self):
        mesh = structured_unit_square_mesh(8)
        assert mesh.n_nodes == 81
        assert mesh.n_elements == 128
        assert tangling_ratio(mesh) == 0.0


class TestPerturb:
    def test_zero_magnitude_identity(self, desk_mesh):
        out = perturb_nodes(desk_mesh, 0.0, seed=4)
        assert np.array_equal(out.nodes, desk_mesh.nodes)

    def test_deterministic(self, desk_mesh):
        a = perturb_nodes(desk_mesh, 0.02, seed=11)
        b = perturb_nodes(desk_mesh, 0.02, seed=11)
        assert np.array_equal(a.nodes, b.nodes)

    def test_result_valid(self, desk_mesh):
        out = perturb_nodes(desk_mesh, 0.3 * 0.1, seed=2)
        assert tangling_ratio(out) == 0.0
        assert np.array_equal(
            out.nodes[desk_mesh.boundary_mask], desk_mesh.nodes[desk_mesh.boundary_mask]
        )

    def test_impossible_raises(self):
        mesh = structured_unit_square_mesh(2)
        with pytest.raises(PerturbationError):
            perturb_nodes(mesh, 40.0, seed=0)
