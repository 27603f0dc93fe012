"""Mesh construction, validation, serialization and deformation."""

import json
from pathlib import Path

import numpy as np
import pytest

from meshmotion.mesh import (
    BoundaryDeformation,
    GeometryConfig,
    Mesh,
    MeshError,
    NodalField,
    deform,
    flag_polyline,
    generate_channel_flag_mesh,
    load_mesh,
    mesh_hash,
    right_triangle_mesh,
    save_mesh,
    unit_square_mesh,
    validate_mesh,
)

FIXTURE = Path(__file__).parent / "fixtures" / "channel_flag.json"


def _write_mesh_doc(tmp_path, doc):
    path = tmp_path / "mesh.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def _single_triangle_doc(cells):
    return {
        "vertices": [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        "cells": cells,
        "boundary_edges": [[0, 1, 1], [1, 2, 1], [2, 0, 1]],
        "meta": {},
    }


class TestLoadMesh:
    def test_smallest_valid_mesh(self, tmp_path):
        path = _write_mesh_doc(tmp_path, _single_triangle_doc([[0, 1, 2]]))
        mesh = load_mesh(path)
        assert mesh.num_cells == 1
        assert mesh.num_vertices == 3
        assert mesh.boundary_edges.shape == (3, 3)

    def test_clockwise_cell_rejected(self, tmp_path):
        path = _write_mesh_doc(tmp_path, _single_triangle_doc([[0, 2, 1]]))
        with pytest.raises(MeshError, match="negative cell area at cell 0"):
            load_mesh(path)

    def test_fixture_sensor_count_matches_header(self):
        mesh = load_mesh(FIXTURE)
        assert mesh.meta["sensor_count"] == mesh.marker_vertices(3).size

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text(json.dumps({"vertices": [[0, 0]]}), encoding="utf-8")
        with pytest.raises(MeshError, match="malformed"):
            load_mesh(path)

    def test_out_of_range_cell_index(self, tmp_path):
        doc = _single_triangle_doc([[0, 1, 7]])
        path = _write_mesh_doc(tmp_path, doc)
        with pytest.raises(MeshError, match="out of range"):
            load_mesh(path)


class TestValidateMesh:
    def test_boundary_edge_listed_twice(self):
        mesh = Mesh(
            vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
            cells=np.array([[0, 1, 2]]),
            boundary_edges=np.array([[0, 1, 1], [1, 0, 1], [1, 2, 1], [2, 0, 1]]),
        )
        with pytest.raises(MeshError, match="listed twice"):
            validate_mesh(mesh)

    def test_missing_boundary_edge(self):
        mesh = Mesh(
            vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
            cells=np.array([[0, 1, 2]]),
            boundary_edges=np.array([[0, 1, 1], [1, 2, 1]]),
        )
        with pytest.raises(MeshError, match="not listed"):
            validate_mesh(mesh)

    def test_disconnected_flag_interface(self):
        # 2x2 square grid with two marker-3 edges that do not touch
        mesh = unit_square_mesh(2)
        be = mesh.boundary_edges.copy()
        be[0, 2] = 3
        be[3, 2] = 3  # a far-away edge on another side
        broken = Mesh(mesh.vertices, mesh.cells, be)
        with pytest.raises(MeshError, match="polyline"):
            validate_mesh(broken)


class TestGenerateChannelFlagMesh:
    def test_flag_vertices_on_outline(self):
        mesh = load_mesh(FIXTURE)  # generated with the default geometry at 0.05
        geo = GeometryConfig.from_dict(mesh.meta["geometry"])
        x_root, x_tip = geo.flag_root_x(), geo.flag_tip_x()
        cy = geo.cylinder_center[1]
        ht = 0.5 * geo.flag_thickness
        for i in mesh.marker_vertices(3):
            x, y = mesh.vertices[i]
            on_face = abs(abs(y - cy) - ht) <= 1e-12 and x_root - 1e-12 <= x <= x_tip + 1e-12
            on_tip = abs(x - x_tip) <= 1e-12 and abs(y - cy) <= ht + 1e-12
            assert on_face or on_tip, f"vertex {i} at ({x}, {y}) off the flag outline"

    def test_refinement_increases_vertex_count(self):
        coarse = generate_channel_flag_mesh(target_edge_length=0.1)
        fine = generate_channel_flag_mesh(target_edge_length=0.06)
        assert fine.num_vertices > coarse.num_vertices

    def test_degenerate_geometry_rejected(self):
        with pytest.raises(MeshError, match="degenerate geometry"):
            generate_channel_flag_mesh(GeometryConfig(cylinder_radius=0.0))

    def test_flag_wider_than_cylinder_rejected(self):
        with pytest.raises(MeshError, match="degenerate geometry"):
            GeometryConfig(flag_thickness=0.2).validate()

    def test_determinism(self):
        a = generate_channel_flag_mesh(target_edge_length=0.1)
        b = generate_channel_flag_mesh(target_edge_length=0.1)
        assert mesh_hash(a) == mesh_hash(b)

    def test_markers_cover_expected_curves(self):
        mesh = load_mesh(FIXTURE)
        markers = set(int(m) for m in mesh.boundary_edges[:, 2])
        assert markers == {1, 2, 3}


class TestDeform:
    def test_zero_field_is_identity(self):
        mesh = unit_square_mesh(3)
        u = NodalField(2, np.zeros((mesh.num_vertices, 2)))
        moved = deform(mesh, u)
        assert np.array_equal(moved.vertices, mesh.vertices)

    def test_rigid_translation(self):
        mesh = unit_square_mesh(3)
        u = NodalField(2, np.tile([0.1, 0.0], (mesh.num_vertices, 1)))
        moved = deform(mesh, u)
        assert np.array_equal(moved.vertices, mesh.vertices + [0.1, 0.0])

    def test_collapsing_field_flags_in_quality(self):
        from meshmotion.quality import min_det_gradient

        mesh = right_triangle_mesh()
        u = NodalField(2, np.array([[0.0, 0.0], [-1.0, 0.0], [0.0, 0.0]]))
        moved = deform(mesh, u)  # vertex 1 lands on vertex 0
        assert moved is not None
        assert min_det_gradient(mesh, u) <= 0.0

    def test_wrong_component_count(self):
        mesh = right_triangle_mesh()
        with pytest.raises(ValueError, match="2-component"):
            deform(mesh, NodalField(1, np.zeros(mesh.num_vertices)))

    def test_composition_is_vertex_arithmetic(self):
        mesh = unit_square_mesh(2)
        rng = np.random.Generator(np.random.Philox(7))
        u = NodalField(2, 0.01 * rng.standard_normal((mesh.num_vertices, 2)))
        v = NodalField(2, 0.01 * rng.standard_normal((mesh.num_vertices, 2)))
        once = deform(deform(mesh, u), v)
        combined = deform(mesh, NodalField(2, u.values + v.values))
        assert np.allclose(once.vertices, combined.vertices, atol=1e-15)


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        mesh = load_mesh(FIXTURE)
        path = tmp_path / "copy.json"
        save_mesh(mesh, path)
        again = load_mesh(path)
        assert np.array_equal(again.vertices, mesh.vertices)
        assert np.array_equal(again.cells, mesh.cells)
        assert np.array_equal(again.boundary_edges, mesh.boundary_edges)
        assert mesh_hash(again) == mesh_hash(mesh)

    def test_hash_ignores_meta(self):
        mesh = unit_square_mesh(2)
        other = Mesh(mesh.vertices, mesh.cells, mesh.boundary_edges, meta={"note": "x"})
        assert mesh_hash(mesh) == mesh_hash(other)

    def test_hash_sees_geometry(self):
        a = unit_square_mesh(2)
        moved = Mesh(a.vertices + 1e-12, a.cells, a.boundary_edges)
        assert mesh_hash(a) != mesh_hash(moved)


class TestNodalField:
    def test_component_major_serialization(self):
        f = NodalField(2, np.array([[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]]))
        assert f.to_dict()["values"] == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]

    def test_round_trip(self, tmp_path):
        rng = np.random.Generator(np.random.Philox(3))
        f = NodalField(2, rng.standard_normal((5, 2)))
        path = tmp_path / "f.json"
        f.save(path)
        g = NodalField.load(path)
        assert g.components == 2
        assert np.array_equal(g.values, f.values)

    def test_scalar_shape_enforced(self):
        with pytest.raises(ValueError):
            NodalField(1, np.zeros((4, 2)))
        with pytest.raises(ValueError):
            NodalField(2, np.zeros(4))


class TestBoundaryDeformation:
    def test_zero_covers_boundary(self):
        mesh = unit_square_mesh(3)
        g = BoundaryDeformation.zero(mesh)
        dense = g.as_dense(mesh)
        assert dense.shape == (mesh.num_vertices, 2)
        assert not dense.any()

    def test_from_flag_values_rejects_off_flag_vertex(self):
        mesh = load_mesh(FIXTURE)
        wall_vertex = int(mesh.marker_vertices(1)[0])
        with pytest.raises(MeshError, match="not on the flag interface"):
            BoundaryDeformation.from_flag_values(mesh, {wall_vertex: np.array([0.0, 0.1])})

    def test_missing_boundary_vertex_reported(self):
        mesh = unit_square_mesh(2)
        g = BoundaryDeformation.zero(mesh)
        del g.values[int(mesh.boundary_vertices()[0])]
        with pytest.raises(MeshError, match="missing boundary vertex"):
            g.as_dense(mesh)

    def test_round_trip(self):
        mesh = unit_square_mesh(2)
        g = BoundaryDeformation.zero(mesh)
        again = BoundaryDeformation.from_dict(g.to_dict())
        assert set(again.values) == set(g.values)


class TestFlagPolyline:
    def test_orders_by_arc_length(self):
        mesh = load_mesh(FIXTURE)
        order = flag_polyline(mesh)
        assert sorted(order) == sorted(mesh.marker_vertices(3))
        coords = mesh.vertices[order]
        seg = np.hypot(np.diff(coords[:, 0]), np.diff(coords[:, 1]))
        assert np.all(seg > 0.0)
        # starts at the lower root corner: smallest y among the two endpoints
        assert coords[0, 1] < coords[-1, 1]

    def test_empty_without_marker3(self):
        mesh = unit_square_mesh(2)
        assert flag_polyline(mesh).size == 0
