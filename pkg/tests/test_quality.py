"""Scaled Jacobian, deformation-gradient determinant and histograms."""

import math

import numpy as np
import pytest

from meshmotion.mesh import NodalField, right_triangle_mesh, unit_square_mesh
from meshmotion.quality import (
    histogram,
    min_det_gradient,
    quality_report,
    scaled_jacobian,
)

from .oracles import scaled_jacobian_reference

EQUILATERAL = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]])


def _random_rigid_motion(rng):
    theta = rng.uniform(0.0, 2.0 * math.pi)
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    t = rng.uniform(-5.0, 5.0, size=2)
    return R, t


class TestScaledJacobian:
    def test_equilateral_is_one(self):
        assert scaled_jacobian(EQUILATERAL) == pytest.approx(1.0, abs=1e-12)

    def test_collinear_is_zero(self):
        tri = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        assert scaled_jacobian(tri) == 0.0

    def test_coincident_points_guarded(self):
        tri = np.array([[0.3, 0.3], [0.3, 0.3], [0.3, 0.3]])
        assert scaled_jacobian(tri) == 0.0

    def test_right_isoceles_value(self):
        # area 1/2, worst corner product sqrt(2)*1 -> 4*(1/2)/(sqrt(3)*sqrt(2)) = 2/sqrt(6)
        tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        assert scaled_jacobian(tri) == pytest.approx(2.0 / math.sqrt(6.0), abs=1e-12)

    def test_inverted_is_negative(self):
        tri = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])  # clockwise
        assert scaled_jacobian(tri) < 0.0

    def test_matches_corner_angle_oracle(self):
        # The sine-rule route agrees with the area/edge-product formula on
        # positively oriented triangles (both reduce to the smallest corner
        # sine there); inverted cells are covered by the sign anchors.
        rng = np.random.Generator(np.random.Philox(21))
        checked = 0
        for _ in range(200):
            tri = rng.uniform(-1.0, 1.0, size=(3, 2))
            e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
            if e1[0] * e2[1] - e1[1] * e2[0] < 0.0:
                tri = tri[[0, 2, 1]]
            assert scaled_jacobian(tri) == pytest.approx(
                scaled_jacobian_reference(tri), abs=1e-12
            )
            checked += 1
        assert checked == 200

    def test_rigid_and_scale_invariance(self):
        rng = np.random.Generator(np.random.Philox(22))
        for _ in range(1000):
            tri = rng.uniform(-1.0, 1.0, size=(3, 2))
            q = scaled_jacobian(tri)
            R, t = _random_rigid_motion(rng)
            s = rng.uniform(0.1, 10.0)
            moved = s * (tri @ R.T) + t
            assert scaled_jacobian(moved) == pytest.approx(q, rel=1e-12, abs=1e-12)

    def test_never_exceeds_one(self):
        rng = np.random.Generator(np.random.Philox(23))
        for _ in range(1000):
            tri = rng.uniform(-1.0, 1.0, size=(3, 2))
            assert scaled_jacobian(tri) <= 1.0 + 1e-15

    def test_strictly_below_one_off_equilateral(self):
        rng = np.random.Generator(np.random.Philox(24))
        count = 0
        for _ in range(500):
            tri = rng.uniform(-1.0, 1.0, size=(3, 2))
            lengths = sorted(
                np.hypot(*(tri[(i + 1) % 3] - tri[i])) for i in range(3)
            )
            if lengths[0] == 0.0:
                continue
            if lengths[2] / lengths[0] > 1.0 + 1e-3:
                count += 1
                assert scaled_jacobian(tri) < 1.0 - 1e-9
        assert count > 400  # the property was actually exercised

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError, match=r"\(3, 2\)"):
            scaled_jacobian(np.zeros((4, 2)))


class TestMinDetGradient:
    def test_zero_displacement_gives_one(self):
        mesh = unit_square_mesh(3)
        u = NodalField(2, np.zeros((mesh.num_vertices, 2)))
        assert min_det_gradient(mesh, u) == pytest.approx(1.0, abs=1e-14)

    def test_uniform_stretch(self):
        # u = 0.1 * x stretches x by 1.1: det(diag(1.1, 1)) = 1.1 in every cell
        mesh = unit_square_mesh(3)
        u = NodalField(2, np.column_stack([0.1 * mesh.vertices[:, 0],
                                           np.zeros(mesh.num_vertices)]))
        assert min_det_gradient(mesh, u) == pytest.approx(1.1, abs=1e-12)

    def test_collapse_gives_nonpositive(self):
        mesh = right_triangle_mesh()
        u = NodalField(2, np.array([[0.0, 0.0], [-1.0, 0.0], [0.0, 0.0]]))
        assert min_det_gradient(mesh, u) <= 0.0

    def test_inversion_gives_negative(self):
        mesh = right_triangle_mesh()
        u = NodalField(2, np.array([[0.0, 0.0], [-2.0, 0.0], [0.0, 0.0]]))
        assert min_det_gradient(mesh, u) < 0.0

    def test_continuous_in_scale(self):
        mesh = unit_square_mesh(2)
        rng = np.random.Generator(np.random.Philox(31))
        du = rng.uniform(-0.05, 0.05, size=(mesh.num_vertices, 2))
        alphas = np.linspace(0.0, 1.0, 11)
        vals = [min_det_gradient(mesh, NodalField(2, a * du)) for a in alphas]
        assert vals[0] == pytest.approx(1.0, abs=1e-14)
        diffs = np.abs(np.diff(vals))
        assert diffs.max() < 0.2  # no jumps on a smooth path

    def test_sign_matches_deformed_area(self):
        # det of the deformation gradient and the deformed cell's scaled
        # Jacobian flip sign together
        from meshmotion.mesh import deform

        mesh = right_triangle_mesh()
        for ux in (-0.5, -1.0, -2.0):
            u = NodalField(2, np.array([[0.0, 0.0], [ux, 0.0], [0.0, 0.0]]))
            detj = min_det_gradient(mesh, u)
            moved = deform(mesh, u)
            q = scaled_jacobian(moved.vertices[moved.cells[0]])
            assert (detj > 0) == (q > 0) or detj == 0.0 or q == 0.0


class TestQualityReport:
    def test_zero_displacement_matches_undeformed(self):
        mesh = unit_square_mesh(3)
        u = NodalField(2, np.zeros((mesh.num_vertices, 2)))
        rep = quality_report(mesh, u)
        direct = [scaled_jacobian(mesh.vertices[c]) for c in mesh.cells]
        assert rep.scaled_jacobians == pytest.approx(direct, abs=1e-15)
        assert rep.min_scaled_jacobian == min(direct)

    def test_minima_match_array_folds(self):
        mesh = unit_square_mesh(3)
        rng = np.random.Generator(np.random.Philox(32))
        u = NodalField(2, rng.uniform(-0.05, 0.05, size=(mesh.num_vertices, 2)))
        rep = quality_report(mesh, u)
        assert rep.min_scaled_jacobian == rep.scaled_jacobians.min()
        assert rep.scaled_jacobians.shape == (mesh.num_cells,)
        assert rep.min_det_gradient == min_det_gradient(mesh, u)


class TestHistogram:
    def test_single_value(self):
        counts, _ = histogram(np.array([0.5]), np.array([0.0, 1.0]))
        assert counts.tolist() == [1]

    def test_right_edge_closed(self):
        counts, _ = histogram(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.5, 1.0]))
        assert counts.tolist() == [1, 2]

    def test_counts_sum_to_in_range(self):
        rng = np.random.Generator(np.random.Philox(33))
        values = rng.uniform(0.0, 1.0, size=1000)
        counts, _ = histogram(values, np.linspace(0.0, 1.0, 11))
        assert counts.sum() == 1000

    def test_out_of_range_dropped(self):
        counts, _ = histogram(np.array([-0.5, 0.5, 1.5]), np.array([0.0, 1.0]))
        assert counts.tolist() == [1]

    def test_bad_edges_rejected(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            histogram(np.array([0.5]), np.array([1.0, 0.0]))
        with pytest.raises(ValueError, match="strictly increasing"):
            histogram(np.array([0.5]), np.array([1.0]))
