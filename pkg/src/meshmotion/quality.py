"""Mesh quality metrics for deformed triangulations.

The scaled Jacobian used throughout is the triangle variant: 1 for an
equilateral triangle, 0 for a degenerate one, negative once a cell is
inverted.  Displacement validity is judged by the determinant of the
deformation gradient per cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, NodalField, deform

_SQRT3 = math.sqrt(3.0)


def scaled_jacobian(tri: np.ndarray) -> float:
    """Scaled Jacobian of a single triangle given as a (3, 2) array.

    q = (4 A / sqrt(3)) / max over vertices of the product of the two
    incident edge lengths, with A the signed area.  Invariant under rigid
    motions and uniform scaling; 1 exactly for equilateral triangles.
    """
    p = np.asarray(tri, dtype=np.float64)
    if p.shape != (3, 2):
        raise ValueError(f"expected a (3, 2) triangle, got shape {p.shape}")
    e01 = p[1] - p[0]
    e12 = p[2] - p[1]
    e20 = p[0] - p[2]
    l01 = math.hypot(e01[0], e01[1])
    l12 = math.hypot(e12[0], e12[1])
    l20 = math.hypot(e20[0], e20[1])
    area = 0.5 * (e01[0] * (-e20[1]) - e01[1] * (-e20[0]))
    corner = max(l01 * l20, l01 * l12, l12 * l20)
    if corner == 0.0:
        return 0.0
    return float(4.0 * area / (_SQRT3 * corner))


def _cell_scaled_jacobians(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p = vertices[cells]
    e01 = p[:, 1] - p[:, 0]
    e12 = p[:, 2] - p[:, 1]
    e20 = p[:, 0] - p[:, 2]
    l01 = np.hypot(e01[:, 0], e01[:, 1])
    l12 = np.hypot(e12[:, 0], e12[:, 1])
    l20 = np.hypot(e20[:, 0], e20[:, 1])
    area = 0.5 * (e01[:, 0] * -e20[:, 1] - e01[:, 1] * -e20[:, 0])
    corner = np.maximum.reduce([l01 * l20, l01 * l12, l12 * l20])
    out = np.zeros(cells.shape[0])
    ok = corner > 0.0
    out[ok] = 4.0 * area[ok] / (_SQRT3 * corner[ok])
    return out


def min_det_gradient(mesh: Mesh, u: NodalField) -> float:
    """Minimum over cells of det(I + grad u) for a P1 displacement field.

    Positive everywhere means the deformation x -> x + u(x) is locally
    orientation-preserving; zero or negative flags a collapsed or inverted
    cell.
    """
    if u.components != 2 or u.num_vertices != mesh.num_vertices:
        raise ValueError("min_det_gradient needs a matching 2-component field")
    p = mesh.vertices[mesh.cells]
    x, y = p[..., 0], p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    areas = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    grads = np.stack([b, c], axis=2) / (2.0 * areas)[:, None, None]
    uv = u.values[mesh.cells]  # (m, 3, 2)
    G = np.einsum("mia,mib->mab", uv, grads)
    det = (1.0 + G[:, 0, 0]) * (1.0 + G[:, 1, 1]) - G[:, 0, 1] * G[:, 1, 0]
    return float(det.min())


@dataclass
class QualityReport:
    """Per-cell scaled Jacobians of a deformed mesh plus the two minima."""

    scaled_jacobians: np.ndarray
    min_scaled_jacobian: float
    min_det_gradient: float


def quality_report(mesh: Mesh, u: NodalField) -> QualityReport:
    """Quality of the mesh deformed by u: per-cell scaled Jacobians and minima."""
    moved = deform(mesh, u)
    q = _cell_scaled_jacobians(moved.vertices, moved.cells)
    return QualityReport(
        scaled_jacobians=q,
        min_scaled_jacobian=float(q.min()),
        min_det_gradient=min_det_gradient(mesh, u),
    )


def histogram(values: np.ndarray, bin_edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Counts per bin, half-open [left, right) with the last bin closed.

    Values outside [edges[0], edges[-1]] are dropped, so the counts sum to
    the number of in-range values.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing with at least two entries")
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=edges)
    return counts.astype(np.int64), edges
