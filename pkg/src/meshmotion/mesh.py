"""Triangle meshes for the channel-with-flag benchmark geometry.

Vertices are float64 arrays of shape (n, 2), cells are index triples into
the vertex array, and boundary edges carry integer markers (1 = outer
channel walls, 2 = cylinder, 3 = flag interface).  Meshes are value
objects: generate, load, deform and save all hand back new instances.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

# Geometric tolerance used when classifying generated boundary edges.
# Boundary points are constructed exactly on their curves, so any slack
# here only has to absorb rounding in distance evaluation.
_CLASSIFY_TOL = 1e-9


class MeshError(Exception):
    """Raised when a mesh violates a structural or geometric invariant."""


@dataclass(frozen=True)
class GeometryConfig:
    """Channel-with-cylinder-and-flag geometry (FSI benchmark proportions).

    Lengths are in the same unit as the mesh coordinates.  The cylinder is
    approximated by a polygon with ``cylinder_segments`` vertices on the
    full circle; the flag is a rectangle attached to the right of the
    cylinder, reaching from the circle to ``cylinder edge + flag_length``.
    """

    channel_length: float = 2.5
    channel_height: float = 0.41
    cylinder_center: tuple[float, float] = (0.2, 0.2)
    cylinder_radius: float = 0.05
    flag_length: float = 0.35
    flag_thickness: float = 0.02
    cylinder_segments: int = 64

    def validate(self) -> None:
        cx, cy = self.cylinder_center
        r = self.cylinder_radius
        ht = 0.5 * self.flag_thickness
        if r <= 0.0:
            raise MeshError("degenerate geometry: cylinder radius must be positive")
        if self.flag_thickness <= 0.0 or self.flag_length <= 0.0:
            raise MeshError("degenerate geometry: flag must have positive size")
        if ht >= r:
            raise MeshError("degenerate geometry: flag wider than cylinder")
        if not (r < cx < self.channel_length - r and r < cy < self.channel_height - r):
            raise MeshError("degenerate geometry: cylinder touching channel wall")
        if cx + r + self.flag_length >= self.channel_length:
            raise MeshError("degenerate geometry: flag reaches outflow wall")
        if cy + ht >= self.channel_height or cy - ht <= 0.0:
            raise MeshError("degenerate geometry: flag touching channel wall")
        if self.cylinder_segments < 8:
            raise MeshError("degenerate geometry: cylinder needs at least 8 segments")

    def flag_root_x(self) -> float:
        """x-coordinate where the flag's top/bottom faces meet the circle."""
        ht = 0.5 * self.flag_thickness
        return self.cylinder_center[0] + math.sqrt(self.cylinder_radius**2 - ht**2)

    def flag_tip_x(self) -> float:
        return self.cylinder_center[0] + self.cylinder_radius + self.flag_length

    def as_dict(self) -> dict:
        return {
            "channel_length": self.channel_length,
            "channel_height": self.channel_height,
            "cylinder_center": list(self.cylinder_center),
            "cylinder_radius": self.cylinder_radius,
            "flag_length": self.flag_length,
            "flag_thickness": self.flag_thickness,
            "cylinder_segments": self.cylinder_segments,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeometryConfig":
        d = dict(d)
        d["cylinder_center"] = tuple(d["cylinder_center"])
        return cls(**d)


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh with marked boundary edges.

    Attributes
    ----------
    vertices : (n, 2) float64 array
    cells : (m, 3) int64 array, counterclockwise vertex triples
    boundary_edges : (k, 3) int64 array of (i, j, marker)
    meta : dict of JSON-serializable annotations
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_edges: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _freeze(np.asarray(self.vertices, dtype=np.float64)))
        object.__setattr__(self, "cells", _freeze(np.asarray(self.cells, dtype=np.int64)))
        object.__setattr__(
            self, "boundary_edges", _freeze(np.asarray(self.boundary_edges, dtype=np.int64))
        )

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def boundary_vertices(self) -> np.ndarray:
        """Sorted indices of all vertices lying on a boundary edge."""
        if self.boundary_edges.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        return np.unique(self.boundary_edges[:, :2])

    def marker_vertices(self, marker: int) -> np.ndarray:
        """Sorted indices of vertices on boundary edges with the given marker."""
        sel = self.boundary_edges[self.boundary_edges[:, 2] == marker]
        if sel.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        return np.unique(sel[:, :2])

    def interior_vertices(self) -> np.ndarray:
        mask = np.ones(self.num_vertices, dtype=bool)
        mask[self.boundary_vertices()] = False
        return np.nonzero(mask)[0]

    def cell_areas(self) -> np.ndarray:
        """Signed triangle areas (positive for counterclockwise cells)."""
        p = self.vertices[self.cells]
        return _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]) * 0.5


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _cross2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """z-component of the cross product of stacked 2-vectors."""
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass
class NodalField:
    """Per-vertex coefficients of a P1 finite element function.

    ``values`` has shape (n,) for a scalar field and (n, components) for a
    vector field.  Serialization is component-major: all first-component
    values, then all second-component values.
    """

    components: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.components == 1:
            if self.values.ndim != 1:
                raise ValueError(f"scalar field needs 1-d values, got shape {self.values.shape}")
        elif self.values.ndim != 2 or self.values.shape[1] != self.components:
            raise ValueError(
                f"expected values of shape (n, {self.components}), got {self.values.shape}"
            )

    @property
    def num_vertices(self) -> int:
        return self.values.shape[0]

    def to_dict(self) -> dict:
        if self.components == 1:
            flat = self.values
        else:
            flat = self.values.T.reshape(-1)
        return {"components": self.components, "values": [float(v) for v in flat]}

    @classmethod
    def from_dict(cls, d: dict) -> "NodalField":
        c = int(d["components"])
        flat = np.asarray(d["values"], dtype=np.float64)
        if c == 1:
            return cls(1, flat)
        if flat.size % c != 0:
            raise ValueError("field value count is not a multiple of the component count")
        return cls(c, flat.reshape(c, -1).T.copy())

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NodalField":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class BoundaryDeformation:
    """Prescribed displacement 2-vectors keyed by boundary vertex index.

    Every boundary vertex of the target mesh must be present; vertices away
    from the flag interface conventionally carry zeros.
    """

    values: dict[int, np.ndarray]

    def __post_init__(self):
        self.values = {
            int(k): np.asarray(v, dtype=np.float64).reshape(2) for k, v in self.values.items()
        }

    @classmethod
    def zero(cls, mesh: Mesh) -> "BoundaryDeformation":
        return cls({int(i): np.zeros(2) for i in mesh.boundary_vertices()})

    @classmethod
    def from_flag_values(cls, mesh: Mesh, flag_values: dict[int, np.ndarray]) -> "BoundaryDeformation":
        """Zero everywhere on the boundary except the given flag vertices."""
        bd = cls.zero(mesh)
        flag_set = set(int(i) for i in mesh.marker_vertices(3))
        for k, v in flag_values.items():
            if int(k) not in flag_set:
                raise MeshError(f"vertex {k} is not on the flag interface")
            bd.values[int(k)] = np.asarray(v, dtype=np.float64).reshape(2)
        return bd

    def as_dense(self, mesh: Mesh) -> np.ndarray:
        """(n, 2) array with the prescribed values at boundary rows, zeros elsewhere."""
        out = np.zeros((mesh.num_vertices, 2))
        for i in mesh.boundary_vertices():
            try:
                out[i] = self.values[int(i)]
            except KeyError:
                raise MeshError(f"boundary deformation missing boundary vertex {i}") from None
        return out

    def to_dict(self) -> dict:
        return {
            "values": {str(k): [float(v[0]), float(v[1])] for k, v in sorted(self.values.items())}
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryDeformation":
        return cls({int(k): np.asarray(v, dtype=np.float64) for k, v in d["values"].items()})


# ---------------------------------------------------------------------------
# validation


def validate_mesh(mesh: Mesh) -> None:
    """Check structural invariants, raising MeshError on the first violation."""
    v, c, be = mesh.vertices, mesh.cells, mesh.boundary_edges
    if v.ndim != 2 or v.shape[1] != 2:
        raise MeshError(f"vertices must have shape (n, 2), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise MeshError("non-finite vertex coordinates")
    if c.ndim != 2 or c.shape[1] != 3:
        raise MeshError(f"cells must have shape (m, 3), got {c.shape}")
    n = v.shape[0]
    if c.size and (c.min() < 0 or c.max() >= n):
        raise MeshError("cell vertex index out of range")
    areas = mesh.cell_areas()
    bad = np.nonzero(areas <= 0.0)[0]
    if bad.size:
        i = int(bad[0])
        kind = "negative" if areas[i] < 0.0 else "zero"
        raise MeshError(f"{kind} cell area at cell {i} (area {areas[i]:g})")

    if be.ndim != 2 or be.shape[1] != 3:
        raise MeshError(f"boundary_edges must have shape (k, 3), got {be.shape}")
    if be.size and (be[:, :2].min() < 0 or be[:, :2].max() >= n):
        raise MeshError("boundary edge vertex index out of range")
    if be.size and be[:, 2].min() < 1:
        raise MeshError("boundary edge markers must be positive integers")

    counts = _edge_counts(c)
    listed = set()
    for i, j, _m in be:
        key = (min(i, j), max(i, j))
        if key in listed:
            raise MeshError(f"boundary edge ({i}, {j}) listed twice")
        listed.add(key)
        if counts.get(key, 0) != 1:
            raise MeshError(f"boundary edge ({i}, {j}) is not an edge of exactly one cell")
    for key, cnt in counts.items():
        if cnt > 2:
            raise MeshError(f"edge {key} shared by {cnt} cells (non-manifold)")
        if cnt == 1 and key not in listed:
            raise MeshError(f"cell edge {key} lies on the boundary but is not listed")

    _check_flag_polyline(be)


def _edge_counts(cells: np.ndarray) -> dict:
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in cells:
        for i, j in ((a, b), (b, c), (c, a)):
            key = (min(i, j), max(i, j))
            counts[key] = counts.get(key, 0) + 1
    return counts


def _check_flag_polyline(boundary_edges: np.ndarray) -> None:
    """Marker-3 edges must form one connected open polyline (if present)."""
    flag = boundary_edges[boundary_edges[:, 2] == 3][:, :2]
    if flag.shape[0] == 0:
        return
    deg: dict[int, int] = {}
    for i, j in flag:
        deg[int(i)] = deg.get(int(i), 0) + 1
        deg[int(j)] = deg.get(int(j), 0) + 1
    ends = [k for k, d in deg.items() if d == 1]
    if any(d > 2 for d in deg.values()) or len(ends) != 2:
        raise MeshError("marker-3 edges do not form a simple open polyline")
    if flag.shape[0] != len(deg) - 1:
        raise MeshError("marker-3 edges are not connected into a single polyline")
    # walk from one endpoint; must visit every flag edge
    adj: dict[int, list[int]] = {}
    for i, j in flag:
        adj.setdefault(int(i), []).append(int(j))
        adj.setdefault(int(j), []).append(int(i))
    seen = {ends[0]}
    cur, prev = ends[0], -1
    for _ in range(len(deg) - 1):
        nxt = [k for k in adj[cur] if k != prev]
        if not nxt:
            raise MeshError("marker-3 polyline is broken")
        prev, cur = cur, nxt[0]
        seen.add(cur)
    if len(seen) != len(deg):
        raise MeshError("marker-3 edges contain a disconnected component")


def flag_polyline(mesh: Mesh) -> np.ndarray:
    """Marker-3 vertex indices ordered along the flag from the lower root.

    The polyline starts at the endpoint with the smaller (y, x) coordinate
    pair, runs along the bottom face to the tip and returns along the top
    face, so position along the array is monotone in arc length.
    """
    flag = mesh.boundary_edges[mesh.boundary_edges[:, 2] == 3][:, :2]
    if flag.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    adj: dict[int, list[int]] = {}
    for i, j in flag:
        adj.setdefault(int(i), []).append(int(j))
        adj.setdefault(int(j), []).append(int(i))
    ends = [k for k, nb in adj.items() if len(nb) == 1]
    if len(ends) != 2:
        raise MeshError("marker-3 edges do not form a simple open polyline")
    start = min(ends, key=lambda k: (mesh.vertices[k, 1], mesh.vertices[k, 0]))
    order = [start]
    prev = -1
    while True:
        nxt = [k for k in adj[order[-1]] if k != prev]
        if not nxt:
            break
        prev = order[-1]
        order.append(nxt[0])
    return np.asarray(order, dtype=np.int64)


# ---------------------------------------------------------------------------
# serialization


def save_mesh(mesh: Mesh, path) -> None:
    doc = {
        "vertices": [[float(x), float(y)] for x, y in mesh.vertices],
        "cells": [[int(a), int(b), int(c)] for a, b, c in mesh.cells],
        "boundary_edges": [[int(i), int(j), int(m)] for i, j, m in mesh.boundary_edges],
        "meta": mesh.meta,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_mesh(path) -> Mesh:
    """Load a mesh from JSON and validate every structural invariant."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        mesh = Mesh(
            vertices=np.asarray(doc["vertices"], dtype=np.float64).reshape(-1, 2),
            cells=np.asarray(doc["cells"], dtype=np.int64).reshape(-1, 3),
            boundary_edges=np.asarray(doc["boundary_edges"], dtype=np.int64).reshape(-1, 3),
            meta=doc.get("meta", {}),
        )
    except (KeyError, ValueError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    validate_mesh(mesh)
    return mesh


def mesh_hash(mesh: Mesh) -> str:
    """SHA-256 over the geometric content (vertices, cells, boundary edges).

    The meta dict is deliberately excluded so that annotations do not
    change dataset/model compatibility.
    """
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(mesh.cells, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(mesh.boundary_edges, dtype=np.int64).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# deformation


def deform(mesh: Mesh, u: NodalField) -> Mesh:
    """Move every vertex by the displacement field u (x -> x + u(x)).

    The result intentionally skips validity checks: quality metrics need to
    look at tangled and inverted configurations too.
    """
    if u.components != 2:
        raise ValueError("deform needs a 2-component displacement field")
    if u.num_vertices != mesh.num_vertices:
        raise ValueError(
            f"field has {u.num_vertices} vertices, mesh has {mesh.num_vertices}"
        )
    return Mesh(
        vertices=mesh.vertices + u.values,
        cells=mesh.cells,
        boundary_edges=mesh.boundary_edges,
        meta=dict(mesh.meta),
    )


# ---------------------------------------------------------------------------
# generators


def unit_square_mesh(n: int = 4) -> Mesh:
    """Structured (n+1) x (n+1) triangulation of the unit square, marker 1."""
    if n < 1:
        raise MeshError("unit_square_mesh needs n >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    verts = np.array([[x, y] for y in xs for x in xs])
    cells = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10 = v00 + 1
            v01 = v00 + (n + 1)
            v11 = v01 + 1
            cells.append([v00, v10, v11])
            cells.append([v00, v11, v01])
    edges = []
    for i in range(n):
        edges.append([i, i + 1, 1])
        top = n * (n + 1)
        edges.append([top + i, top + i + 1, 1])
        edges.append([i * (n + 1), (i + 1) * (n + 1), 1])
        edges.append([i * (n + 1) + n, (i + 1) * (n + 1) + n, 1])
    mesh = Mesh(verts, np.asarray(cells), np.asarray(edges), meta={"generator": "unit_square"})
    validate_mesh(mesh)
    return mesh


def right_triangle_mesh() -> Mesh:
    """Single unit right triangle (0,0), (1,0), (0,1); all edges marker 1."""
    mesh = Mesh(
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        cells=np.array([[0, 1, 2]]),
        boundary_edges=np.array([[0, 1, 1], [1, 2, 1], [2, 0, 1]]),
        meta={"generator": "right_triangle"},
    )
    validate_mesh(mesh)
    return mesh


def _segment_points(p0, p1, spacing: float) -> np.ndarray:
    """Evenly spaced points along [p0, p1), excluding the endpoint."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    length = float(np.hypot(*(p1 - p0)))
    nseg = max(1, int(math.ceil(length / spacing - 1e-9)))
    t = np.arange(nseg, dtype=np.float64) / nseg
    return p0[None, :] + t[:, None] * (p1 - p0)[None, :]


def _point_segment_distance(pts: np.ndarray, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a[None, :] + t[:, None] * ab[None, :]
    return np.hypot(pts[:, 0] - proj[:, 0], pts[:, 1] - proj[:, 1])


def generate_channel_flag_mesh(
    geometry: GeometryConfig | None = None, target_edge_length: float = 0.05
) -> Mesh:
    """Triangulate the channel minus cylinder-plus-flag obstacle.

    Boundary curves are sampled first (walls at the target edge length, the
    flag fine enough to resolve its thickness, the cylinder by its polygon
    count), interior points are laid out on a hexagonal grid kept clear of
    the boundaries, and the point cloud is Delaunay-triangulated.  Triangles
    whose centroid falls inside the obstacle are dropped, and the remaining
    boundary edges are classified against the exact curves.  The result is
    validated before it is returned.

    Parameters
    ----------
    geometry : GeometryConfig, optional
        Geometry description; defaults to the FSI benchmark channel.
    target_edge_length : float
        Requested interior edge length.  Smaller values refine everywhere.

    Returns
    -------
    Mesh
        Validated mesh with markers 1 (walls), 2 (cylinder), 3 (flag).
    """
    geo = geometry if geometry is not None else GeometryConfig()
    geo.validate()
    h = float(target_edge_length)
    if not 0.0 < h <= 0.25:
        raise MeshError(f"target edge length {h} out of range (0, 0.25]")

    W, H = geo.channel_length, geo.channel_height
    cx, cy = geo.cylinder_center
    r = geo.cylinder_radius
    ht = 0.5 * geo.flag_thickness
    x_root = geo.flag_root_x()
    x_tip = geo.flag_tip_x()

    # --- boundary point loops -------------------------------------------
    corners = [(0.0, 0.0), (W, 0.0), (W, H), (0.0, H)]
    wall_pts = np.vstack(
        [_segment_points(corners[k], corners[(k + 1) % 4], h) for k in range(4)]
    )

    flag_spacing = min(h, 0.75 * geo.flag_thickness)
    root_bot = np.array([x_root, cy - ht])
    root_top = np.array([x_root, cy + ht])
    tip_bot = np.array([x_tip, cy - ht])
    tip_top = np.array([x_tip, cy + ht])
    loop = [
        _segment_points(root_bot, tip_bot, flag_spacing),
        _segment_points(tip_bot, tip_top, flag_spacing),
        _segment_points(tip_top, root_top, flag_spacing),
    ]
    # circular arc from the top root around the back to the bottom root
    a0 = math.atan2(ht, x_root - cx)
    a1 = 2.0 * math.pi - a0
    arc_frac = (a1 - a0) / (2.0 * math.pi)
    n_arc = max(8, int(math.ceil(geo.cylinder_segments * arc_frac)))
    angles = a0 + (a1 - a0) * np.arange(n_arc + 1) / n_arc
    arc = np.column_stack([cx + r * np.cos(angles), cy + r * np.sin(angles)])
    arc[0] = root_top
    arc[-1] = root_bot
    loop.append(arc[:-1])  # root_bot already opens the loop
    obstacle_pts = np.vstack(loop)

    # --- graded rings blending cylinder density into the bulk density ----
    def flag_box_distance(pts: np.ndarray) -> np.ndarray:
        dx = np.maximum(np.maximum(x_root - pts[:, 0], 0.0), pts[:, 0] - x_tip)
        dy = np.maximum(np.abs(pts[:, 1] - cy) - ht, 0.0)
        return np.hypot(dx, dy)

    s_c = 2.0 * math.pi * r / geo.cylinder_segments
    ring_pts = []
    rad, s, k = r, s_c, 0
    while s < 0.8 * h:
        s = min(1.45 * s, h)
        rad = rad + s
        count = max(8, int(math.ceil(2.0 * math.pi * rad / s)))
        ang = 2.0 * math.pi * (np.arange(count) + 0.5 * (k % 2)) / count
        ring = np.column_stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)])
        wall_clear = np.minimum.reduce(
            [ring[:, 0], W - ring[:, 0], ring[:, 1], H - ring[:, 1]]
        )
        ring = ring[(wall_clear >= 0.6 * s) & (flag_box_distance(ring) >= 0.6 * s)]
        ring_pts.append(ring)
        k += 1
    graded = np.vstack(ring_pts) if ring_pts else np.empty((0, 2))
    clear_radius = rad + 0.6 * h

    # --- bulk interior points on a hexagonal grid -------------------------
    margin = 0.6 * h
    row_step = h * math.sqrt(3.0) / 2.0
    rows = []
    j = 0
    y = margin
    while y <= H - margin + 1e-12:
        xoff = 0.0 if j % 2 == 0 else 0.5 * h
        x = margin + xoff
        row_x = np.arange(x, W - margin + 1e-12, h)
        rows.append(np.column_stack([row_x, np.full(row_x.size, y)]))
        j += 1
        y = margin + j * row_step
    interior = np.vstack(rows) if rows else np.empty((0, 2))
    keep = np.hypot(interior[:, 0] - cx, interior[:, 1] - cy) >= clear_radius
    interior = interior[keep & (flag_box_distance(interior) >= margin)]

    points = np.vstack([wall_pts, obstacle_pts, graded, interior])

    # --- triangulate and carve out the obstacle ---------------------------
    tri = Delaunay(points)
    cells = tri.simplices.astype(np.int64)
    cent = points[cells].mean(axis=1)
    inside_disk = np.hypot(cent[:, 0] - cx, cent[:, 1] - cy) < r - 1e-12
    inside_flag = (
        (cent[:, 0] > x_root - 1e-12)
        & (cent[:, 0] < x_tip + 1e-12)
        & (np.abs(cent[:, 1] - cy) < ht - 1e-12)
    )
    cells = cells[~(inside_disk | inside_flag)]
    if cells.shape[0] == 0:
        raise MeshError("triangulation produced no fluid cells")

    # drop unused points, re-index
    used = np.unique(cells)
    remap = -np.ones(points.shape[0], dtype=np.int64)
    remap[used] = np.arange(used.size)
    verts = points[used]
    cells = remap[cells]

    # orient counterclockwise
    p = verts[cells]
    areas = _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]) * 0.5
    flip = areas < 0.0
    cells[flip] = cells[flip][:, [0, 2, 1]]
    if np.any(np.abs(areas) < 1e-16):
        raise MeshError("triangulation produced a degenerate cell")

    boundary_edges = _classify_boundary(verts, cells, geo, x_root, x_tip)

    mesh = Mesh(
        vertices=verts,
        cells=cells,
        boundary_edges=boundary_edges,
        meta={
            "generator": "channel_flag",
            "geometry": geo.as_dict(),
            "target_edge_length": h,
        },
    )
    validate_mesh(mesh)
    meta = dict(mesh.meta)
    meta["sensor_count"] = int(mesh.marker_vertices(3).size)
    mesh = Mesh(mesh.vertices, mesh.cells, mesh.boundary_edges, meta)
    return mesh


def _classify_boundary(
    verts: np.ndarray, cells: np.ndarray, geo: GeometryConfig, x_root: float, x_tip: float
) -> np.ndarray:
    """Assign markers to the count-one edges of the carved triangulation."""
    W, H = geo.channel_length, geo.channel_height
    cx, cy = geo.cylinder_center
    ht = 0.5 * geo.flag_thickness
    counts = _edge_counts(cells)
    bdry = [key for key, cnt in counts.items() if cnt == 1]
    edges = []
    for i, j in bdry:
        mid = 0.5 * (verts[i] + verts[j])
        flag_dist = min(
            _point_segment_distance(mid[None, :], (x_root, cy - ht), (x_tip, cy - ht))[0],
            _point_segment_distance(mid[None, :], (x_tip, cy - ht), (x_tip, cy + ht))[0],
            _point_segment_distance(mid[None, :], (x_root, cy + ht), (x_tip, cy + ht))[0],
        )
        if flag_dist <= _CLASSIFY_TOL:
            marker = 3
        elif (
            abs(np.hypot(verts[i, 0] - cx, verts[i, 1] - cy) - geo.cylinder_radius)
            <= _CLASSIFY_TOL
            and abs(np.hypot(verts[j, 0] - cx, verts[j, 1] - cy) - geo.cylinder_radius)
            <= _CLASSIFY_TOL
        ):
            marker = 2
        elif (
            min(mid[0], W - mid[0], mid[1], H - mid[1]) <= _CLASSIFY_TOL
        ):
            marker = 1
        else:
            raise MeshError(
                f"boundary edge ({i}, {j}) at {mid} does not lie on any boundary curve"
            )
        edges.append([i, j, marker])
    return np.asarray(edges, dtype=np.int64)
