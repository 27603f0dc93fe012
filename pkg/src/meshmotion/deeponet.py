"""Deep operator network for mesh displacement, with hard boundary constraints.

A branch net digests boundary displacements sampled at the flag sensors, a
trunk net digests (normalized) spatial coordinates, and the displacement
is assembled from inner products of the two output vectors: the first p/2
channels form the x-component, the last p/2 the y-component.

The network output D never touches the boundary directly.  The corrected
operator U(g) = h(g) + l * D(g) combines the harmonic lift h (which carries
the boundary values exactly) with the mask l (which vanishes on the whole
boundary), so prescribed boundary displacements survive bit-exactly no
matter what the network does.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .mesh import BoundaryDeformation, Mesh, MeshError, NodalField, flag_polyline, mesh_hash
from .neural import MLP, init_mlp, forward_batch, load_checkpoint, mlp_to_dict, save_checkpoint


@dataclass
class SensorLayout:
    """Flag-interface sample points, ordered by arc length from the lower root."""

    vertex_indices: np.ndarray
    coordinates: np.ndarray
    arc_lengths: np.ndarray

    def __post_init__(self):
        self.vertex_indices = np.asarray(self.vertex_indices, dtype=np.int64)
        self.coordinates = np.asarray(self.coordinates, dtype=np.float64)
        self.arc_lengths = np.asarray(self.arc_lengths, dtype=np.float64)
        n = self.vertex_indices.size
        if self.coordinates.shape != (n, 2) or self.arc_lengths.shape != (n,):
            raise ValueError("sensor layout arrays disagree in length")

    @property
    def num_sensors(self) -> int:
        return int(self.vertex_indices.size)

    @property
    def encoding_dim(self) -> int:
        return 2 * self.num_sensors

    def to_dict(self) -> dict:
        return {
            "vertex_indices": [int(i) for i in self.vertex_indices],
            "coordinates": [[float(x), float(y)] for x, y in self.coordinates],
            "arc_lengths": [float(s) for s in self.arc_lengths],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorLayout":
        return cls(
            np.asarray(d["vertex_indices"], dtype=np.int64),
            np.asarray(d["coordinates"], dtype=np.float64),
            np.asarray(d["arc_lengths"], dtype=np.float64),
        )


def build_sensor_layout(mesh: Mesh) -> SensorLayout:
    """Sensors are the marker-3 vertices walked from the lower flag root."""
    order = flag_polyline(mesh)
    if order.size == 0:
        raise MeshError("mesh has no marker-3 edges to place sensors on")
    coords = mesh.vertices[order]
    seg = np.hypot(np.diff(coords[:, 0]), np.diff(coords[:, 1]))
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    return SensorLayout(order, coords, arc)


def encode_boundary(g: BoundaryDeformation, layout: SensorLayout) -> np.ndarray:
    """Branch input: (g_x, g_y) pairs at the sensors, in layout order."""
    enc = np.empty(layout.encoding_dim)
    for k, idx in enumerate(layout.vertex_indices):
        try:
            v = g.values[int(idx)]
        except KeyError:
            raise MeshError(f"boundary deformation missing sensor vertex {idx}") from None
        enc[2 * k] = v[0]
        enc[2 * k + 1] = v[1]
    return enc


@dataclass
class DeepONetModel:
    """Branch/trunk pair plus the sensor layout and coordinate normalization."""

    branch: MLP
    trunk: MLP
    layout: SensorLayout
    x_min: np.ndarray
    x_max: np.ndarray
    mesh_hash: str = ""
    seed: int | None = None

    def __post_init__(self):
        self.x_min = np.asarray(self.x_min, dtype=np.float64).reshape(2)
        self.x_max = np.asarray(self.x_max, dtype=np.float64).reshape(2)
        p = self.branch.out_dim
        if p != self.trunk.out_dim:
            raise ValueError("branch and trunk output sizes differ")
        if p % 2 != 0:
            raise ValueError(f"output size p = {p} must be even to split into 2 components")
        if self.trunk.in_dim != 2:
            raise ValueError("trunk must take 2-dimensional coordinates")
        if self.branch.in_dim != self.layout.encoding_dim:
            raise ValueError(
                f"branch input {self.branch.in_dim} does not match "
                f"sensor encoding {self.layout.encoding_dim}"
            )
        if np.any(self.x_max <= self.x_min):
            raise ValueError("normalization box must have positive extent")

    @property
    def p(self) -> int:
        return self.branch.out_dim

    def trunk_inputs(self, points: np.ndarray) -> np.ndarray:
        """Affine map of raw coordinates onto [-1, 1]^2."""
        pts = np.asarray(points, dtype=np.float64)
        return 2.0 * (pts - self.x_min) / (self.x_max - self.x_min) - 1.0

    def parameters(self) -> list:
        return self.branch.parameters() + self.trunk.parameters()


def init_deeponet(
    seed: int, arch: tuple, mesh: Mesh, activation: str = "tanh"
) -> DeepONetModel:
    """Fresh model for a mesh: arch = (L, width, p) shared by branch and trunk.

    The seed is split into independent branch and trunk streams, so a model
    seed reproduces both nets.  Trunk normalization is fitted to the mesh
    bounding box.
    """
    L, w, p = (int(a) for a in arch)
    if p % 2 != 0 or p < 2:
        raise ValueError(f"p = {p} must be a positive even number")
    layout = build_sensor_layout(mesh)
    ss = np.random.SeedSequence(int(seed))
    branch_ss, trunk_ss = ss.spawn(2)
    branch = init_mlp(branch_ss, (L, w, layout.encoding_dim, p), activation=activation)
    trunk = init_mlp(trunk_ss, (L, w, 2, p), activation=activation)
    branch.seed = int(seed)
    trunk.seed = int(seed)
    return DeepONetModel(
        branch=branch,
        trunk=trunk,
        layout=layout,
        x_min=mesh.vertices.min(axis=0),
        x_max=mesh.vertices.max(axis=0),
        mesh_hash=mesh_hash(mesh),
        seed=int(seed),
    )


def deeponet_eval(model: DeepONetModel, g_enc: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Unconstrained network displacement D(g) at the given raw coordinates.

    Each component is the inner product of one half of the branch output
    with the matching half of the trunk output.  The trunk is evaluated one
    point at a time so that a batch call equals the concatenation of
    single-point calls bit for bit; matrix-matrix kernels may otherwise
    round differently than their matrix-vector counterparts.
    """
    g_enc = np.asarray(g_enc, dtype=np.float64).reshape(-1)
    if g_enc.shape[0] != model.branch.in_dim:
        raise ValueError(
            f"encoded input has length {g_enc.shape[0]}, branch expects {model.branch.in_dim}"
        )
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    b_out, _ = forward_batch(model.branch, g_enc.reshape(1, -1))
    half = model.p // 2
    bx = b_out[0, :half]
    by = b_out[0, half:]
    trunk_in = model.trunk_inputs(pts)
    out = np.empty((pts.shape[0], 2), dtype=np.float64)
    for i in range(pts.shape[0]):
        t_row, _ = forward_batch(model.trunk, trunk_in[i : i + 1])
        out[i, 0] = t_row[0, :half] @ bx
        out[i, 1] = t_row[0, half:] @ by
    return out


def _locate_cells(mesh: Mesh, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Containing cell and barycentric coordinates for each query point."""
    centroids = mesh.vertices[mesh.cells].mean(axis=1)
    tree = cKDTree(centroids)
    k = min(32, mesh.num_cells)
    _, near = tree.query(pts, k=k)
    near = np.atleast_2d(near)
    cells = np.full(pts.shape[0], -1, dtype=np.int64)
    bary = np.zeros((pts.shape[0], 3))
    tol = 1e-12
    for i, x in enumerate(pts):
        candidates = list(near[i]) if k > 1 else [int(near[i])]
        found = False
        for c in candidates:
            lam = _barycentric(mesh, int(c), x)
            if lam.min() >= -tol:
                cells[i], bary[i] = int(c), lam
                found = True
                break
        if not found:  # fall back to an exhaustive scan
            for c in range(mesh.num_cells):
                lam = _barycentric(mesh, c, x)
                if lam.min() >= -tol:
                    cells[i], bary[i] = c, lam
                    found = True
                    break
        if not found:
            raise ValueError(f"point {x} lies outside the mesh")
    return cells, bary


def _barycentric(mesh: Mesh, cell: int, x: np.ndarray) -> np.ndarray:
    p = mesh.vertices[mesh.cells[cell]]
    T = np.array(
        [
            [p[0, 0] - p[2, 0], p[1, 0] - p[2, 0]],
            [p[0, 1] - p[2, 1], p[1, 1] - p[2, 1]],
        ]
    )
    det = T[0, 0] * T[1, 1] - T[0, 1] * T[1, 0]
    r = x - p[2]
    l0 = (T[1, 1] * r[0] - T[0, 1] * r[1]) / det
    l1 = (-T[1, 0] * r[0] + T[0, 0] * r[1]) / det
    return np.array([l0, l1, 1.0 - l0 - l1])


def corrected_eval(
    model: DeepONetModel,
    g: BoundaryDeformation,
    mesh: Mesh,
    h_field: NodalField,
    l_field: NodalField,
    points: np.ndarray | None = None,
):
    """Constrained displacement U(g) = h(g) + l * D(g).

    points = None evaluates at every mesh vertex and returns a NodalField;
    an integer array selects vertices; a float (m, 2) array evaluates at
    arbitrary coordinates with P1 interpolation of h and l.  On the
    boundary l vanishes and h carries g, so U(g) reproduces g bit-exactly.
    """
    if h_field.components != 2 or l_field.components != 1:
        raise ValueError("need a 2-component lift and a scalar mask")
    if h_field.num_vertices != mesh.num_vertices or l_field.num_vertices != mesh.num_vertices:
        raise ValueError("field sizes do not match the mesh")
    gd = g.as_dense(mesh)
    bidx = mesh.boundary_vertices()
    if not np.array_equal(h_field.values[bidx], gd[bidx]):
        raise ValueError("harmonic lift does not carry the boundary data of g")
    g_enc = encode_boundary(g, model.layout)

    if points is None:
        D = deeponet_eval(model, g_enc, mesh.vertices)
        U = h_field.values + l_field.values[:, None] * D
        return NodalField(2, U)

    pts = np.asarray(points)
    if pts.dtype.kind in "iu":
        idx = pts.reshape(-1)
        D = deeponet_eval(model, g_enc, mesh.vertices[idx])
        return h_field.values[idx] + l_field.values[idx, None] * D

    pts = pts.reshape(-1, 2).astype(np.float64)
    cells, bary = _locate_cells(mesh, pts)
    tri = mesh.cells[cells]
    h_at = np.einsum("mi,mic->mc", bary, h_field.values[tri])
    l_at = np.einsum("mi,mi->m", bary, l_field.values[tri])
    D = deeponet_eval(model, g_enc, pts)
    return h_at + l_at[:, None] * D


# ---------------------------------------------------------------------------
# model bundles


def save_model_bundle(model: DeepONetModel, path) -> None:
    """Write branch/trunk checkpoints, sensor layout and metadata to a directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model.branch, root / "branch.json")
    save_checkpoint(model.trunk, root / "trunk.json")
    (root / "sensors.json").write_text(json.dumps(model.layout.to_dict()), encoding="utf-8")
    meta = {
        "p": model.p,
        "output_components": 2,
        "activation": model.branch.activation,
        "seed": model.seed,
        "mesh_hash": model.mesh_hash,
        "normalization": {
            "x_min": [float(v) for v in model.x_min],
            "x_max": [float(v) for v in model.x_max],
        },
    }
    (root / "bundle.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")


def load_model_bundle(path) -> DeepONetModel:
    root = Path(path)
    meta = json.loads((root / "bundle.json").read_text(encoding="utf-8"))
    layout = SensorLayout.from_dict(
        json.loads((root / "sensors.json").read_text(encoding="utf-8"))
    )
    model = DeepONetModel(
        branch=load_checkpoint(root / "branch.json"),
        trunk=load_checkpoint(root / "trunk.json"),
        layout=layout,
        x_min=np.asarray(meta["normalization"]["x_min"]),
        x_max=np.asarray(meta["normalization"]["x_max"]),
        mesh_hash=meta["mesh_hash"],
        seed=meta.get("seed"),
    )
    if model.p != meta["p"]:
        raise ValueError("bundle metadata p disagrees with the checkpoints")
    return model
