"""Synthetic flag-deformation datasets with biharmonic supervision targets.

Two analytic families prescribe vertical offsets of the flag interface as
polynomial bending modes that vanish at the flag root:

* ``OscillationFamily`` sweeps one period of a two-mode flapping motion,
  standing in for snapshots of a coupled flow simulation;
* ``StressFamily`` bends the flag progressively further downward until the
  biharmonic extension of the largest level nearly degenerates, probing
  behaviour far outside the training distribution.

Both are fully deterministic: a dataset is reproduced bit-exactly from the
parameters stored in its manifest.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fem import BiharmonicOperator, HarmonicOperator
from .mesh import BoundaryDeformation, Mesh, MeshError, NodalField, mesh_hash
from .quality import quality_report
from .training import Snapshot

log = logging.getLogger(__name__)

_TAU = 2.0 * math.pi

#: Downward-bend scale mapping stress levels to midline deflections.  Frozen
#: by ``calibrate_stress_scale`` on the default channel-flag mesh at target
#: edge length 0.05 so that level 2.5 drives the biharmonic extension's
#: minimum scaled Jacobian to about 0.02 — near-degenerate but not inverted.
DEFAULT_STRESS_SCALE = 0.0503


def _reduce_phase(theta: float) -> float:
    """Map a phase onto [-pi, pi] so that theta and theta + 2*pi coincide.

    The IEEE remainder subtracts the nearest integer multiple of the float
    2*pi exactly, so phases whose difference is exactly that float reduce
    to the same representative and yield bit-identical deformations.
    """
    return math.remainder(float(theta), _TAU)


def flag_arc_positions(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Flag-interface vertex indices and their normalized arc positions.

    The position runs from 0 at the flag root (smallest interface x) to 1
    at the tip, measured along the horizontal midline axis.  Cross-sections
    of the flag share one position, so an offset family built on it moves
    each cross-section rigidly.
    """
    idx = mesh.marker_vertices(3)
    if idx.size == 0:
        raise MeshError("mesh has no flag-interface (marker 3) vertices")
    x = mesh.vertices[idx, 0]
    root = x.min()
    extent = x.max() - root
    if extent <= 0.0:
        raise MeshError("flag interface has zero horizontal extent")
    return idx, (x - root) / extent


def _vertical_offsets(mesh: Mesh, idx: np.ndarray, deltas: np.ndarray) -> BoundaryDeformation:
    vals = {int(i): np.array([0.0, float(d)]) for i, d in zip(idx, deltas)}
    return BoundaryDeformation.from_flag_values(mesh, vals)


@dataclass
class OscillationFamily:
    """One period of a two-mode analytic flapping motion of the flag.

    The midline deflection at normalized arc position s and phase theta is

        delta(s, theta) = amplitude  * sin(theta)             * s**2
                        + amplitude2 * sin(2*theta + phase2)  * s**3

    applied as a rigid vertical offset of each flag cross-section.  The
    quadratic/cubic modes vanish (with their value, not their slope) at the
    clamped root; the defaults keep the largest possible tip deflection at
    amplitude + amplitude2 = 0.08.  The phases are count equispaced samples
    of one period.  The default second-mode phase keeps every snapshot's
    deformation nonzero.

    When a snapshot's biharmonic extension tangles the mesh, its deflection
    is shrunk by retry_factor (at most max_retries times) before the
    snapshot is rejected.
    """

    count: int = 32
    amplitude: float = 0.07
    amplitude2: float = 0.01
    phase2: float = math.pi / 2.0
    retry_factor: float = 0.8
    max_retries: int = 8

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"snapshot count must be at least 1, got {self.count}")
        for name in ("amplitude", "amplitude2", "phase2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not 0.0 < self.retry_factor < 1.0:
            raise ValueError("retry factor must lie in (0, 1)")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    def phases(self) -> list:
        return [_reduce_phase(_TAU * k / self.count) for k in range(self.count)]

    def midline_deflection(self, s_hat: np.ndarray, theta: float) -> np.ndarray:
        t = _reduce_phase(theta)
        s_hat = np.asarray(s_hat, dtype=np.float64)
        return (
            self.amplitude * math.sin(t) * s_hat**2
            + self.amplitude2 * math.sin(2.0 * t + self.phase2) * s_hat**3
        )

    def boundary_deformation(self, mesh: Mesh, theta: float, scale: float = 1.0) -> BoundaryDeformation:
        idx, s_hat = flag_arc_positions(mesh)
        return _vertical_offsets(mesh, idx, scale * self.midline_deflection(s_hat, theta))

    def as_dict(self) -> dict:
        return {
            "kind": "oscillation",
            "count": self.count,
            "amplitude": self.amplitude,
            "amplitude2": self.amplitude2,
            "phase2": self.phase2,
            "retry_factor": self.retry_factor,
            "max_retries": self.max_retries,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OscillationFamily":
        if d.get("kind") != "oscillation":
            raise ValueError(f"not an oscillation family: {d.get('kind')!r}")
        return cls(**{k: v for k, v in d.items() if k != "kind"})


@dataclass
class StressFamily:
    """Progressive downward bending far beyond the oscillation amplitudes.

    Level f maps to the midline deflection delta(s) = -f * scale * s**2,
    the pure downward second-mode bend.  No quality filtering is applied:
    with the default scale the largest default level is meant to leave the
    biharmonic extension barely valid.
    """

    levels: tuple = (1.0, 2.0, 2.5)
    scale: float = DEFAULT_STRESS_SCALE

    def __post_init__(self):
        self.levels = tuple(float(f) for f in self.levels)
        if not self.levels:
            raise ValueError("stress family needs at least one level")
        if not all(math.isfinite(f) for f in self.levels):
            raise ValueError("stress levels must be finite")
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError("stress scale must be finite and positive")

    def midline_deflection(self, s_hat: np.ndarray, level: float) -> np.ndarray:
        s_hat = np.asarray(s_hat, dtype=np.float64)
        return -float(level) * self.scale * s_hat**2

    def boundary_deformation(self, mesh: Mesh, level: float) -> BoundaryDeformation:
        idx, s_hat = flag_arc_positions(mesh)
        return _vertical_offsets(mesh, idx, self.midline_deflection(s_hat, level))

    def as_dict(self) -> dict:
        return {"kind": "stress", "levels": list(self.levels), "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "StressFamily":
        if d.get("kind") != "stress":
            raise ValueError(f"not a stress family: {d.get('kind')!r}")
        return cls(levels=tuple(d["levels"]), scale=d["scale"])


@dataclass
class Dataset:
    """Snapshots plus the provenance needed to reproduce them."""

    snapshots: list
    mesh_hash: str
    family: dict

    def __len__(self) -> int:
        return len(self.snapshots)


def gen_oscillation_snapshots(mesh: Mesh, family: OscillationFamily | None = None) -> Dataset:
    """Supervised snapshots over one period of the oscillation family.

    Each phase sample contributes (g, u_bih, h): the prescribed boundary
    deformation, its biharmonic extension (the training target) and its
    harmonic extension (the lift reused by the constrained operator).
    Snapshots whose biharmonic extension tangles the mesh are retried at
    reduced deflection and rejected — with a warning — if the smallest
    allowed deflection still tangles it.
    """
    family = family if family is not None else OscillationFamily()
    har = HarmonicOperator(mesh)
    bih = BiharmonicOperator(mesh)
    snapshots = []
    for k, theta in enumerate(family.phases()):
        accepted = None
        scale = 1.0
        for attempt in range(family.max_retries + 1):
            g = family.boundary_deformation(mesh, theta, scale)
            u_bih = bih.apply(g)
            if quality_report(mesh, u_bih).min_scaled_jacobian > 0.0:
                accepted = (g, u_bih)
                break
            log.warning(
                "snapshot %d: biharmonic extension tangles the mesh at "
                "deflection scale %.4g, retrying smaller", k, scale,
            )
            scale *= family.retry_factor
        if accepted is None:
            log.warning(
                "snapshot %d rejected: still tangled after %d retries", k, family.max_retries
            )
            continue
        g, u_bih = accepted
        snapshots.append(Snapshot(k=k, g=g, u_bih=u_bih, h=har.apply(g)))
    return Dataset(snapshots=snapshots, mesh_hash=mesh_hash(mesh), family=family.as_dict())


def gen_stress_snapshots(mesh: Mesh, levels=(1.0, 2.0, 2.5), scale: float | None = None) -> Dataset:
    """Stress snapshots at the given bending levels, no quality filtering.

    The manifest's family block records, per level, the peak boundary
    deflection and the biharmonic extension's minimum scaled Jacobian, so
    near-degeneracy of the top level is documented alongside the data.
    """
    family = StressFamily(levels=tuple(levels), scale=DEFAULT_STRESS_SCALE if scale is None else scale)
    har = HarmonicOperator(mesh)
    bih = BiharmonicOperator(mesh)
    snapshots = []
    peak_g = []
    min_sj = []
    for k, level in enumerate(family.levels):
        g = family.boundary_deformation(mesh, level)
        u_bih = bih.apply(g)
        snapshots.append(Snapshot(k=k, g=g, u_bih=u_bih, h=har.apply(g)))
        peak_g.append(max(float(np.hypot(*v)) for v in g.values.values()))
        min_sj.append(quality_report(mesh, u_bih).min_scaled_jacobian)
    meta = family.as_dict()
    meta["peak_deflection"] = peak_g
    meta["biharmonic_min_scaled_jacobian"] = min_sj
    return Dataset(snapshots=snapshots, mesh_hash=mesh_hash(mesh), family=meta)


def calibrate_stress_scale(mesh: Mesh, level: float = 2.5, target: float = 0.02,
                           iterations: int = 60) -> float:
    """Bisect the bending scale until the biharmonic extension's minimum
    scaled Jacobian at the given level hits the target.

    Used once, offline, to freeze ``DEFAULT_STRESS_SCALE``; quality is
    monotone in the scale over the bracketed range.
    """
    bih = BiharmonicOperator(mesh)
    idx, s_hat = flag_arc_positions(mesh)

    def min_sj(scale: float) -> float:
        g = _vertical_offsets(mesh, idx, -level * scale * s_hat**2)
        return quality_report(mesh, bih.apply(g)).min_scaled_jacobian

    lo, hi = 0.0, 0.05
    while min_sj(hi) > target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e3:
            raise ValueError("could not bracket the target quality")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if min_sj(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# persistence


def save_dataset(ds: Dataset, path) -> None:
    """Write a dataset directory: dataset.json manifest plus field files."""
    root = Path(path)
    (root / "fields").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in ds.snapshots:
        names = {
            "g": f"fields/g_{s.k:03d}.json",
            "u_bih": f"fields/u_bih_{s.k:03d}.json",
            "h": f"fields/h_{s.k:03d}.json",
        }
        (root / names["g"]).write_text(json.dumps(s.g.to_dict()), encoding="utf-8")
        (root / names["u_bih"]).write_text(json.dumps(s.u_bih.to_dict()), encoding="utf-8")
        (root / names["h"]).write_text(json.dumps(s.h.to_dict()), encoding="utf-8")
        entries.append({"k": s.k, **names})
    manifest = {"mesh_hash": ds.mesh_hash, "family": ds.family, "snapshots": entries}
    (root / "dataset.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def load_dataset(path, mesh: Mesh | None = None) -> Dataset:
    """Read a dataset directory back; verifies the mesh hash when one is given."""
    root = Path(path)
    manifest = json.loads((root / "dataset.json").read_text(encoding="utf-8"))
    if mesh is not None and mesh_hash(mesh) != manifest["mesh_hash"]:
        raise MeshError(
            "mesh hash mismatch: dataset was generated on "
            f"{manifest['mesh_hash'][:12]}..., given {mesh_hash(mesh)[:12]}..."
        )
    snapshots = []
    for e in manifest["snapshots"]:
        snapshots.append(
            Snapshot(
                k=int(e["k"]),
                g=BoundaryDeformation.from_dict(
                    json.loads((root / e["g"]).read_text(encoding="utf-8"))
                ),
                u_bih=NodalField.load(root / e["u_bih"]),
                h=NodalField.load(root / e["h"]),
            )
        )
    return Dataset(snapshots=snapshots, mesh_hash=manifest["mesh_hash"], family=manifest["family"])
