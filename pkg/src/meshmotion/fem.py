"""P1 finite elements for harmonic and biharmonic mesh extension.

Everything here is assembled by hand on linear triangles.  Sparse storage
and the direct factorization are delegated to scipy; Dirichlet conditions
are applied by symmetric elimination so that constrained entries carry the
prescribed values bit-exactly, never by penalty terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import BoundaryDeformation, Mesh, NodalField

_SPD_RESIDUAL_TOL = 1e-10
_MIXED_RESIDUAL_TOL = 1e-9


class SolverError(Exception):
    """Raised when a linear solve fails or violates its residual contract."""


@dataclass
class DirichletBC:
    """Scalar Dirichlet data: prescribed values at the given vertex indices."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.indices.shape != self.values.shape:
            raise ValueError("Dirichlet indices and values must have equal length")
        if np.unique(self.indices).size != self.indices.size:
            raise ValueError("Dirichlet indices must be unique")


def _p1_geometry(mesh: Mesh):
    """Per-cell areas and P1 basis gradients.

    Returns
    -------
    areas : (m,) positive triangle areas
    grads : (m, 3, 2) gradient of each barycentric basis function
    """
    p = mesh.vertices[mesh.cells]
    x, y = p[..., 0], p[..., 1]
    # b_i = y_j - y_k, c_i = x_k - x_j for (i, j, k) cyclic
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    areas = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    grads = np.stack([b, c], axis=2) / (2.0 * areas)[:, None, None]
    return areas, grads


def _scatter(mesh: Mesh, blocks: np.ndarray) -> sp.csr_matrix:
    """Sum (m, 3, 3) element blocks into a CSR matrix."""
    cells = mesh.cells
    rows = np.repeat(cells, 3, axis=1).reshape(-1)
    cols = np.tile(cells, (1, 3)).reshape(-1)
    n = mesh.num_vertices
    return sp.coo_matrix((blocks.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Stiffness matrix K_ij = integral of grad(phi_i) . grad(phi_j)."""
    areas, grads = _p1_geometry(mesh)
    blocks = np.einsum("mid,mjd->mij", grads, grads) * areas[:, None, None]
    return _scatter(mesh, blocks)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent mass matrix M_ij = integral of phi_i phi_j.

    On a triangle of area A the element block is A/12 * [[2,1,1],[1,2,1],[1,1,2]].
    """
    areas, _ = _p1_geometry(mesh)
    base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    blocks = base[None, :, :] * areas[:, None, None]
    return _scatter(mesh, blocks)


def _direct_solve(A: sp.spmatrix, b: np.ndarray, residual_tol: float, what: str) -> np.ndarray:
    try:
        lu = spla.splu(sp.csc_matrix(A))
        x = lu.solve(b)
    except RuntimeError as exc:  # SuperLU signals singular factors this way
        raise SolverError(f"{what}: direct factorization failed ({exc})") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError(f"{what}: non-finite solution entries")
    res = np.linalg.norm(A @ x - b)
    scale = max(1.0, float(np.linalg.norm(b)))
    if res > residual_tol * scale:
        raise SolverError(f"{what}: residual {res:.3e} exceeds {residual_tol:.1e} * {scale:.3e}")
    return x


def solve_spd(A: sp.spmatrix, b: np.ndarray, bc: DirichletBC | None = None) -> np.ndarray:
    """Solve A x = b with optional Dirichlet rows eliminated symmetrically.

    Constrained entries of the returned vector equal the prescribed values
    exactly.  A direct sparse factorization is used; the reduced residual
    is checked against a 1e-10 relative tolerance.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if bc is None or bc.indices.size == 0:
        return _direct_solve(A, b, _SPD_RESIDUAL_TOL, "solve_spd")
    mask = np.ones(n, dtype=bool)
    mask[bc.indices] = False
    free = np.nonzero(mask)[0]
    x = np.zeros(n)
    x[bc.indices] = bc.values
    A_csr = sp.csr_matrix(A)
    rhs = b[free] - A_csr[free, :][:, bc.indices] @ bc.values
    if free.size:
        A_ff = A_csr[free, :][:, free]
        x[free] = _direct_solve(A_ff, rhs, _SPD_RESIDUAL_TOL, "solve_spd")
    return x


# ---------------------------------------------------------------------------
# harmonic extension


class HarmonicOperator:
    """Componentwise harmonic extension of boundary data into the mesh.

    Factors the interior stiffness block once; apply() then costs two
    triangular solves per displacement component.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.K = assemble_stiffness(mesh)
        self.bidx = mesh.boundary_vertices()
        mask = np.ones(mesh.num_vertices, dtype=bool)
        mask[self.bidx] = False
        self.free = np.nonzero(mask)[0]
        K_csr = self.K
        self._K_fb = K_csr[self.free, :][:, self.bidx]
        self._K_ff = sp.csc_matrix(K_csr[self.free, :][:, self.free])
        self._lu = spla.splu(self._K_ff) if self.free.size else None

    def apply(self, g: BoundaryDeformation) -> NodalField:
        gd = g.as_dense(self.mesh)
        out = np.zeros((self.mesh.num_vertices, 2))
        out[self.bidx] = gd[self.bidx]
        for c in range(2):
            if self._lu is None:
                continue
            rhs = -self._K_fb @ gd[self.bidx, c]
            x = self._lu.solve(rhs)
            res = np.linalg.norm(self._K_ff @ x - rhs)
            if res > _SPD_RESIDUAL_TOL * max(1.0, float(np.linalg.norm(rhs))):
                raise SolverError(f"harmonic extension: residual {res:.3e} too large")
            out[self.free, c] = x
        return NodalField(2, out)


def harmonic_extension(mesh: Mesh, g: BoundaryDeformation) -> NodalField:
    """Solve -laplace(u) = 0 with u = g on the whole boundary, per component."""
    return HarmonicOperator(mesh).apply(g)


# ---------------------------------------------------------------------------
# biharmonic extension


class BiharmonicOperator:
    """Biharmonic extension via the mixed second-order splitting.

    With w = -laplace(u), the discrete problem reads

        M w - K u = 0      tested with every P1 function (this is where the
                           zero-normal-derivative condition enters naturally),
        K w       = 0      tested with interior P1 functions,
        u = g              imposed strongly on the boundary.

    The coupled indefinite system is factored once per mesh and reused for
    every right-hand side.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.K = assemble_stiffness(mesh)
        self.M = assemble_mass(mesh)
        self.bidx = mesh.boundary_vertices()
        mask = np.ones(mesh.num_vertices, dtype=bool)
        mask[self.bidx] = False
        self.interior = np.nonzero(mask)[0]
        K_csr = self.K
        self._K_b = K_csr[:, self.bidx]
        K_i = K_csr[:, self.interior]
        A = sp.bmat(
            [[self.M, -K_i], [K_i.T, None]],
            format="csc",
        )
        self._A = A
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            raise SolverError(f"biharmonic extension: singular mixed system ({exc})") from exc

    def apply(self, g: BoundaryDeformation) -> NodalField:
        mesh = self.mesh
        gd = g.as_dense(mesh)
        n = mesh.num_vertices
        out = np.zeros((n, 2))
        out[self.bidx] = gd[self.bidx]
        for c in range(2):
            rhs = np.concatenate([self._K_b @ gd[self.bidx, c], np.zeros(self.interior.size)])
            sol = self._lu.solve(rhs)
            if not np.all(np.isfinite(sol)):
                raise SolverError("biharmonic extension: non-finite solution")
            res = np.linalg.norm(self._A @ sol - rhs)
            if res > _MIXED_RESIDUAL_TOL * max(1.0, float(np.linalg.norm(rhs))):
                raise SolverError(f"biharmonic extension: residual {res:.3e} too large")
            out[self.interior, c] = sol[n:]
        return NodalField(2, out)


def biharmonic_extension(mesh: Mesh, g: BoundaryDeformation) -> NodalField:
    """Solve biharmonic(u) = 0 with u = g and zero normal derivative on the boundary."""
    return BiharmonicOperator(mesh).apply(g)


# ---------------------------------------------------------------------------
# boundary mask


def default_mask_source(points: np.ndarray) -> np.ndarray:
    """Source term 2(x+1)(1-x)exp(-3.5 x^7) + 0.1 in the first coordinate.

    Positive on the whole channel (the polynomial factor changes sign past
    x = 1 but is crushed by the exponential), which keeps the mask positive.
    """
    x = np.asarray(points)[:, 0]
    return 2.0 * (x + 1.0) * (1.0 - x) * np.exp(-3.5 * x**7) + 0.1


def mask_field(mesh: Mesh, source=None) -> NodalField:
    """Poisson-based mask: zero on the whole boundary, positive inside, max 1.

    Solves -laplace(l) = f with homogeneous Dirichlet data and scales the
    result by its maximum vertex value.  The default source is
    ``default_mask_source``; pass any callable mapping (n, 2) positions to
    (n,) values to reshape the mask profile.
    """
    f = source if source is not None else default_mask_source
    fv = np.asarray(f(mesh.vertices), dtype=np.float64)
    if fv.shape != (mesh.num_vertices,):
        raise ValueError("mask source must return one value per vertex")
    K = assemble_stiffness(mesh)
    M = assemble_mass(mesh)
    rhs = M @ fv
    bidx = mesh.boundary_vertices()
    bc = DirichletBC(bidx, np.zeros(bidx.size))
    raw = solve_spd(K, rhs, bc)
    top = float(raw.max())
    if top <= 0.0:
        raise SolverError("mask solve produced a non-positive maximum")
    scaled = raw / top
    interior = mesh.interior_vertices()
    if interior.size and float(scaled[interior].min()) <= 0.0:
        raise SolverError(
            "non-positive interior mask value (mesh or solver defect at vertex "
            f"{interior[np.argmin(scaled[interior])]})"
        )
    return NodalField(1, scaled)
