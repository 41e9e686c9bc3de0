"""Uniform Cartesian Q1 finite elements on the unit square.

Node numbering is lexicographic, x fastest: node (i, j) has id ``j * (n + 1) + i``.
Cell (ci, cj) has corners ordered counter-clockwise from its lower-left node:
(ci, cj), (ci + 1, cj), (ci + 1, cj + 1), (ci, cj + 1).

Every operator and vector is built in a *frame*: a cell-aligned rectangle whose
nodes are numbered lexicographically on their own. The global problem uses the
full mesh as frame, a local problem uses its oversampling box.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from functools import cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu

from msgfem.errors import ConfigError, NumericalError

log = logging.getLogger(__name__)

SourceFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Element matrices of the unit square; stiffness is scale-free in 2D, mass scales with h².
Q1_STIFFNESS = (
    np.array(
        [
            [4.0, -1.0, -2.0, -1.0],
            [-1.0, 4.0, -1.0, -2.0],
            [-2.0, -1.0, 4.0, -1.0],
            [-1.0, -2.0, -1.0, 4.0],
        ]
    )
    / 6.0
)
Q1_MASS = (
    np.array(
        [
            [4.0, 2.0, 1.0, 2.0],
            [2.0, 4.0, 2.0, 1.0],
            [1.0, 2.0, 4.0, 2.0],
            [2.0, 1.0, 2.0, 4.0],
        ]
    )
    / 36.0
)

SOLVE_RTOL = 1e-10
CG_RTOL = 1e-12
SYMMETRY_RTOL = 1e-12


class InvalidMeshError(ConfigError):
    """Raised for meshes the structured grid can't represent (fewer than 2 cells per axis)."""


class CoefficientBoundError(ConfigError):
    """Raised when a diffusion value is not a positive finite number."""


class NotSPDError(NumericalError):
    """Raised when a factorization meets a nonpositive pivot: the operator is not SPD."""


class SolverError(NumericalError):
    """Raised when a solve fails to converge or its solution has too large a backward error."""


@dataclass(frozen=True)
class Box:
    """Half-open rectangle of cells ``[i0, i1) x [j0, j1)``; its closure owns nodes i0..i1, j0..j1."""

    i0: int
    i1: int
    j0: int
    j1: int

    @property
    def cells_x(self) -> int:
        return self.i1 - self.i0

    @property
    def cells_y(self) -> int:
        return self.j1 - self.j0

    @property
    def num_cells(self) -> int:
        return self.cells_x * self.cells_y

    @property
    def num_nodes(self) -> int:
        return (self.cells_x + 1) * (self.cells_y + 1)

    def grow(self, layers: int, n: int) -> Box:
        """Extend by `layers` cells on every side, clipped to the mesh."""
        return Box(
            max(self.i0 - layers, 0),
            min(self.i1 + layers, n),
            max(self.j0 - layers, 0),
            min(self.j1 + layers, n),
        )

    def contains(self, other: Box) -> bool:
        return self.i0 <= other.i0 and other.i1 <= self.i1 and self.j0 <= other.j0 and other.j1 <= self.j1

    def node_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Global (i, j) grid indices of this box's nodes, in the box's own lexicographic order."""
        jj, ii = np.meshgrid(np.arange(self.j0, self.j1 + 1), np.arange(self.i0, self.i1 + 1), indexing="ij")
        return ii.ravel(), jj.ravel()

    def node_ids(self, mesh: StructuredMesh) -> np.ndarray:
        ii, jj = self.node_indices()
        return jj * (mesh.n + 1) + ii

    def nodes_in(self, frame: Box) -> np.ndarray:
        """Positions of this box's nodes within `frame`'s node numbering."""
        ii, jj = self.node_indices()
        return (jj - frame.j0) * (frame.cells_x + 1) + (ii - frame.i0)

    def cell_indices(self) -> tuple[np.ndarray, np.ndarray]:
        cj, ci = np.meshgrid(np.arange(self.j0, self.j1), np.arange(self.i0, self.i1), indexing="ij")
        return ci.ravel(), cj.ravel()


@dataclass(frozen=True)
class StructuredMesh:
    """Uniform n x n grid of square Q1 cells on the unit square."""

    n: int

    @property
    def nx(self) -> int:
        return self.n

    @property
    def ny(self) -> int:
        return self.n

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def num_nodes(self) -> int:
        return (self.n + 1) ** 2

    @property
    def num_cells(self) -> int:
        return self.n * self.n

    @property
    def box(self) -> Box:
        return Box(0, self.n, 0, self.n)

    def node_coords(self, frame: Box | None = None) -> tuple[np.ndarray, np.ndarray]:
        ii, jj = (frame or self.box).node_indices()
        return ii * self.h, jj * self.h

    def boundary_mask(self, frame: Box | None = None) -> np.ndarray:
        """True for nodes of `frame` lying on the outer boundary of the unit square."""
        ii, jj = (frame or self.box).node_indices()
        return (ii == 0) | (ii == self.n) | (jj == 0) | (jj == self.n)


@dataclass(frozen=True)
class DofSet:
    """Free/constrained split of a frame's nodes; constrained values are zero."""

    num_nodes: int
    free: np.ndarray
    constrained: np.ndarray

    @classmethod
    def from_constrained_mask(cls, mask: np.ndarray) -> DofSet:
        return cls(num_nodes=mask.size, free=np.flatnonzero(~mask), constrained=np.flatnonzero(mask))

    def extend(self, values: np.ndarray) -> np.ndarray:
        """Scatter free-dof values (vector or column block) into a full frame array, zero elsewhere."""
        full = np.zeros((self.num_nodes,) + values.shape[1:])
        full[self.free] = values
        return full


def build_mesh(n: int) -> StructuredMesh:
    if int(n) != n or n < 2:
        raise InvalidMeshError(f"a structured mesh needs at least 2 cells per axis, got n={n}")
    return StructuredMesh(int(n))


def global_dofs(mesh: StructuredMesh) -> DofSet:
    """The space V_{h,0}: every node on the outer boundary is constrained."""
    return DofSet.from_constrained_mask(mesh.boundary_mask())


def cell_connectivity(region: Box, frame: Box) -> np.ndarray:
    """(cells, 4) corner node positions in `frame` for every cell of `region`, counter-clockwise."""
    ci, cj = region.cell_indices()
    stride = frame.cells_x + 1
    lower_left = (cj - frame.j0) * stride + (ci - frame.i0)
    return np.stack([lower_left, lower_left + 1, lower_left + stride + 1, lower_left + stride], axis=1)


def assemble_energy(
    mesh: StructuredMesh,
    coefficient: np.ndarray,
    eps: float,
    region: Box | None = None,
    frame: Box | None = None,
) -> sp.csr_matrix:
    """Assemble eps² (A∇u, ∇v) + (u, v) over the cells of `region`.

    `coefficient` holds one diffusion value per fine cell, indexed ``[cj, ci]``.
    Rows and columns follow the node numbering of `frame` (defaults to `region`),
    which must contain `region`. Element integrals are exact for per-cell constant A.
    """
    region = region or mesh.box
    frame = frame or region
    if not frame.contains(region):
        raise ConfigError(f"assembly region {region} is not inside frame {frame}")
    if not 0.0 < eps <= 1.0:
        raise ConfigError(f"eps must lie in (0, 1], got {eps}")

    ci, cj = region.cell_indices()
    a = np.asarray(coefficient, dtype=float)[cj, ci]
    if not np.all(np.isfinite(a)) or np.any(a <= 0.0):
        raise CoefficientBoundError(f"diffusion coefficient must be positive on every cell, min={a.min()!r}")

    conn = cell_connectivity(region, frame)
    element = eps**2 * a[:, None, None] * Q1_STIFFNESS + mesh.h**2 * Q1_MASS
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    size = frame.num_nodes
    op = sp.coo_matrix((element.ravel(), (rows, cols)), shape=(size, size)).tocsr()
    # floating-point addition commutes, so this is symmetric to the last bit
    return ((op + op.T) * 0.5).tocsr()


@cache
def q1_quadrature(order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Tensor Gauss rule on the unit reference cell.

    Returns (points (q, 2), weights (q,) summing to 1, shape values (q, 4),
    reference gradients (q, 4, 2)). Physical gradients are reference ones over h.
    """
    g, w = np.polynomial.legendre.leggauss(order)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    xi, eta = np.meshgrid(g, g, indexing="xy")
    xi, eta = xi.ravel(), eta.ravel()
    weights = np.outer(w, w).ravel()
    shape = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=1)
    grad = np.stack(
        [
            np.stack([-(1 - eta), -(1 - xi)], axis=1),
            np.stack([1 - eta, -xi], axis=1),
            np.stack([eta, xi], axis=1),
            np.stack([-eta, 1 - xi], axis=1),
        ],
        axis=1,
    )
    return np.stack([xi, eta], axis=1), weights, shape, grad


def quadrature_points(mesh: StructuredMesh, region: Box, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Physical coordinates (cells, q) of the Gauss points of every cell in `region`."""
    points, _, _, _ = q1_quadrature(order)
    ci, cj = region.cell_indices()
    xq = (ci[:, None] + points[None, :, 0]) * mesh.h
    yq = (cj[:, None] + points[None, :, 1]) * mesh.h
    return xq, yq


def assemble_load(
    mesh: StructuredMesh,
    f: SourceFunction,
    region: Box | None = None,
    frame: Box | None = None,
) -> np.ndarray:
    """F(v_j) = ∫_region f v_j with the 2x2 Gauss rule on every cell."""
    region = region or mesh.box
    frame = frame or region
    _, weights, shape, _ = q1_quadrature(2)
    xq, yq = quadrature_points(mesh, region, 2)
    fq = np.asarray(f(xq, yq), dtype=float) * np.ones_like(xq)
    element = mesh.h**2 * (fq * weights) @ shape
    conn = cell_connectivity(region, frame)
    return np.bincount(conn.ravel(), weights=element.ravel(), minlength=frame.num_nodes)


class SpdFactor:
    """Sparse LDLᵀ-style factorization of an SPD operator.

    SuperLU runs in symmetric mode and prefers diagonal pivots, so for a symmetric
    operator whose row and column permutations agree its U diagonal is the pivot
    sequence of a symmetric elimination; all pivots positive is then exactly the
    SPD condition. An off-diagonal pivot (a zero on the diagonal) rules SPD out.
    """

    def __init__(self, op: sp.spmatrix) -> None:
        self.dim = op.shape[0]
        if self.dim == 0:
            self._lu = None
            return
        csc = sp.csc_matrix(op)
        asym = abs(csc - csc.T).max() if csc.nnz else 0.0
        if asym > SYMMETRY_RTOL * abs(csc).max():
            raise NotSPDError(f"operator is not symmetric (largest mismatch {asym:.3e})")
        try:
            self._lu = splu(
                csc,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise NotSPDError(f"sparse factorization failed: {exc}") from exc
        if not np.array_equal(self._lu.perm_r, self._lu.perm_c):
            raise NotSPDError(f"off-diagonal pivoting was needed in a {self.dim}x{self.dim} operator")
        pivots = self._lu.U.diagonal()
        if not np.all(pivots > 0.0):
            raise NotSPDError(f"nonpositive pivot {pivots.min():.3e} in a {self.dim}x{self.dim} operator")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return np.zeros_like(rhs, dtype=float)
        return self._lu.solve(np.asarray(rhs, dtype=float))


def backward_error(op: sp.spmatrix, x: np.ndarray, rhs: np.ndarray) -> float:
    """Normwise backward error ‖op·x − rhs‖∞ / (‖op‖∞·‖x‖∞ + ‖rhs‖∞); 0 for an empty system."""
    if op.shape[0] == 0:
        return 0.0
    residual = np.abs(op @ x - rhs).max()
    scale = abs(sp.csr_matrix(op)).sum(axis=1).max() * np.abs(x).max() + np.abs(rhs).max()
    return float(residual / scale) if scale > 0 else float(residual)


def solve_spd(op: sp.spmatrix, rhs: np.ndarray, method: str = "cholesky", rtol: float = CG_RTOL) -> np.ndarray:
    """Solve op x = rhs for SPD `op` (already reduced to free dofs).

    `method` is "cholesky" (sparse direct, default) or "cg" (Jacobi-preconditioned
    conjugate gradient, for runs where a factorization doesn't fit in memory).
    A solution whose backward error exceeds SOLVE_RTOL (or the CG tolerance, if
    looser) raises SolverError.
    """
    rhs = np.asarray(rhs, dtype=float)
    tolerance = SOLVE_RTOL
    if method == "cholesky":
        x = SpdFactor(op).solve(rhs)
    elif method == "cg":
        diag = op.diagonal()
        if np.any(diag <= 0.0):
            raise NotSPDError("nonpositive diagonal entry; conjugate gradient needs an SPD operator")
        precond = sp.diags(1.0 / diag)
        x, info = cg(op, rhs, rtol=rtol, atol=0.0, M=precond, maxiter=10 * max(op.shape[0], 1))
        if info != 0:
            raise SolverError(f"conjugate gradient stopped without converging (info={info})")
        tolerance = max(SOLVE_RTOL, rtol * np.sqrt(op.shape[0]))
    else:
        raise ConfigError(f"unknown solver {method!r}; expected 'cholesky' or 'cg'")

    error = backward_error(op, x, rhs)
    if error > tolerance:
        raise SolverError(f"{method} solve has backward error {error:.3e} above {tolerance:.0e}")
    log.debug("%s solve of %d dofs: backward error %.2e", method, op.shape[0], error)
    return x


def solve_reduced(
    op: sp.spmatrix, rhs: np.ndarray, dofs: DofSet, method: str = "cholesky", rtol: float = CG_RTOL
) -> np.ndarray:
    """Solve on the free dofs of `dofs`, returning a full frame vector with zeros on constrained nodes."""
    free = dofs.free
    reduced = sp.csr_matrix(op)[free][:, free]
    return dofs.extend(solve_spd(reduced, rhs[free], method=method, rtol=rtol))


def energy_norm(op: sp.spmatrix, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if op.shape[0] != x.shape[0]:
        raise ConfigError(f"operator of size {op.shape[0]} applied to a vector of size {x.shape[0]}")
    q = float(x @ (op @ x))
    if q >= 0.0:
        return float(np.sqrt(q))
    if q > -1e-14 * float(x @ x):
        return 0.0
    raise NotSPDError(f"negative energy {q:.3e}: operator is not positive semi-definite")


def nodal_product(chi: np.ndarray, x: np.ndarray) -> np.ndarray:
    """I_h(χ·x) for nodal Q1 fields: the entrywise product of nodal values."""
    chi = np.asarray(chi, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return chi[:, None] * x
    return chi * x
