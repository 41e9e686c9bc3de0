"""Local problems on the oversampling domains ω*_i.

Everything here lives in the node numbering of ω*_i. Three node sets matter:

- constrained: nodes on ∂ω* ∩ ∂Ω (zero in V_{h,Γ}(ω*));
- interior: nodes strictly inside ω* (the free dofs of V_{h,0}(ω*));
- boundary: the remaining nodes, on ∂ω* ∩ Ω.

The discrete harmonic space is parameterized by boundary values: eliminating the
interior gives the extension E and the Schur complement S, and the local
eigenproblem becomes a dense symmetric-definite problem on boundary coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from msgfem.decomposition import Cover, PartitionOfUnity, Subdomain
from msgfem.errors import ConfigError, NumericalError
from msgfem.fem import (
    Box,
    DofSet,
    NotSPDError,
    SourceFunction,
    SpdFactor,
    StructuredMesh,
    assemble_energy,
    assemble_load,
    backward_error,
    energy_norm,
    nodal_product,
    solve_reduced,
)

log = logging.getLogger(__name__)

BASIS_MAGIC = "MSGFEM-BASIS v1"
_END_HEADER = "end_header"
EIGEN_CLAMP = 1e-12
PARTICULAR_BCS = ("natural", "zero")


class DegenerateDomainError(ConfigError):
    """Raised when an oversampling domain has no interior nodes."""


class RequestError(ConfigError):
    """Raised when more eigenpairs are requested than the harmonic space holds."""


class DefinitenessError(NumericalError):
    """Raised when the local eigenproblem produces clearly negative eigenvalues."""


class BasisFormatError(ConfigError):
    """Raised for basis files that don't follow the MSGFEM-BASIS v1 layout."""


@dataclass(frozen=True)
class LocalProblem:
    index: int
    subdomain: Subdomain
    mesh: StructuredMesh
    eps: float
    dofs: DofSet
    interior: np.ndarray
    boundary: np.ndarray
    op_star: sp.csr_matrix
    op_omega: sp.csr_matrix
    chi: np.ndarray

    @property
    def frame(self) -> Box:
        return self.subdomain.omega_star

    def global_nodes(self) -> np.ndarray:
        return self.frame.node_ids(self.mesh)

    def omega_nodes(self) -> np.ndarray:
        """Positions of ω_i's nodes inside the ω* numbering."""
        return self.subdomain.omega.nodes_in(self.frame)


@dataclass(frozen=True)
class LocalParticular:
    psi: np.ndarray
    residual: float

    def restriction(self, local: LocalProblem) -> np.ndarray:
        """u^p_{h,i} = ψ restricted to the nodes of ω_i."""
        return self.psi[local.omega_nodes()]


@dataclass(frozen=True)
class HarmonicExtension:
    boundary: np.ndarray
    interior: np.ndarray
    factor: SpdFactor
    extension: np.ndarray
    schur: np.ndarray

    @property
    def dim(self) -> int:
        return self.boundary.size

    def extend(self, b: np.ndarray) -> np.ndarray:
        return self.extension @ b


@dataclass(frozen=True)
class LocalSpectralBasis:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    requested: int

    @property
    def count(self) -> int:
        return self.eigenvalues.size

    def truncated(self, n: int) -> LocalSpectralBasis:
        return LocalSpectralBasis(self.eigenvalues[:n], self.vectors[:, :n], min(n, self.requested))

    @classmethod
    def empty(cls, num_nodes: int, requested: int = 0) -> LocalSpectralBasis:
        return cls(np.zeros(0), np.zeros((num_nodes, 0)), requested)


def build_local(
    mesh: StructuredMesh,
    coefficient: np.ndarray,
    eps: float,
    cover: Cover,
    i: int,
    pu: PartitionOfUnity,
) -> LocalProblem:
    sub = cover[i]
    frame = sub.omega_star
    if frame.cells_x < 2 or frame.cells_y < 2:
        raise DegenerateDomainError(f"oversampling domain {i} ({frame}) has no interior nodes")

    ii, jj = frame.node_indices()
    on_gamma = mesh.boundary_mask(frame)
    on_edge = (ii == frame.i0) | (ii == frame.i1) | (jj == frame.j0) | (jj == frame.j1)
    interior = np.flatnonzero(~on_edge)
    boundary = np.flatnonzero(on_edge & ~on_gamma)

    local = LocalProblem(
        index=i,
        subdomain=sub,
        mesh=mesh,
        eps=eps,
        dofs=DofSet.from_constrained_mask(on_gamma),
        interior=interior,
        boundary=boundary,
        op_star=assemble_energy(mesh, coefficient, eps, region=frame, frame=frame),
        op_omega=assemble_energy(mesh, coefficient, eps, region=sub.omega, frame=frame),
        chi=pu.on_frame(i, frame),
    )
    log.debug(
        "local %d: %d nodes, %d interior, %d boundary, %d constrained",
        i,
        frame.num_nodes,
        interior.size,
        boundary.size,
        local.dofs.constrained.size,
    )
    return local


def solve_particular(
    local: LocalProblem, f: SourceFunction, method: str = "cholesky", bc: str = "natural"
) -> LocalParticular:
    """ψ with a_{ε,ω*}(ψ, v) = F_{ω*}(v) for every test dof; ψ = 0 on ∂ω* ∩ ∂Ω.

    On ∂ω* ∩ Ω, bc="natural" leaves the condition natural (ψ ∈ V_{h,Γ}(ω*));
    bc="zero" fixes ψ = 0 there too (ψ ∈ V_{h,0}(ω*)).
    """
    if bc == "natural":
        dofs = local.dofs
    elif bc == "zero":
        mask = np.zeros(local.frame.num_nodes, dtype=bool)
        mask[local.dofs.constrained] = True
        mask[local.boundary] = True
        dofs = DofSet.from_constrained_mask(mask)
    else:
        raise ConfigError(f"unknown particular boundary condition {bc!r}; expected one of {', '.join(PARTICULAR_BCS)}")
    load = assemble_load(local.mesh, f, region=local.frame, frame=local.frame)
    psi = solve_reduced(local.op_star, load, dofs, method=method)
    free = dofs.free
    residual = backward_error(local.op_star[free][:, free], psi[free], load[free])
    return LocalParticular(psi=psi, residual=residual)


def build_extension(local: LocalProblem) -> HarmonicExtension:
    """Discrete harmonic extension: u_I = -A_II⁻¹ A_IB u_B, S = A_BB - A_BI A_II⁻¹ A_IB."""
    op = local.op_star
    interior, boundary = local.interior, local.boundary
    rows_i = op[interior]
    factor = SpdFactor(rows_i[:, interior])

    if boundary.size:
        e_interior = -factor.solve(rows_i[:, boundary].toarray())
    else:
        e_interior = np.zeros((interior.size, 0))
    extension = np.zeros((local.frame.num_nodes, boundary.size))
    extension[boundary] = np.eye(boundary.size)
    extension[interior] = e_interior

    rows_b = op[boundary]
    schur = rows_b[:, boundary].toarray() + rows_b[:, interior] @ e_interior
    schur = 0.5 * (schur + schur.T)
    if boundary.size:
        try:
            la.cholesky(schur, lower=True)
        except la.LinAlgError as exc:
            raise NotSPDError(f"Schur complement of subdomain {local.index} is not SPD") from exc
    return HarmonicExtension(boundary, interior, factor, extension, schur)


def membership_residual(local: LocalProblem, x: np.ndarray) -> float:
    """Relative size of a_{ε,ω*}(x, v) over interior test dofs; 0 for discrete harmonic x."""
    x = np.atleast_2d(x.T).T
    op = local.op_star
    r = (op @ x)[local.interior]
    scale = (abs(op) @ np.abs(x))[local.interior]
    denom = np.linalg.norm(scale)
    return float(np.linalg.norm(r) / denom) if denom > 0 else 0.0


def left_form(local: LocalProblem, ext: HarmonicExtension, chi: np.ndarray | None = None) -> np.ndarray:
    """Eᵀ D_χ A_ω D_χ E: a_{ε,ω}(I_h(χφ), I_h(χv)) on boundary coordinates."""
    chi = local.chi if chi is None else chi
    cut = nodal_product(chi, ext.extension)
    form = cut.T @ (local.op_omega @ cut)
    return 0.5 * (form + form.T)


def solve_eigenproblem(
    local: LocalProblem, ext: HarmonicExtension, chi: np.ndarray | None = None, n: int = 0
) -> LocalSpectralBasis:
    """Top-n eigenpairs of a_{ε,ω}(I_h(χφ), I_h(χv)) = λ a_{ε,ω*}(φ, v) on the harmonic space.

    Eigenvectors come back as full ω* vectors, S-orthonormal.
    """
    m = ext.dim
    num_nodes = local.frame.num_nodes
    if m == 0:
        log.info("subdomain %d: harmonic space is empty (no interior boundary); basis is empty", local.index)
        return LocalSpectralBasis.empty(num_nodes, n)
    if n > m:
        raise RequestError(f"subdomain {local.index}: requested {n} eigenpairs, harmonic space has dimension {m}")
    if n == 0:
        return LocalSpectralBasis.empty(num_nodes)

    try:
        vals, vecs = la.eigh(left_form(local, ext, chi), ext.schur, subset_by_index=[m - n, m - 1])
    except la.LinAlgError as exc:
        raise DefinitenessError(f"subdomain {local.index}: Schur form is not positive definite ({exc})") from exc
    vals, vecs = vals[::-1], vecs[:, ::-1]

    tol = EIGEN_CLAMP * max(float(np.abs(vals).max()), np.finfo(float).tiny)
    if vals.min() < -tol:
        raise DefinitenessError(f"subdomain {local.index}: eigenvalue {vals.min():.3e} below -{tol:.1e}")
    if vals.min() < 0.0:
        log.debug("subdomain %d: clamped %d tiny negative eigenvalues", local.index, int((vals < 0).sum()))
    vals = np.maximum(vals, 0.0)
    return LocalSpectralBasis(eigenvalues=vals, vectors=ext.extension @ vecs, requested=n)


def nwidth(basis: LocalSpectralBasis, n: int) -> float:
    """d_{h,n}(ω, ω*) = λ_{h,n+1}^{1/2}."""
    if n < 0 or n + 1 > basis.count:
        raise RequestError(f"n-width d_{n} needs {n + 1} eigenpairs, only {basis.count} computed")
    return float(np.sqrt(basis.eigenvalues[n]))


def best_local_error(local: LocalProblem, u_local: np.ndarray, psi: np.ndarray, vectors: np.ndarray) -> float:
    """min over φ ∈ ψ + span(vectors) of ||I_h(χ (u - φ))||_{a,ε,ω}, by an exact small least-squares solve."""
    op = local.op_omega
    target = nodal_product(local.chi, u_local - psi)
    if vectors.shape[1] == 0:
        return energy_norm(op, target)

    cut = nodal_product(local.chi, vectors)
    a_cut = op @ cut
    gram = cut.T @ a_cut
    scale = np.sqrt(np.maximum(np.diag(gram), np.finfo(float).tiny))
    gram_scaled = gram / np.outer(scale, scale)
    coeffs, *_ = np.linalg.lstsq(gram_scaled, (a_cut.T @ target) / scale, rcond=1e-13)
    return energy_norm(op, target - cut @ (coeffs / scale))


def save_basis(path: str | Path, basis: LocalSpectralBasis, subdomain: int, eps: float, ell: int) -> None:
    dofs, count = basis.vectors.shape
    header = [
        BASIS_MAGIC,
        f"subdomain {subdomain}",
        f"eps {eps!r}",
        f"ell {ell}",
        f"n {count}",
        f"dofs {dofs}",
        _END_HEADER,
    ]
    payload = np.ascontiguousarray(basis.eigenvalues, dtype="<f8").tobytes()
    payload += np.ascontiguousarray(basis.vectors, dtype="<f8").tobytes()
    Path(path).write_bytes(("\n".join(header) + "\n").encode("ascii") + payload)


def load_basis(path: str | Path) -> tuple[dict[str, Any], LocalSpectralBasis]:
    data = Path(path).read_bytes()
    marker = f"\n{_END_HEADER}\n".encode("ascii")
    cut = data.find(marker)
    if not data.startswith(BASIS_MAGIC.encode("ascii")) or cut < 0:
        raise BasisFormatError(f"{path}: not a {BASIS_MAGIC} file")

    raw = dict(line.split(" ", 1) for line in data[:cut].decode("ascii").splitlines()[1:])
    try:
        meta: dict[str, Any] = {
            "subdomain": int(raw["subdomain"]),
            "eps": float(raw["eps"]),
            "ell": int(raw["ell"]),
            "n": int(raw["n"]),
            "dofs": int(raw["dofs"]),
        }
    except (KeyError, ValueError) as exc:
        raise BasisFormatError(f"{path}: incomplete basis header ({exc})") from exc

    n, dofs = meta["n"], meta["dofs"]
    values = np.frombuffer(data[cut + len(marker) :], dtype="<f8")
    if values.size != n + n * dofs:
        raise BasisFormatError(f"{path}: expected {n + n * dofs} float64 values, found {values.size}")
    basis = LocalSpectralBasis(
        eigenvalues=values[:n].copy(), vectors=values[n:].reshape(dofs, n).copy(), requested=n
    )
    return meta, basis
