"""Global particular function, coarse space, coarse Galerkin solve and error reports."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from msgfem.decomposition import Cover, PartitionOfUnity
from msgfem.errors import NumericalError
from msgfem.fem import energy_norm
from msgfem.local import LocalParticular, LocalProblem, LocalSpectralBasis, best_local_error, nwidth
from msgfem.models import ErrorReport, LocalErrors

log = logging.getLogger(__name__)

PIVOT_RTOL = 1e-12


class CoarseAssemblyError(NumericalError):
    """Raised when the retained coarse Gram matrix still fails to factor."""


@dataclass(frozen=True)
class CoarseSpace:
    """Columns b_{i,k} = I_h(χ_i φ_{i,k}) on the global node numbering.

    `labels[c]` is (subdomain, local index) of column c; `keep` marks the columns
    retained after dropping near-dependent ones.
    """

    columns: sp.csc_matrix
    labels: tuple[tuple[int, int], ...]
    keep: np.ndarray
    gram_factor: np.ndarray
    scale: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.keep.sum())

    @property
    def dropped(self) -> list[tuple[int, int]]:
        return [label for label, kept in zip(self.labels, self.keep) if not kept]

    @property
    def retained(self) -> sp.csc_matrix:
        return self.columns[:, np.flatnonzero(self.keep)]

    def solve_gram(self, rhs: np.ndarray) -> np.ndarray:
        if self.dim == 0:
            return np.zeros(0)
        return la.cho_solve((self.gram_factor, True), rhs / self.scale) / self.scale

    @classmethod
    def from_columns(
        cls, columns: sp.spmatrix, operator: sp.spmatrix, labels: Sequence[tuple[int, int]] | None = None
    ) -> CoarseSpace:
        columns = sp.csc_matrix(columns)
        labels = tuple(labels) if labels is not None else tuple((0, k) for k in range(columns.shape[1]))
        gram = np.asarray((columns.T @ (operator @ columns)).todense()) if columns.shape[1] else np.zeros((0, 0))
        gram = 0.5 * (gram + gram.T)
        keep, factor, scale = _select_columns(gram)
        space = cls(columns, labels, keep, factor, scale)
        if space.dropped:
            log.warning("coarse space: dropped %d near-dependent columns %s", len(space.dropped), space.dropped[:10])
        if columns.shape[1] and space.dim == 0:
            log.warning("coarse space: every column was dropped; the solution is the particular function")
        return space


def _select_columns(gram: np.ndarray, rtol: float = PIVOT_RTOL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cholesky of the unit-diagonal Gram in fixed column order, skipping columns whose pivot is <= rtol.

    Returns the keep mask, the lower factor of the retained (scaled) Gram and the
    retained scaling. Order is subdomain-major then eigenvalue-major, so drops are
    deterministic.
    """
    k_total = gram.shape[0]
    diag = np.diag(gram).copy()
    keep = np.zeros(k_total, dtype=bool)
    factor = np.zeros((k_total, k_total))
    kept: list[int] = []
    for k in range(k_total):
        if not diag[k] > 0.0:
            continue
        col = gram[kept, k] / np.sqrt(diag[kept] * diag[k])
        r = len(kept)
        row = la.solve_triangular(factor[:r, :r], col, lower=True) if r else np.zeros(0)
        pivot = 1.0 - row @ row
        if pivot <= rtol:
            continue
        factor[r, :r] = row
        factor[r, r] = np.sqrt(pivot)
        kept.append(k)
        keep[k] = True
    r = len(kept)
    return keep, factor[:r, :r].copy(), np.sqrt(diag[kept])


@dataclass(frozen=True)
class GfemSolution:
    u_p: np.ndarray
    coefficients: np.ndarray
    u_g: np.ndarray
    n_per_subdomain: tuple[int, ...]
    galerkin_residual: float


def _scatter_local(pu: PartitionOfUnity, i: int, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Global rows and values of I_h(χ_i · values) for ω*-frame values (vector or columns)."""
    sub = pu.cover[i]
    mesh = pu.cover.mesh
    frame = sub.omega_star
    chi = pu.on_frame(i, frame)
    support = np.flatnonzero(chi)
    rows = frame.node_ids(mesh)[support]
    if values.ndim == 2:
        return rows, chi[support, None] * values[support]
    return rows, chi[support] * values[support]


def assemble_particular(pu: PartitionOfUnity, particulars: Sequence[LocalParticular | np.ndarray]) -> np.ndarray:
    """u_h^p = Σ_i I_h(χ_i ψ_i), accumulated in subdomain order."""
    mesh = pu.cover.mesh
    u_p = np.zeros(mesh.num_nodes)
    for i, particular in enumerate(particulars):
        psi = particular.psi if isinstance(particular, LocalParticular) else np.asarray(particular)
        rows, vals = _scatter_local(pu, i, psi)
        u_p[rows] += vals
    return u_p


def assemble_coarse(pu: PartitionOfUnity, bases: Sequence[LocalSpectralBasis], operator: sp.spmatrix) -> CoarseSpace:
    mesh = pu.cover.mesh
    row_parts, col_parts, val_parts = [], [], []
    labels: list[tuple[int, int]] = []
    for i, basis in enumerate(bases):
        if basis.count == 0:
            continue
        rows, vals = _scatter_local(pu, i, basis.vectors)
        first = len(labels)
        for k in range(basis.count):
            row_parts.append(rows)
            col_parts.append(np.full(rows.size, first + k))
            val_parts.append(vals[:, k])
            labels.append((i, k))

    if labels:
        columns = sp.csc_matrix(
            (np.concatenate(val_parts), (np.concatenate(row_parts), np.concatenate(col_parts))),
            shape=(mesh.num_nodes, len(labels)),
        )
    else:
        columns = sp.csc_matrix((mesh.num_nodes, 0))
    return CoarseSpace.from_columns(columns, operator, labels)


def solve_coarse(operator: sp.spmatrix, load: np.ndarray, coarse: CoarseSpace, u_p: np.ndarray) -> GfemSolution:
    """u^G = u_p + B c with (BᵀAB) c = Bᵀ(F - A u_p) over the retained columns."""
    n_per = [0] * (max((i for i, _ in coarse.labels), default=-1) + 1)
    for (i, _), kept in zip(coarse.labels, coarse.keep):
        n_per[i] += int(kept)

    if coarse.dim == 0:
        return GfemSolution(
            u_p=u_p, coefficients=np.zeros(0), u_g=u_p.copy(), n_per_subdomain=tuple(n_per), galerkin_residual=0.0
        )

    basis = coarse.retained
    try:
        coeffs = coarse.solve_gram(basis.T @ (load - operator @ u_p))
    except la.LinAlgError as exc:
        raise CoarseAssemblyError(f"coarse Gram matrix is not SPD after regularization: {exc}") from exc
    u_g = u_p + basis @ coeffs

    residual = np.abs(basis.T @ (load - operator @ u_g))
    scale = np.abs(basis.T @ load) + np.abs(basis.T @ (operator @ u_p))
    galerkin = float(residual.max() / max(scale.max(), np.finfo(float).tiny))
    return GfemSolution(u_p=u_p, coefficients=coeffs, u_g=u_g, n_per_subdomain=tuple(n_per), galerkin_residual=galerkin)


def local_errors(
    local: LocalProblem,
    u_h: np.ndarray,
    particular: LocalParticular,
    basis: LocalSpectralBasis,
    n: int,
) -> LocalErrors:
    """ẽ_i with the first n eigenvectors, plus d_{h,n} and ||u_h - ψ||_{a,ε,ω*} when available."""
    u_local = u_h[local.global_nodes()]
    n = min(n, basis.count)
    best = best_local_error(local, u_local, particular.psi, basis.vectors[:, :n])
    width = nwidth(basis, n) if basis.count > n else None
    return LocalErrors(
        index=local.index,
        best_error=best,
        particular_error=energy_norm(local.op_star, u_local - particular.psi),
        nwidth=width,
    )


def error_report(
    u_h: np.ndarray,
    operator: sp.spmatrix,
    gfem: GfemSolution,
    cover: Cover,
    local: Sequence[LocalErrors],
    coarse: CoarseSpace | None = None,
    t_local_s: float = math.nan,
    t_coarse_s: float = math.nan,
) -> ErrorReport:
    err = energy_norm(operator, u_h - gfem.u_g)
    ref = energy_norm(operator, u_h)
    bound = math.sqrt(cover.kappa * sum(e.best_error**2 for e in local))
    report = ErrorReport(
        err_energy=err,
        err_rel=err / ref if ref > 0 else 0.0,
        bound_thm21=bound,
        kappa=cover.kappa,
        kappa_star=cover.kappa_star,
        coarse_dim=coarse.dim if coarse is not None else 0,
        dropped=len(coarse.dropped) if coarse is not None else 0,
        galerkin_residual=gfem.galerkin_residual,
        local=tuple(local),
        t_local_s=t_local_s,
        t_coarse_s=t_coarse_s,
    )
    if not report.bound_holds:
        log.warning("global error %.3e exceeds the local-to-global bound %.3e", err, bound)
    return report
