"""Overlapping cover, oversampling domains and the flat-top partition of unity.

The unit square is split into N x N disjoint cores of c = n/N cells per side.
Each core grows by `overlap` cell layers into the subdomain ω_i, and ω_i grows by
ℓ more layers into the oversampling domain ω*_i; both are clipped at ∂Ω.
Subdomains are numbered row-major, x fastest: i = jy * N + jx.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from msgfem.errors import ConfigError
from msgfem.fem import Box, StructuredMesh

log = logging.getLogger(__name__)

DEFAULT_OVERLAP = 2


class PartitionError(ConfigError):
    """Raised when N doesn't divide the grid or the overlap reaches past a neighbouring core."""


class PartitionOfUnityError(ConfigError):
    """Raised when the ramps leave a node uncovered, so χ can't be normalized."""


@dataclass(frozen=True)
class Subdomain:
    index: int
    core: Box
    omega: Box
    omega_star: Box
    delta_star: float


@dataclass(frozen=True)
class Cover:
    mesh: StructuredMesh
    N: int
    ell: int
    overlap: int
    subdomains: tuple[Subdomain, ...]
    kappa: int
    kappa_star: int

    def __len__(self) -> int:
        return len(self.subdomains)

    def __getitem__(self, i: int) -> Subdomain:
        return self.subdomains[i]


def _delta_star(omega: Box, omega_star: Box, mesh: StructuredMesh) -> float:
    """dist(ω, ∂ω* \\ ∂Ω): only sides of ω* strictly inside Ω count."""
    gaps = []
    if omega_star.i0 > 0:
        gaps.append(omega.i0 - omega_star.i0)
    if omega_star.i1 < mesh.n:
        gaps.append(omega_star.i1 - omega.i1)
    if omega_star.j0 > 0:
        gaps.append(omega.j0 - omega_star.j0)
    if omega_star.j1 < mesh.n:
        gaps.append(omega_star.j1 - omega.j1)
    return min(gaps) * mesh.h if gaps else math.inf


def _max_multiplicity(boxes: list[Box], n: int) -> int:
    counts = np.zeros((n, n), dtype=np.int32)
    for b in boxes:
        counts[b.j0 : b.j1, b.i0 : b.i1] += 1
    if counts.min() < 1:
        raise PartitionError("cover leaves cells uncovered")
    return int(counts.max())


def build_cover(mesh: StructuredMesh, N: int, ell: int, overlap: int = DEFAULT_OVERLAP) -> Cover:
    if N < 1 or mesh.n % N:
        raise PartitionError(f"N={N} subdomains per axis must divide the {mesh.n} cells per axis")
    if ell < 0:
        raise ConfigError(f"oversampling layers must be >= 0, got ell={ell}")
    c = mesh.n // N
    if N > 1 and not 1 <= overlap <= c:
        raise PartitionError(f"overlap must be between 1 and the core width {c} when N > 1, got {overlap}")

    subdomains = []
    for jy in range(N):
        for jx in range(N):
            core = Box(jx * c, (jx + 1) * c, jy * c, (jy + 1) * c)
            omega = core.grow(overlap, mesh.n)
            omega_star = omega.grow(ell, mesh.n)
            subdomains.append(
                Subdomain(
                    index=jy * N + jx,
                    core=core,
                    omega=omega,
                    omega_star=omega_star,
                    delta_star=_delta_star(omega, omega_star, mesh),
                )
            )

    kappa = _max_multiplicity([s.omega for s in subdomains], mesh.n)
    kappa_star = _max_multiplicity([s.omega_star for s in subdomains], mesh.n)
    log.debug("cover N=%d ell=%d: kappa=%d kappa*=%d", N, ell, kappa, kappa_star)
    return Cover(mesh, N, ell, overlap, tuple(subdomains), kappa, kappa_star)


def overlap_stats(cover: Cover) -> tuple[int, int]:
    """(κ, κ*): largest number of subdomains / oversampling domains sharing a cell."""
    n = cover.mesh.n
    return (
        _max_multiplicity([s.omega for s in cover.subdomains], n),
        _max_multiplicity([s.omega_star for s in cover.subdomains], n),
    )


def _ramp(t: np.ndarray, lo: int, hi: int, overlap: int, n: int) -> np.ndarray:
    """1 on [lo, hi], linear down to 0 `overlap` cells outside; flat toward ∂Ω."""
    left = np.ones_like(t, dtype=float) if lo == 0 else np.clip((t - (lo - overlap)) / overlap, 0.0, 1.0)
    right = np.ones_like(t, dtype=float) if hi == n else np.clip(((hi + overlap) - t) / overlap, 0.0, 1.0)
    return np.minimum(left, right)


@dataclass(frozen=True)
class PartitionOfUnity:
    """χ_i stored on the nodes of ω_i (in ω_i's own numbering); zero elsewhere."""

    cover: Cover
    chi: tuple[np.ndarray, ...]
    gradient_bound: float

    def on_frame(self, i: int, frame: Box) -> np.ndarray:
        omega = self.cover[i].omega
        full = np.zeros(frame.num_nodes)
        full[omega.nodes_in(frame)] = self.chi[i]
        return full

    def global_vector(self, i: int) -> np.ndarray:
        return self.on_frame(i, self.cover.mesh.box)

    def partition_error(self) -> float:
        """max over nodes of |Σ_i χ_i - 1|."""
        mesh = self.cover.mesh
        total = np.zeros(mesh.num_nodes)
        for sub, chi in zip(self.cover.subdomains, self.chi):
            total[sub.omega.node_ids(mesh)] += chi
        return float(np.abs(total - 1.0).max())


def _gradient_bound(chi: np.ndarray, box: Box, h: float) -> float:
    """max |∇χ| of the Q1 interpolant over the cells of `box`, attained at cell corners."""
    grid = chi.reshape(box.cells_y + 1, box.cells_x + 1)
    gx = np.diff(grid, axis=1) / h
    gy = np.diff(grid, axis=0) / h
    corners = [
        np.hypot(gx[:-1, :], gy[:, :-1]),
        np.hypot(gx[:-1, :], gy[:, 1:]),
        np.hypot(gx[1:, :], gy[:, :-1]),
        np.hypot(gx[1:, :], gy[:, 1:]),
    ]
    return float(max(c.max() for c in corners))


def build_pu(cover: Cover, mesh: StructuredMesh) -> PartitionOfUnity:
    n = mesh.n
    etas = []
    total = np.zeros(mesh.num_nodes)
    for sub in cover.subdomains:
        ii, jj = sub.omega.node_indices()
        core = sub.core
        eta = _ramp(ii, core.i0, core.i1, cover.overlap, n) * _ramp(jj, core.j0, core.j1, cover.overlap, n)
        etas.append(eta)
        total[sub.omega.node_ids(mesh)] += eta

    if total.min() <= 0.0:
        raise PartitionOfUnityError(f"{int((total <= 0).sum())} nodes are outside every ramp")

    chi = tuple(eta / total[sub.omega.node_ids(mesh)] for sub, eta in zip(cover.subdomains, etas))
    bound = max(_gradient_bound(c, sub.omega, mesh.h) for sub, c in zip(cover.subdomains, chi))
    log.debug("partition of unity: %d functions, max |grad chi| = %.3e", len(chi), bound)
    return PartitionOfUnity(cover, chi, bound)


def dump_pu_csv(pu: PartitionOfUnity, path: str | Path) -> None:
    """Diagnostic dump: one row per node, one χ column per subdomain."""
    mesh = pu.cover.mesh
    columns = np.zeros((mesh.num_nodes, len(pu.chi)))
    for i, sub in enumerate(pu.cover.subdomains):
        columns[sub.omega.node_ids(mesh), i] = pu.chi[i]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id"] + [f"chi_{i}" for i in range(len(pu.chi))])
        for node, row in enumerate(columns):
            writer.writerow([node] + [repr(float(v)) for v in row])
