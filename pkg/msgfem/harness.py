"""Experiment driver.

One *point* is a full pipeline at fixed (n, N, ℓ, ε): coefficient, fine
reference, cover and partition of unity, local stage, then one coarse solve per
requested n_loc. The local stage fans out over a process pool; results come
back in subdomain order, so every reduction and every written byte is the same
for any worker count.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from msgfem import __version__
from msgfem.coarse import (
    CoarseSpace,
    GfemSolution,
    assemble_coarse,
    assemble_particular,
    error_report,
    local_errors,
    solve_coarse,
)
from msgfem.coefficient import SOURCES, CoefficientField, cell_values, generate_multiscale, load_raster
from msgfem.config import ExperimentConfig, ExperimentPoint
from msgfem.decomposition import Cover, PartitionOfUnity, build_cover, build_pu
from msgfem.errors import ConfigError, NumericalError
from msgfem.fem import StructuredMesh, build_mesh
from msgfem.local import (
    LocalParticular,
    LocalSpectralBasis,
    RequestError,
    build_extension,
    build_local,
    load_basis,
    save_basis,
    solve_eigenproblem,
    solve_particular,
)
from msgfem.models import ErrorReport, LocalErrors, ResultRow
from msgfem.report import CsvFormatError, read_csv
from msgfem.validation import FineReference, fine_reference, linear_fit

log = logging.getLogger(__name__)

BASIS_FILE = "basis_{index:04d}.bin"
FIELDS_FILE = "fields.npz"

# set once per worker process by _init_worker
_STATE: dict[str, Any] = {}


@dataclass(frozen=True)
class LocalResult:
    """What one subdomain hands back to the coarse stage; `errors` follows the requested n_loc list."""

    index: int
    particular: LocalParticular
    basis: LocalSpectralBasis
    errors: tuple[LocalErrors, ...]


@dataclass(frozen=True)
class PointSolution:
    gfem: GfemSolution
    coarse: CoarseSpace
    report: ErrorReport


@dataclass(frozen=True)
class PointRun:
    point: ExperimentPoint
    mesh: StructuredMesh
    fine: FineReference
    cover: Cover
    pu: PartitionOfUnity
    local: tuple[LocalResult, ...]
    u_p: np.ndarray
    solutions: dict[int, PointSolution]

    def solution(self, nloc: int | None = None) -> PointSolution:
        """The solve for `nloc`; by default the point's own n_loc, else the only one solved."""
        if nloc is None:
            nloc = self.point.nloc
            if nloc not in self.solutions and len(self.solutions) == 1:
                nloc = next(iter(self.solutions))
        if nloc not in self.solutions:
            solved = ", ".join(str(k) for k in sorted(self.solutions))
            raise ConfigError(f"nloc={nloc} was not solved for this point; solved: {solved}")
        return self.solutions[nloc]

    def report(self, nloc: int | None = None) -> ErrorReport:
        return self.solution(nloc).report


def build_coefficient(point: ExperimentPoint) -> CoefficientField:
    if point.raster:
        return load_raster(point.raster)
    return generate_multiscale(point.seed, point.s, point.contrast)


def _init_worker(state: dict[str, Any]) -> None:
    _STATE.clear()
    _STATE.update(state)


def _local_task(i: int) -> LocalResult:
    s = _STATE
    nlocs: list[int] = s["nlocs"]
    local = build_local(s["mesh"], s["cells"], s["eps"], s["cover"], i, s["pu"])
    particular = solve_particular(local, s["source"], method=s["solver"], bc=s["particular_bc"])

    loaded = s["bases"][i] if s["bases"] is not None else None
    if loaded is None:
        ext = build_extension(local)
        top = max(nlocs)
        # one extra pair gives the n-width d_{h,n}
        basis = solve_eigenproblem(local, ext, n=top + 1 if top < ext.dim else top)
    else:
        if loaded.count < min(max(nlocs), local.boundary.size):
            raise RequestError(f"subdomain {i}: stored basis has {loaded.count} vectors, {max(nlocs)} requested")
        basis = loaded

    errors = tuple(local_errors(local, s["u_h"], particular, basis, n) for n in nlocs)
    log.debug("subdomain %d: %d eigenpairs, best error %.3e", i, basis.count, errors[-1].best_error)
    return LocalResult(i, particular, basis, errors)


def run_local_stage(state: dict[str, Any], count: int, workers: int = 1) -> list[LocalResult]:
    """Run every subdomain's local problems; results are in subdomain order."""
    if workers <= 1 or count <= 1:
        _init_worker(state)
        try:
            return [_local_task(i) for i in range(count)]
        finally:
            _STATE.clear()
    with ProcessPoolExecutor(max_workers=min(workers, count), initializer=_init_worker, initargs=(state,)) as pool:
        return list(pool.map(_local_task, range(count)))


def load_bases(directory: str | Path, cover: Cover, point: ExperimentPoint) -> list[LocalSpectralBasis]:
    bases = []
    for sub in cover.subdomains:
        path = Path(directory) / BASIS_FILE.format(index=sub.index)
        if not path.exists():
            raise ConfigError(f"no stored basis for subdomain {sub.index} at {path}")
        meta, basis = load_basis(path)
        expected = {"subdomain": sub.index, "ell": point.ell, "dofs": sub.omega_star.num_nodes}
        for key, value in expected.items():
            if meta[key] != value:
                raise ConfigError(f"{path}: stored {key}={meta[key]} does not match {value}")
        if not math.isclose(meta["eps"], point.eps, rel_tol=1e-12):
            raise ConfigError(f"{path}: stored eps={meta['eps']} does not match {point.eps}")
        bases.append(basis)
    log.info("loaded %d stored bases from %s", len(bases), directory)
    return bases


def save_bases(directory: str | Path, results: Sequence[LocalResult], point: ExperimentPoint) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for r in results:
        save_basis(directory / BASIS_FILE.format(index=r.index), r.basis, r.index, point.eps, point.ell)
    log.info("saved %d bases to %s", len(results), directory)


def run_point(
    point: ExperimentPoint,
    nlocs: Sequence[int] | None = None,
    workers: int = 1,
    load_dir: str | Path | None = None,
    save_dir: str | Path | None = None,
) -> PointRun:
    nlocs = sorted(set(nlocs if nlocs is not None else [point.nloc]))
    if nlocs[0] < 0:
        raise ConfigError(f"nloc must be >= 0, got {nlocs[0]}")

    mesh = build_mesh(point.n)
    cells = cell_values(build_coefficient(point), mesh)
    source = SOURCES[point.source]()
    fine = fine_reference(mesh, cells, point.eps, source, method=point.solver, rtol=point.rtol)
    cover = build_cover(mesh, point.N, point.ell, point.overlap)
    pu = build_pu(cover, mesh)

    state = {
        "mesh": mesh,
        "cells": cells,
        "eps": point.eps,
        "cover": cover,
        "pu": pu,
        "source": source,
        "solver": point.solver,
        "particular_bc": point.particular_bc,
        "u_h": fine.u,
        "nlocs": nlocs,
        "bases": load_bases(load_dir, cover, point) if load_dir is not None else None,
    }
    started = time.perf_counter()
    results = run_local_stage(state, len(cover), workers)
    t_local = time.perf_counter() - started
    log.info("local stage: %d subdomains in %.2fs on %d worker(s)", len(cover), t_local, workers)
    if save_dir is not None:
        save_bases(save_dir, results, point)

    u_p = assemble_particular(pu, [r.particular for r in results])
    solutions: dict[int, PointSolution] = {}
    for k, n in enumerate(nlocs):
        started = time.perf_counter()
        coarse = assemble_coarse(pu, [r.basis.truncated(n) for r in results], fine.operator)
        gfem = solve_coarse(fine.operator, fine.load, coarse, u_p)
        t_coarse = time.perf_counter() - started
        report = error_report(
            fine.u, fine.operator, gfem, cover, [r.errors[k] for r in results], coarse, t_local, t_coarse
        )
        log.info("nloc=%d: coarse dim %d, energy error %.3e", n, coarse.dim, report.err_energy)
        solutions[n] = PointSolution(gfem, coarse, report)

    return PointRun(point, mesh, fine, cover, pu, tuple(results), u_p, solutions)


def run_single(point: ExperimentPoint, workers: int = 1) -> ErrorReport:
    return run_point(point, workers=workers).report()


def result_row(point: ExperimentPoint, nloc: int, report: ErrorReport) -> ResultRow:
    return ResultRow(
        seed=None if point.raster else point.seed,
        n=point.n,
        N=point.N,
        ell=point.ell,
        eps=point.eps,
        nloc=nloc,
        contrast=point.contrast,
        report=report,
        version=__version__,
    )


def _guarded_run(
    point: ExperimentPoint, nlocs: Sequence[int], workers: int, failures: list[str] | None
) -> PointRun | None:
    """A numerical failure aborts this point only; it is logged and, if asked, collected."""
    try:
        return run_point(point, nlocs=nlocs, workers=workers)
    except NumericalError as exc:
        message = f"eps={point.eps:g} ell={point.ell}: {exc}"
        log.error("point aborted: %s", message)
        if failures is None:
            raise
        failures.append(message)
        return None


def _fixed_ell_rows(config: ExperimentConfig, workers: int, failures: list[str] | None) -> list[ResultRow]:
    rows = []
    for eps in config.eps:
        run = _guarded_run(config.point(eps=eps), config.nloc, workers, failures)
        if run is not None:
            rows.extend(result_row(run.point, n, sol.report) for n, sol in run.solutions.items())
    return rows


def sweep_nloc(config: ExperimentConfig, workers: int = 1, failures: list[str] | None = None) -> list[ResultRow]:
    """One row per (ε, n_loc) at ℓ = ell_fixed; eigenpairs are computed once per ε and truncated."""
    return _fixed_ell_rows(config, workers, failures)


def sweep_eps(config: ExperimentConfig, workers: int = 1, failures: list[str] | None = None) -> list[ResultRow]:
    """The same points as sweep_nloc, ordered by n_loc, then ε from large to small."""
    rows = _fixed_ell_rows(config, workers, failures)
    return sorted(rows, key=lambda r: (r.nloc, -r.eps))


def sweep_oversampling(
    config: ExperimentConfig, workers: int = 1, failures: list[str] | None = None
) -> list[ResultRow]:
    """One row per (ε, ℓ) with n_loc = 0: the global particular function alone."""
    rows = []
    for eps in config.eps:
        for ell in sorted(set(config.ell)):
            point = config.point(ell=ell, eps=eps, nloc=0)
            run = _guarded_run(point, [0], workers, failures)
            if run is not None:
                rows.append(result_row(point, 0, run.report()))
    return rows


def save_fields(run: PointRun, directory: str | Path, nloc: int | None = None) -> Path:
    """Nodal x, y, u_h, u_p and u_G for plotting the reference against the pasted local solutions."""
    u_g = run.solution(nloc).gfem.u_g
    path = Path(directory) / FIELDS_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    x, y = run.mesh.node_coords()
    np.savez(path, x=x, y=y, u_h=run.fine.u, u_p=run.u_p, u_g=u_g)
    return path


def _plot_axis(records: Sequence[dict[str, Any]]) -> str:
    for axis in ("nloc", "ell", "eps"):
        others = [k for k in ("eps", "ell", "nloc") if k != axis]
        groups: dict[tuple, set] = {}
        for rec in records:
            groups.setdefault(tuple(rec[k] for k in others), set()).add(rec[axis])
        if any(len(values) > 1 for values in groups.values()):
            return axis
    return "nloc"


def _label(name: str, value: Any) -> str:
    return f"{name}{value:.0e}" if name == "eps" else f"{name}{value}"


def _fit_line(label: str, fit: tuple[float, float, float]) -> str:
    if any(math.isnan(v) for v in fit):
        return f"{label} NA NA NA"
    return f"{label} {fit[0]:.9e} {fit[1]:.9e} {fit[2]:.9e}"


def emit_plotdata(csv_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Two-column (x, log10 energy error) files plus fit lines, one pair per curve in the sweep.

    The x axis is whichever of n_loc, ℓ, ε varies (ε is plotted as log10 ε). Each
    `.fit` file holds slope, intercept and R² on the semi-log axes and, for
    n_loc curves, against n_loc^{1/3}. A curve with fewer than two points gets NA.
    """
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise CsvFormatError(f"{csv_path} does not exist")
    records = read_csv(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = csv_path.stem

    if not records:
        written = [out_dir / f"{stem}.dat", out_dir / f"{stem}.fit"]
        for path in written:
            path.write_text("")
        return written

    axis = _plot_axis(records)
    others = [k for k in ("eps", "ell", "nloc") if k != axis]
    curves: dict[tuple, list[dict[str, Any]]] = {}
    for rec in records:
        curves.setdefault(tuple(rec[k] for k in others), []).append(rec)

    written = []
    for key, curve in curves.items():
        label = "_".join(_label(name, value) for name, value in zip(others, key))
        points = sorted(
            (math.log10(rec[axis]) if axis == "eps" else float(rec[axis]), math.log10(rec["err_energy"]))
            for rec in curve
            if rec["err_energy"] > 0
        )
        skipped = len(curve) - len(points)
        if skipped:
            log.warning("%s %s: %d rows with zero error left out of the plot data", stem, label, skipped)

        dat = out_dir / f"{stem}_{axis}_{label}.dat"
        lines = [f"# {'log10_eps' if axis == 'eps' else axis} log10_err_energy"]
        lines += [f"{x:.9e} {y:.9e}" for x, y in points]
        dat.write_text("\n".join(lines) + "\n")

        xs = [x for x, _ in points]
        ys = [y for _, y in points]
        fit = out_dir / f"{stem}_{axis}_{label}.fit"
        fit_lines = ["# axes slope intercept r2", _fit_line("semilog", linear_fit(xs, ys))]
        if axis == "nloc":
            fit_lines.append(_fit_line("cbrt", linear_fit([np.cbrt(x) for x in xs], ys)))
        fit.write_text("\n".join(fit_lines) + "\n")
        written.extend([dat, fit])
    return written
