from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from collections.abc import Sequence
from pathlib import Path
from typing import TYPE_CHECKING, Any

from msgfem.errors import ConfigError
from msgfem.models import ErrorReport, OracleReport, ResultRow

if TYPE_CHECKING:
    from msgfem.config import ExperimentPoint
    from msgfem.presets import Preset

CSV_COLUMNS = (
    "run_id",
    "seed",
    "n",
    "N",
    "ell",
    "eps",
    "nloc",
    "contrast",
    "kappa",
    "kappa_star",
    "coarse_dim",
    "err_energy",
    "err_rel",
    "bound_thm21",
    "t_local_s",
    "t_coarse_s",
)
ORACLE_COLUMNS = ("case_id", "kind", "method", "oracle", "deviation", "tolerance", "passed", "detail")
NA = "NA"

_INT_COLUMNS = {"seed", "n", "N", "ell", "nloc", "kappa", "kappa_star", "coarse_dim"}


class CsvFormatError(ConfigError):
    """Raised when a results CSV doesn't carry the expected header or values."""


def format_float(value: float | None) -> str:
    """10 significant digits, scientific; NaN/None become NA."""
    if value is None or math.isnan(value):
        return NA
    return f"{value:.9e}"


def run_id(row: ResultRow) -> str:
    """First 12 hex digits of the SHA-1 of the row's provenance, code version included."""
    provenance = "|".join(
        [
            f"seed={row.seed if row.seed is not None else NA}",
            f"n={row.n}",
            f"N={row.N}",
            f"ell={row.ell}",
            f"eps={row.eps!r}",
            f"nloc={row.nloc}",
            f"contrast={row.contrast!r}",
            f"version={row.version}",
        ]
    )
    return hashlib.sha1(provenance.encode("utf-8")).hexdigest()[:12]


def row_record(row: ResultRow, timings: bool = False) -> dict[str, str]:
    r = row.report
    return {
        "run_id": run_id(row),
        "seed": str(row.seed) if row.seed is not None else NA,
        "n": str(row.n),
        "N": str(row.N),
        "ell": str(row.ell),
        "eps": format_float(row.eps),
        "nloc": str(row.nloc),
        "contrast": format_float(row.contrast),
        "kappa": str(r.kappa),
        "kappa_star": str(r.kappa_star),
        "coarse_dim": str(r.coarse_dim),
        "err_energy": format_float(r.err_energy),
        "err_rel": format_float(r.err_rel),
        "bound_thm21": format_float(r.bound_thm21),
        "t_local_s": format_float(r.t_local_s) if timings else NA,
        "t_coarse_s": format_float(r.t_coarse_s) if timings else NA,
    }


def to_csv(rows: Sequence[ResultRow], timings: bool = False) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row_record(row, timings))
    return buffer.getvalue()


def write_csv(rows: Sequence[ResultRow], path: str | Path, timings: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_csv(rows, timings))
    return path


def read_csv(path: str | Path) -> list[dict[str, Any]]:
    """Parse a results CSV back into typed records; NA becomes NaN (or None for seed)."""
    text = Path(path).read_text()
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise CsvFormatError(f"{path}: header {reader.fieldnames} does not match {','.join(CSV_COLUMNS)}")
    records = []
    for line, raw in enumerate(reader, start=2):
        try:
            record: dict[str, Any] = {"run_id": raw["run_id"]}
            for key in CSV_COLUMNS[1:]:
                value = raw[key]
                if value is None:
                    raise ValueError(f"missing {key}")
                if value == NA:
                    record[key] = None if key == "seed" else math.nan
                elif key in _INT_COLUMNS:
                    record[key] = int(value)
                else:
                    record[key] = float(value)
        except (TypeError, ValueError) as exc:
            raise CsvFormatError(f"{path}:{line}: {exc}") from exc
        records.append(record)
    return records


def oracle_record(report: OracleReport) -> dict[str, str]:
    return {
        "case_id": report.case_id,
        "kind": report.kind,
        "method": format_float(report.method),
        "oracle": format_float(report.oracle),
        "deviation": format_float(report.deviation) if report.kind == "match" else NA,
        "tolerance": format_float(report.tolerance),
        "passed": "true" if report.passed else "false",
        "detail": report.detail,
    }


def write_oracle_csv(reports: Sequence[OracleReport], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ORACLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for report in reports:
            writer.writerow(oracle_record(report))
    return path


def _json_float(value: float | None) -> float | None:
    return None if value is None or math.isnan(value) or math.isinf(value) else value


def to_json(report: ErrorReport, point: ExperimentPoint | None = None) -> str:
    data: dict[str, Any] = {
        "err_energy": _json_float(report.err_energy),
        "err_rel": _json_float(report.err_rel),
        "bound_thm21": _json_float(report.bound_thm21),
        "bound_holds": report.bound_holds,
        "kappa": report.kappa,
        "kappa_star": report.kappa_star,
        "coarse_dim": report.coarse_dim,
        "dropped": report.dropped,
        "galerkin_residual": _json_float(report.galerkin_residual),
        "local": [
            {
                "subdomain": e.index,
                "best_error": _json_float(e.best_error),
                "nwidth": _json_float(e.nwidth),
                "particular_error": _json_float(e.particular_error),
            }
            for e in report.local
        ],
    }
    if point is not None:
        data = {
            "point": {"n": point.n, "N": point.N, "ell": point.ell, "eps": point.eps, "nloc": point.nloc},
            **data,
        }
    return json.dumps(data, indent=2)


def oracle_to_json(reports: Sequence[OracleReport]) -> str:
    return json.dumps(
        [
            {
                "case_id": r.case_id,
                "kind": r.kind,
                "method": _json_float(r.method),
                "oracle": _json_float(r.oracle),
                "passed": r.passed,
                "detail": r.detail,
            }
            for r in reports
        ],
        indent=2,
    )


def _sci(value: float | None) -> str:
    return "-" if value is None or math.isnan(value) else f"{value:.3e}"


def print_report_table(report: ErrorReport, point: ExperimentPoint, local: bool = False) -> None:
    from rich.console import Console
    from rich.table import Table

    console = Console()

    table = Table(show_edge=False, title=f"n={point.n} N={point.N} ell={point.ell} eps={point.eps:g} nloc={point.nloc}")
    table.add_column("Quantity")
    table.add_column("Value", justify="right")
    table.add_row("||u_h - u_G||_{a,eps}", _sci(report.err_energy))
    table.add_row("relative error", _sci(report.err_rel))
    style = "green" if report.bound_holds else "bold red"
    table.add_row("sqrt(kappa sum e_i^2)", f"[{style}]{_sci(report.bound_thm21)}[/{style}]")
    table.add_row("kappa / kappa*", f"{report.kappa} / {report.kappa_star}")
    table.add_row("coarse dimension", str(report.coarse_dim))
    table.add_row("dropped columns", str(report.dropped))
    table.add_row("Galerkin residual", _sci(report.galerkin_residual))
    console.print(table)

    if local and report.local:
        detail = Table(show_edge=False)
        detail.add_column("Subdomain", justify="right")
        detail.add_column("best local error", justify="right")
        detail.add_column("d_{h,n}", justify="right")
        detail.add_column("||u_h - psi||_{omega*}", justify="right")
        for e in report.local:
            detail.add_row(str(e.index), _sci(e.best_error), _sci(e.nwidth), _sci(e.particular_error))
        console.print(detail)


def print_rows_table(rows: Sequence[ResultRow]) -> None:
    from rich.console import Console
    from rich.table import Table

    console = Console()

    if not rows:
        console.print("[yellow]Sweep produced no rows.[/yellow]")
        return

    table = Table(show_edge=False)
    for name in ("eps", "ell", "nloc", "coarse dim", "error", "relative", "bound"):
        table.add_column(name, justify="right")
    for row in rows:
        r = row.report
        style = "green" if r.bound_holds else "bold red"
        table.add_row(
            f"{row.eps:g}",
            str(row.ell),
            str(row.nloc),
            str(r.coarse_dim),
            _sci(r.err_energy),
            _sci(r.err_rel),
            f"[{style}]{_sci(r.bound_thm21)}[/{style}]",
        )
    console.print(table)


def oversampling_pivot(rows: Sequence[ResultRow]) -> tuple[list[int], dict[float, dict[int, float]]]:
    """Rows ε, columns ℓ, entries the energy error."""
    ells = sorted({row.ell for row in rows})
    table: dict[float, dict[int, float]] = {}
    for row in rows:
        table.setdefault(row.eps, {})[row.ell] = row.report.err_energy
    return ells, dict(sorted(table.items(), reverse=True))


def pivot_csv(rows: Sequence[ResultRow]) -> str:
    ells, table = oversampling_pivot(rows)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["eps"] + [f"ell={ell}" for ell in ells])
    for eps, errors in table.items():
        writer.writerow([format_float(eps)] + [format_float(errors.get(ell, math.nan)) for ell in ells])
    return buffer.getvalue()


def print_pivot_table(rows: Sequence[ResultRow]) -> None:
    from rich.console import Console
    from rich.table import Table

    ells, data = oversampling_pivot(rows)
    table = Table(show_edge=False, title="||u_h - u_G||_{a,eps}, nloc = 0")
    table.add_column("eps", justify="right")
    for ell in ells:
        table.add_column(f"ell={ell}", justify="right")
    for eps, errors in data.items():
        table.add_row(f"{eps:g}", *[_sci(errors.get(ell)) for ell in ells])
    Console().print(table)


def print_oracle_table(reports: Sequence[OracleReport]) -> None:
    from rich.console import Console
    from rich.table import Table

    console = Console()

    if not reports:
        console.print("[yellow]No checks ran.[/yellow]")
        return

    table = Table(show_edge=False)
    table.add_column("Check")
    table.add_column("Method", justify="right")
    table.add_column("Oracle", justify="right")
    table.add_column("Deviation", justify="right")
    table.add_column("Result")

    for r in reports:
        if r.kind == "skip":
            result = "[dim]skipped[/dim]"
        elif r.passed:
            result = "[green]pass[/green]"
        else:
            result = "[bold red]FAIL[/bold red]"
        deviation = _sci(r.deviation) if r.kind == "match" else "-"
        label = f"{r.case_id} ({r.detail})" if r.detail and not r.passed else r.case_id
        table.add_row(label, _sci(r.method), _sci(r.oracle), deviation, result)

    console.print(table)

    failed = sum(1 for r in reports if not r.passed)
    console.print(f"\n{len(reports)} checks, {failed} failed")


def print_presets_table(presets: Sequence[Preset], selected: str | None = None) -> None:
    from rich.console import Console
    from rich.table import Table

    console = Console()

    table = Table(show_edge=False)
    table.add_column("Name")
    table.add_column("n", justify="right")
    table.add_column("N", justify="right")
    table.add_column("s", justify="right")
    table.add_column("Description")

    for preset in presets:
        name = f"[bold]{preset.name}[/bold] (selected)" if preset.name == selected else preset.name
        v = preset.values
        table.add_row(name, str(v.get("n", "-")), str(v.get("N", "-")), str(v.get("s", "-")), preset.description)

    console.print(table)
    console.print(f"\n{len(presets)} presets loaded")
