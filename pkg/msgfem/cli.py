from __future__ import annotations

import logging
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import click

from msgfem.config import SOLVERS, ExperimentConfig, load_config
from msgfem.errors import ConfigError, NumericalError
from msgfem.local import PARTICULAR_BCS
from msgfem.models import ResultRow

log = logging.getLogger("msgfem")


class ConfigFailure(click.ClickException):
    exit_code = 2


class NumericalFailure(click.ClickException):
    exit_code = 3


class AcceptanceFailure(click.ClickException):
    exit_code = 4


@contextmanager
def _mapped_errors() -> Iterator[None]:
    """Turn library errors into one-line messages with the documented exit codes."""
    try:
        yield
    except ConfigError as exc:
        raise ConfigFailure(str(exc)) from exc
    except NumericalError as exc:
        raise NumericalFailure(str(exc)) from exc


def _setup_logging(verbose: bool) -> None:
    from rich.console import Console
    from rich.logging import RichHandler

    handler = RichHandler(console=Console(stderr=True), show_path=False, show_time=False)
    logging.basicConfig(level=logging.WARNING, format="%(message)s", handlers=[handler], force=True)
    log.setLevel(logging.DEBUG if verbose else logging.WARNING)


def _config_options(f: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(exists=True, path_type=Path),
            default=None,
            help="Experiment config YAML (default: ./msgfem.yaml if present)",
        ),
        click.option("--preset", default=None, help="Named preset the config file builds on (default: desk)"),
        click.option("--paper-scale", is_flag=True, help="Shorthand for --preset paper-scale"),
        click.option("--n", "n", type=int, default=None, help="Fine mesh cells per axis"),
        click.option("--N", "N", type=int, default=None, help="Subdomains per axis"),
        click.option("--seed", type=int, default=None, help="Seed of the synthetic coefficient"),
        click.option("--s", "s", type=float, default=None, help="Micro-scale of the synthetic coefficient"),
        click.option("--contrast", type=float, default=None, help="a_max / a_min of the synthetic coefficient"),
        click.option(
            "--raster",
            type=click.Path(exists=True, dir_okay=False),
            default=None,
            help="Coefficient raster file instead of the synthetic one",
        ),
        click.option("--solver", type=click.Choice(SOLVERS), default=None, help="Fine and local SPD solver"),
        click.option(
            "--particular-bc",
            type=click.Choice(PARTICULAR_BCS),
            default=None,
            help="Condition of the local particular problems on the inner boundary of the oversampling domain",
        ),
        click.option(
            "--workers",
            type=int,
            default=None,
            envvar="MSGFEM_WORKERS",
            help="Processes for the local stage (env: MSGFEM_WORKERS, default 1)",
        ),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory"),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _resolve(config_path: Path | None, preset: str | None, paper_scale: bool, **overrides: Any) -> ExperimentConfig:
    if paper_scale and preset:
        raise click.UsageError("pass at most one of --preset and --paper-scale")
    with _mapped_errors():
        config = load_config(config_path, "paper-scale" if paper_scale else preset)
        config = config.updated(**overrides).validate()
    log.debug("resolved config:\n%s", config.to_text())
    return config


@click.group()
@click.version_option(package_name="msgfem")
@click.option("-v", "--verbose", is_flag=True, help="Log stage timings and per-subdomain detail")
def main(verbose: bool) -> None:
    """msgfem: multiscale spectral GFEM for singularly perturbed reaction-diffusion problems."""
    _setup_logging(verbose)


@main.command()
@_config_options
@click.option("--ell", type=int, default=None, help="Oversampling layers")
@click.option("--eps", type=float, default=None, help="Singular perturbation parameter")
@click.option("--nloc", type=int, default=None, help="Local eigenfunctions per subdomain")
@click.option("--format", "output_format", type=click.Choice(["table", "json"]), default="table")
@click.option("--local", "show_local", is_flag=True, help="Also print one row per subdomain")
@click.option("--timings", is_flag=True, help="Write wall-clock timings instead of NA")
@click.option(
    "--save-fields",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Write x, y, u_h, u_p, u_G as fields.npz into this directory",
)
@click.option(
    "--save-bases",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Store every subdomain's spectral basis in this directory",
)
@click.option(
    "--load-bases",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    default=None,
    help="Reuse bases stored by --save-bases instead of solving the eigenproblems",
)
def solve(
    ell: int | None,
    eps: float | None,
    nloc: int | None,
    output_format: str,
    show_local: bool,
    timings: bool,
    save_fields: Path | None,
    save_bases: Path | None,
    load_bases: Path | None,
    **common: Any,
) -> None:
    """Solve one point and report the global error against the fine reference."""
    from msgfem import harness
    from msgfem.report import print_report_table, to_json, write_csv

    config = _resolve(**common, ell_fixed=ell, eps=eps, nloc=nloc)
    point = config.point()
    with _mapped_errors():
        run = harness.run_point(point, workers=config.workers, load_dir=load_bases, save_dir=save_bases)
        report = run.report()
        path = write_csv([harness.result_row(point, point.nloc, report)], Path(config.out) / "solve.csv", timings)
        if save_fields is not None:
            click.echo(f"wrote {harness.save_fields(run, save_fields)}", err=True)
    click.echo(f"wrote {path}", err=True)

    if output_format == "json":
        click.echo(to_json(report, point))
    else:
        print_report_table(report, point, local=show_local)


def _sweep_command(name: str, function: str, trend_kind: str, help_text: str) -> None:
    @main.command(name=name, help=help_text)
    @_config_options
    @click.option("--ell", type=int, multiple=True, help="Oversampling layers (repeatable)")
    @click.option("--ell-fixed", type=int, default=None, help="Oversampling layers for fixed-ell sweeps")
    @click.option("--eps", type=float, multiple=True, help="Singular perturbation parameter (repeatable)")
    @click.option("--nloc", type=int, multiple=True, help="Local eigenfunctions per subdomain (repeatable)")
    @click.option("--timings", is_flag=True, help="Write wall-clock timings instead of NA")
    @click.option("--check", is_flag=True, help="Evaluate the expected error trends; exit 4 if any fails")
    def command(
        ell: tuple[int, ...],
        ell_fixed: int | None,
        eps: tuple[float, ...],
        nloc: tuple[int, ...],
        timings: bool,
        check: bool,
        **common: Any,
    ) -> None:
        from msgfem import harness
        from msgfem.report import pivot_csv, print_oracle_table, print_pivot_table, print_rows_table, write_csv
        from msgfem.validation import trend_checks

        config = _resolve(**common, ell=ell, ell_fixed=ell_fixed, eps=eps, nloc=nloc)
        sweep: Callable[..., list[ResultRow]] = getattr(harness, function)
        failures: list[str] = []
        with _mapped_errors():
            rows = sweep(config, workers=config.workers, failures=failures)
        out = Path(config.out)
        path = write_csv(rows, out / f"{function}.csv", timings)
        click.echo(f"wrote {path} ({len(rows)} rows)", err=True)
        if trend_kind == "oversampling":
            table = out / f"{function}_table.csv"
            table.write_text(pivot_csv(rows))
            click.echo(f"wrote {table}", err=True)
            print_pivot_table(rows)
        else:
            print_rows_table(rows)

        if failures:
            raise NumericalFailure(f"{len(failures)} point(s) failed: " + "; ".join(failures))
        if check:
            with _mapped_errors():
                reports = trend_checks(rows, trend_kind, config.particular_bc)
            print_oracle_table(reports)
            failed = [r.case_id for r in reports if not r.passed]
            if failed:
                raise AcceptanceFailure(f"trend check(s) failed: {', '.join(failed)}")


_sweep_command(
    "sweep-nloc",
    "sweep_nloc",
    "nloc",
    "Error against n_loc for every ε, at ell-fixed oversampling layers.",
)
_sweep_command(
    "sweep-oversampling",
    "sweep_oversampling",
    "oversampling",
    "Error against oversampling layers for every ε, with n_loc = 0 (particular functions only).",
)
_sweep_command(
    "sweep-eps",
    "sweep_eps",
    "eps",
    "Error against ε for every n_loc, at ell-fixed oversampling layers.",
)


@main.command()
@_config_options
@click.option("--ell", type=int, default=None, help="Oversampling layers")
@click.option("--eps", type=float, multiple=True, help="Checked ε values (repeatable; default: the config's)")
@click.option("--nloc", type=int, default=None, help="Local eigenfunctions per subdomain")
@click.option("--format", "output_format", type=click.Choice(["table", "json"]), default="table")
@click.option(
    "--csv",
    "csv_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Also write one row per check to this CSV",
)
def validate(
    ell: int | None,
    eps: tuple[float, ...],
    nloc: int | None,
    output_format: str,
    csv_path: Path | None,
    **common: Any,
) -> None:
    """Run every module's property checks and oracles; exit 4 if any fails."""
    from msgfem.report import oracle_to_json, print_oracle_table, write_oracle_csv
    from msgfem.validation import run_property_suite

    config = _resolve(**common, ell_fixed=ell, eps=eps, nloc=nloc)
    with _mapped_errors():
        reports = run_property_suite(config)
    if csv_path is not None:
        click.echo(f"wrote {write_oracle_csv(reports, csv_path)}", err=True)

    if output_format == "json":
        click.echo(oracle_to_json(reports))
    else:
        print_oracle_table(reports)

    failed = [r.case_id for r in reports if not r.passed]
    if failed:
        raise AcceptanceFailure(f"{len(failed)} check(s) failed: {', '.join(failed)}")


@main.command(name="gen-coef")
@click.argument("output", type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, path_type=Path),
    default=None,
    help="Experiment config YAML (default: ./msgfem.yaml if present)",
)
@click.option("--preset", default=None, help="Named preset the config file builds on (default: desk)")
@click.option("--seed", type=int, default=None)
@click.option("--s", "s", type=float, default=None, help="Micro-scale; 1/s must be an integer")
@click.option("--contrast", type=float, default=None)
def gen_coef(
    output: Path,
    config_path: Path | None,
    preset: str | None,
    seed: int | None,
    s: float | None,
    contrast: float | None,
) -> None:
    """Write the synthetic log-uniform coefficient as a raster file."""
    from msgfem.coefficient import generate_multiscale, save_raster

    config = _resolve(config_path, preset, False, seed=seed, s=s, contrast=contrast)
    with _mapped_errors():
        field = generate_multiscale(config.seed, config.s, config.contrast)
        output.parent.mkdir(parents=True, exist_ok=True)
        save_raster(field, output)
    click.echo(f"wrote {output} ({field.m}x{field.m} cells, values in [{field.a_min:g}, {field.a_max:g}])", err=True)


@main.command()
@click.argument("csv_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("plotdata"))
def plotdata(csv_path: Path, out: Path) -> None:
    """Write two-column plot data and fitted lines for a sweep CSV."""
    from msgfem.harness import emit_plotdata

    with _mapped_errors():
        written = emit_plotdata(csv_path, out)
    for path in written:
        click.echo(str(path))


@main.command(name="presets")
@click.option("--preset", default=None, help="Highlight this preset")
@click.option("--paper-scale", is_flag=True, help="Highlight the paper-scale preset")
def list_presets(preset: str | None, paper_scale: bool) -> None:
    """List the packaged configuration presets."""
    from msgfem.presets import DEFAULT_PRESET, load_presets
    from msgfem.report import print_presets_table

    print_presets_table(load_presets(), "paper-scale" if paper_scale else preset or DEFAULT_PRESET)


if __name__ == "__main__":
    main()
