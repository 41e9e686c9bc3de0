import math

import numpy as np
import pytest

import msgfem.fem
import msgfem.validation
from msgfem.coefficient import cell_values, generate_multiscale, sine_source
from msgfem.config import ExperimentConfig
from msgfem.decomposition import build_cover, build_pu
from msgfem.errors import ConfigError
from msgfem.fem import assemble_energy, build_mesh, energy_norm
from msgfem.local import build_extension, build_local, solve_eigenproblem
from msgfem.models import ErrorReport, ResultRow
from msgfem.validation import (
    OracleSizeError,
    SineSolution,
    convergence_rate,
    element_energy,
    exact_energy_error,
    fine_reference,
    linear_fit,
    run_property_suite,
    svd_nwidth_oracle,
    trend_checks,
)


def _small_config(**overrides):
    values = dict(n=16, N=2, ell=[2], ell_fixed=2, eps=[0.1], nloc=[3], s=1 / 8, contrast=100.0, seed=3)
    values.update(overrides)
    return ExperimentConfig(**values).validate()


def _row(eps, ell, nloc, err, n=256, contrast=1.0):
    report = ErrorReport(
        err_energy=err,
        err_rel=err,
        bound_thm21=2 * err,
        kappa=4,
        kappa_star=9,
        coarse_dim=0,
        dropped=0,
        galerkin_residual=0.0,
    )
    return ResultRow(seed=42, n=n, N=8, ell=ell, eps=eps, nloc=nloc, contrast=contrast, report=report, version="test")


def test_fine_solver_converges_at_first_order_in_energy():
    eps = 0.1
    exact = SineSolution(eps)
    hs, errors = [], []
    for n in (32, 64, 128):
        mesh = build_mesh(n)
        fine = fine_reference(mesh, np.ones((n, n)), eps, sine_source())
        hs.append(mesh.h)
        errors.append(exact_energy_error(mesh, fine.u, exact))

    assert convergence_rate(hs, errors) >= 0.9


def test_fine_solver_nodal_error_is_second_order():
    eps = 0.1
    exact = SineSolution(eps)
    errors = []
    for n in (16, 32):
        mesh = build_mesh(n)
        fine = fine_reference(mesh, np.ones((n, n)), eps, sine_source())
        x, y = mesh.node_coords()
        errors.append(np.abs(fine.u - exact(x, y)).max())

    assert errors[0] / errors[1] > 3.0


def test_element_energy_matches_the_assembled_operator():
    mesh = build_mesh(12)
    cells = cell_values(generate_multiscale(4, 1 / 4, 1e3), mesh)
    x = np.random.default_rng(0).standard_normal(mesh.num_nodes)

    op = assemble_energy(mesh, cells, 0.05)

    assert element_energy(mesh, cells, 0.05, x) == pytest.approx(energy_norm(op, x), rel=1e-10)


def test_linear_fit_recovers_a_line():
    slope, intercept, r2 = linear_fit([0.0, 1.0, 2.0, 3.0], [1.0, -1.0, -3.0, -5.0])

    assert slope == pytest.approx(-2.0)
    assert intercept == pytest.approx(1.0)
    assert r2 == pytest.approx(1.0)


def test_linear_fit_of_one_point_is_undefined():
    assert all(math.isnan(v) for v in linear_fit([1.0], [2.0]))


def test_svd_oracle_matches_the_eigenvalues():
    mesh = build_mesh(32)
    cells = cell_values(generate_multiscale(42, 1 / 16, 100.0), mesh)
    cover = build_cover(mesh, N=2, ell=4)
    pu = build_pu(cover, mesh)
    local = build_local(mesh, cells, 0.1, cover, 0, pu)
    ext = build_extension(local)

    sigma = svd_nwidth_oracle(local, ext, count=10)
    roots = np.sqrt(solve_eigenproblem(local, ext, n=10).eigenvalues)

    resolved = sigma >= 1e-3 * sigma[0]
    assert resolved.sum() >= 3
    assert np.allclose(roots[resolved], sigma[resolved], rtol=1e-8, atol=0.0)
    assert np.all(np.diff(sigma) <= 0.0)


def test_svd_oracle_refuses_large_problems(monkeypatch):
    mesh = build_mesh(16)
    cover = build_cover(mesh, N=2, ell=2)
    pu = build_pu(cover, mesh)
    local = build_local(mesh, np.ones((16, 16)), 0.1, cover, 0, pu)
    ext = build_extension(local)
    monkeypatch.setattr(msgfem.validation, "ORACLE_MAX_BOUNDARY", 5)

    with pytest.raises(OracleSizeError):
        svd_nwidth_oracle(local, ext)


def test_property_suite_passes_on_a_small_problem():
    reports = run_property_suite(_small_config())

    failed = [(r.case_id, r.detail) for r in reports if not r.passed]
    assert failed == []
    ids = {r.case_id for r in reports}
    assert "decomposition.partition[eps=0.1]" in ids
    assert "local.nwidth_oracle[eps=0.1]" in ids
    assert "coarse.global_bound[eps=0.1]" in ids
    assert "fem.convergence[eps=0.1]" in ids
    assert "local.particular_stability[eps=0.1]" in ids
    skipped = [r for r in reports if r.case_id == "trend.ell.particular[eps=0.1]"]
    assert skipped[0].kind == "skip"


@pytest.mark.parametrize("particular_bc", ["natural", "zero"])
def test_particular_functions_improve_with_oversampling_below_h(particular_bc):
    config = _small_config(eps=[1e-3], ell=[1, 2, 3], contrast=1.0, particular_bc=particular_bc)

    reports = {r.case_id: r for r in run_property_suite(config)}

    decay = reports["trend.ell.particular[eps=0.001]"]
    assert decay.kind == "check"
    assert decay.passed, decay.detail
    assert reports["local.particular_stability[eps=0.001]"].passed
    assert reports["local.particular_residual[eps=0.001]"].passed
    assert decay.detail.count("ell=") == 3


def test_property_suite_catches_an_indefinite_operator(monkeypatch):
    # with the mass sign flipped, a(u, u) < 0 for smooth u whenever 2π²ε² < 1
    monkeypatch.setattr(msgfem.fem, "Q1_MASS", -msgfem.fem.Q1_MASS)

    reports = run_property_suite(_small_config(contrast=1.0))

    spd = [r for r in reports if r.case_id == "fem.spd[eps=0.1]"]
    assert spd and not spd[0].passed


def test_property_suite_reports_crashing_stages_as_failures(tmp_path):
    config = _small_config()
    config.raster = str(tmp_path / "missing.bin")

    reports = run_property_suite(config)

    assert len(reports) == 1
    assert reports[0].case_id == "setup"
    assert not reports[0].passed
    assert "FileNotFoundError" in reports[0].detail


def test_nloc_trend_in_the_regular_regime():
    rows = [_row(0.1, 8, k, 10.0 ** (-k / 2)) for k in range(0, 11)]

    reports = trend_checks(rows, "nloc")

    assert {r.case_id.split("[")[0] for r in reports} == {
        "trend.nloc.monotone",
        "trend.nloc.drop",
        "trend.nloc.slope",
    }
    assert all(r.passed for r in reports)


def test_nloc_trend_flags_an_increase():
    rows = [_row(0.1, 8, 0, 1.0), _row(0.1, 8, 1, 2.0), _row(0.1, 8, 2, 1e-4)]

    reports = trend_checks(rows, "nloc")

    monotone = [r for r in reports if r.case_id.startswith("trend.nloc.monotone")]
    assert not monotone[0].passed


def test_nloc_plateau_in_the_singular_regime():
    flat = [_row(1e-4, 8, k, 1e-5 * (1 - 0.01 * k)) for k in range(0, 21)]
    steep = [_row(1e-4, 8, k, 1e-5 * 10.0 ** (-k / 5)) for k in range(0, 21)]

    assert all(r.passed for r in trend_checks(flat, "nloc"))
    plateau = [r for r in trend_checks(steep, "nloc") if r.case_id.startswith("trend.nloc.plateau")]
    assert not plateau[0].passed


def test_oversampling_trends():
    singular = [_row(1e-4, ell, 0, 10.0 ** (-ell / 2)) for ell in (4, 8, 12, 16)]
    regular = [_row(0.1, ell, 0, 30.0 - ell / 10) for ell in (4, 8, 12, 16)]
    plateau = [_row(eps, ell, 0, 1e-6 * (1.5 if eps == 1e-6 else 1.0)) for eps in (1e-5, 1e-6) for ell in (4, 8)]

    reports = trend_checks(singular + regular + plateau, "oversampling", particular_bc="zero")

    failed = [r.case_id for r in reports if not r.passed]
    assert failed == [
        "trend.ell.strict_decrease[eps=1e-06,nloc=0]",
        "trend.ell.drop[eps=1e-06,nloc=0]",
        "trend.ell.strict_decrease[eps=1e-05,nloc=0]",
        "trend.ell.drop[eps=1e-05,nloc=0]",
    ]
    assert any(r.case_id.startswith("trend.ell.slow_decay") and r.passed for r in reports)
    assert sum(r.case_id.startswith("trend.ell.plateau") for r in reports) == 2


def test_eps_trend_drops_then_plateaus():
    rows = [_row(eps, 8, 0, err) for eps, err in [(0.1, 1.0), (1e-3, 1e-3), (1e-5, 1e-6), (1e-6, 1.2e-6)]]

    reports = trend_checks(rows, "eps", particular_bc="zero")

    assert [r.case_id for r in reports] == [
        "trend.eps.drop[ell=8,nloc=0]",
        "trend.eps.plateau[eps=1e-05/1e-06,ell=8,nloc=0]",
    ]
    assert all(r.passed for r in reports)


def test_natural_condition_only_forbids_growth_toward_smaller_eps():
    falling = [_row(eps, 8, 0, err) for eps, err in [(1e-5, 1e-6), (1e-6, 1e-8)]]
    rising = [_row(eps, 8, 0, err) for eps, err in [(1e-5, 1e-6), (1e-6, 3e-6)]]

    natural = trend_checks(falling, "eps")
    zero = trend_checks(falling, "eps", particular_bc="zero")

    assert [(r.case_id, r.passed) for r in natural] == [("trend.eps.no_growth[eps=1e-05/1e-06,ell=8,nloc=0]", True)]
    assert [(r.case_id, r.passed) for r in zero] == [("trend.eps.plateau[eps=1e-05/1e-06,ell=8,nloc=0]", False)]
    assert not trend_checks(rising, "eps")[0].passed


def test_high_contrast_keeps_small_eps_out_of_the_singular_regime():
    # ε·sqrt(1e4) = 1e-2 at ε = 1e-4, well above h = 1/256
    steep = [_row(1e-4, 8, k, 1e-5 * 10.0 ** (-k / 5), contrast=1e4) for k in range(0, 21)]
    tiny = [_row(eps, 8, 0, err, contrast=1e4) for eps, err in [(1e-5, 1e-6), (1e-6, 1e-8)]]

    nloc = trend_checks(steep, "nloc")
    eps = trend_checks(tiny, "eps", particular_bc="zero")

    assert [r.case_id.split("[")[0] for r in nloc] == ["trend.nloc.monotone"]
    assert all(r.passed for r in nloc)
    assert eps == []


def test_unknown_trend_kind_is_a_config_error():
    with pytest.raises(ConfigError):
        trend_checks([], "contrast")
