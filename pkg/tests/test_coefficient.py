import numpy as np
import pytest

from msgfem.coefficient import (
    CoefficientField,
    DomainError,
    GridMismatchError,
    RasterFormatError,
    benchmark_source,
    cell_values,
    eval_coefficient,
    generate_multiscale,
    load_raster,
    save_raster,
)
from msgfem.errors import ConfigError
from msgfem.fem import build_mesh


def test_same_seed_gives_same_raster():
    first = generate_multiscale(42, 1 / 64, 1e4)
    second = generate_multiscale(42, 1 / 64, 1e4)

    assert np.array_equal(first.values, second.values)
    assert first.m == 64


def test_different_seed_gives_different_raster():
    first = generate_multiscale(1, 1 / 16, 1e4)
    second = generate_multiscale(2, 1 / 16, 1e4)

    assert not np.array_equal(first.values, second.values)


def test_values_stay_within_contrast():
    field = generate_multiscale(42, 0.01, 1e4)

    assert field.values.min() >= 1.0
    assert field.values.max() <= 1e4
    # log-uniform: the median sits near the geometric middle
    assert 10**1.8 < np.median(field.values) < 10**2.2


def test_micro_scale_must_divide_unit_interval():
    with pytest.raises(GridMismatchError):
        generate_multiscale(0, 0.3, 10.0)


def test_contrast_below_one_is_rejected():
    with pytest.raises(ConfigError):
        generate_multiscale(0, 0.25, 0.5)


def test_evaluation_uses_half_open_cells():
    values = np.array([[1.0, 2.0], [3.0, 4.0]])
    field = CoefficientField(values, a_min=1.0, a_max=4.0)

    assert eval_coefficient(field, 0.25, 0.25) == 1.0
    assert eval_coefficient(field, 0.5, 0.25) == 2.0
    assert eval_coefficient(field, 0.25, 0.5) == 3.0
    # the closed right/top edge belongs to the last cell
    assert eval_coefficient(field, 1.0, 1.0) == 4.0


def test_micro_cell_edges_are_exact():
    m = 100
    values = np.tile(np.arange(m, dtype=float) + 1.0, (m, 1))
    field = CoefficientField(values, a_min=1.0, a_max=float(m))

    # 0.29 * 100 rounds to 28.999999999999996; the edge still opens cell 29
    assert eval_coefficient(field, 0.29, 0.5) == 30.0
    assert eval_coefficient(field, np.nextafter(0.29, 0.0), 0.5) == 29.0
    assert eval_coefficient(field, 0.29 - 1e-12, 0.5) == 29.0


def test_evaluation_outside_domain_raises():
    field = CoefficientField.constant(1.0)

    with pytest.raises(DomainError):
        eval_coefficient(field, 1.5, 0.5)


def test_cell_values_refine_micro_cells():
    values = np.array([[1.0, 2.0], [3.0, 4.0]])
    field = CoefficientField(values, a_min=1.0, a_max=4.0)

    cells = cell_values(field, build_mesh(4))

    assert cells.shape == (4, 4)
    assert cells[0, 0] == cells[1, 1] == 1.0
    assert cells[0, 3] == 2.0
    assert cells[3, 0] == 3.0


def test_raster_file_round_trips(tmp_path):
    field = generate_multiscale(3, 1 / 8, 100.0)
    path = tmp_path / "coef.bin"

    save_raster(field, path)
    loaded = load_raster(path)

    assert np.array_equal(loaded.values, field.values)
    assert loaded.seed == 3
    assert loaded.a_max == 100.0


def test_truncated_raster_is_rejected(tmp_path):
    field = generate_multiscale(3, 1 / 8, 100.0)
    path = tmp_path / "coef.bin"
    save_raster(field, path)
    path.write_bytes(path.read_bytes()[:-8])

    with pytest.raises(RasterFormatError):
        load_raster(path)


def test_foreign_file_is_rejected(tmp_path):
    path = tmp_path / "coef.bin"
    path.write_bytes(b"P6\n8 8\n255\n")

    with pytest.raises(RasterFormatError):
        load_raster(path)


def test_benchmark_source_peaks_at_its_centre():
    f = benchmark_source()

    assert f(np.array(0.15), np.array(0.55)) == pytest.approx(10.0)
    assert f(np.array(0.9), np.array(0.1)) < 10.0 * np.exp(-5.0)
