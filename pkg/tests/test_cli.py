import json
import subprocess

import pytest

SMALL = "n: 16\nN: 2\nell: [1, 2]\nell_fixed: 2\neps: [0.1]\nnloc: [0, 3]\ns: 0.125\ncontrast: 100.0\nseed: 3\n"


def _msgfem(*args, cwd=None, timeout=120):
    return subprocess.run(["msgfem", *args], capture_output=True, text=True, timeout=timeout, cwd=cwd)


def _small_config(tmp_path):
    config_path = tmp_path / "small.yaml"
    config_path.write_text(SMALL)
    return config_path


def test_presets_command_lists_built_in_presets():
    result = _msgfem("presets")

    assert result.returncode == 0
    assert "desk" in result.stdout
    assert "4 presets loaded" in result.stdout


def test_solve_prints_json_and_writes_a_csv_row(tmp_path):
    config_path = _small_config(tmp_path)

    result = _msgfem(
        "solve", "--config", str(config_path), "--nloc", "3", "--out", "out", "--format", "json", cwd=tmp_path
    )

    assert result.returncode == 0, result.stderr
    data = json.loads(result.stdout)
    assert data["point"] == {"n": 16, "N": 2, "ell": 2, "eps": 0.1, "nloc": 3}
    assert data["bound_holds"] is True
    lines = (tmp_path / "out" / "solve.csv").read_text().splitlines()
    assert lines[0].startswith("run_id,seed,n,N,ell,eps,nloc")
    assert len(lines) == 2


def test_invalid_config_exits_with_code_2(tmp_path):
    config_path = tmp_path / "bad.yaml"
    config_path.write_text("n: 30\nN: 4\n")

    result = _msgfem("solve", "--config", str(config_path))

    assert result.returncode == 2
    assert result.stderr.startswith("Error:")


def test_unknown_preset_exits_with_code_2():
    result = _msgfem("solve", "--preset", "huge")

    assert result.returncode == 2
    assert "unknown preset" in result.stderr


def test_sweep_oversampling_writes_rows_and_pivot(tmp_path):
    config_path = _small_config(tmp_path)

    result = _msgfem("sweep-oversampling", "--config", str(config_path), "--out", str(tmp_path / "out"))

    assert result.returncode == 0, result.stderr
    rows = (tmp_path / "out" / "sweep_oversampling.csv").read_text().splitlines()
    assert len(rows) == 3
    table = (tmp_path / "out" / "sweep_oversampling_table.csv").read_text().splitlines()
    assert table[0] == "eps,ell=1,ell=2"


def test_sweep_csv_is_identical_across_worker_counts(tmp_path):
    config_path = _small_config(tmp_path)

    _msgfem("sweep-nloc", "--config", str(config_path), "--out", str(tmp_path / "w1"), "--workers", "1")
    _msgfem("sweep-nloc", "--config", str(config_path), "--out", str(tmp_path / "w2"), "--workers", "2")

    first = (tmp_path / "w1" / "sweep_nloc.csv").read_bytes()
    assert first == (tmp_path / "w2" / "sweep_nloc.csv").read_bytes()


def test_validate_passes_on_a_small_problem(tmp_path):
    config_path = tmp_path / "small.yaml"
    config_path.write_text(SMALL.replace("ell: [1, 2]", "ell: [2]").replace("nloc: [0, 3]", "nloc: [3]"))

    result = _msgfem("validate", "--config", str(config_path), "--csv", str(tmp_path / "oracles.csv"))

    assert result.returncode == 0, result.stdout + result.stderr
    assert "0 failed" in result.stdout
    assert (tmp_path / "oracles.csv").read_text().startswith("case_id,kind,method")


def test_generated_raster_drives_a_solve(tmp_path):
    raster = tmp_path / "coef.bin"
    config_path = _small_config(tmp_path)

    generated = _msgfem("gen-coef", str(raster), "--seed", "7", "--s", "0.125", "--contrast", "100")
    solved = _msgfem(
        "solve", "--config", str(config_path), "--raster", str(raster), "--out", str(tmp_path), "--format", "json"
    )

    assert generated.returncode == 0, generated.stderr
    assert solved.returncode == 0, solved.stderr
    row = (tmp_path / "solve.csv").read_text().splitlines()[1].split(",")
    assert row[1] == "NA"


def test_plotdata_lists_the_written_files(tmp_path):
    config_path = _small_config(tmp_path)
    _msgfem("sweep-nloc", "--config", str(config_path), "--out", str(tmp_path))

    result = _msgfem("plotdata", str(tmp_path / "sweep_nloc.csv"), "--out", str(tmp_path / "plots"))

    assert result.returncode == 0, result.stderr
    written = result.stdout.split()
    assert any(path.endswith("sweep_nloc_nloc_eps1e-01_ell2.dat") for path in written)
    assert any(path.endswith(".fit") for path in written)


def test_solve_accepts_the_zero_trace_particular_condition(tmp_path):
    config_path = _small_config(tmp_path)

    result = _msgfem(
        "solve",
        "--config",
        str(config_path),
        "--particular-bc",
        "zero",
        "--format",
        "json",
        "--out",
        "out",
        cwd=tmp_path,
    )

    assert result.returncode == 0, result.stderr
    assert json.loads(result.stdout)["bound_holds"] is True


def test_unknown_particular_condition_exits_with_code_2(tmp_path):
    config_path = _small_config(tmp_path)

    result = _msgfem("solve", "--config", str(config_path), "--particular-bc", "robin", cwd=tmp_path)

    assert result.returncode == 2


def test_plotdata_of_a_foreign_csv_exits_with_code_2(tmp_path):
    csv_path = tmp_path / "other.csv"
    csv_path.write_text("a,b\n1,2\n")

    result = _msgfem("plotdata", str(csv_path), "--out", str(tmp_path))

    assert result.returncode == 2


@pytest.mark.slow
@pytest.mark.parametrize("preset", ["desk", "desk-plateau"])
@pytest.mark.parametrize("command", ["sweep-nloc", "sweep-oversampling", "sweep-eps"])
def test_desk_scale_sweeps_show_the_expected_trends(tmp_path, command, preset):
    result = _msgfem(command, "--preset", preset, "--check", "--workers", "4", "--out", str(tmp_path), timeout=3600)

    assert result.returncode == 0, result.stdout + result.stderr
