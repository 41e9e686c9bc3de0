from pathlib import Path

import pytest

from msgfem.config import ExperimentConfig, load_config
from msgfem.errors import ConfigError


def test_missing_default_config_falls_back_to_desk_preset(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)

    config = load_config(None)

    assert (config.n, config.N, config.s, config.seed) == (256, 8, 1 / 64, 42)
    assert config.ell == [4, 8, 12, 16]
    assert config.ell_fixed == 8


def test_paper_scale_preset_is_selectable(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)

    config = load_config(None, preset="paper-scale")

    assert (config.n, config.N, config.s) == (1000, 10, 0.01)
    assert config.validate() is config


def test_explicit_config_overrides_preset_and_resolves_paths(tmp_path):
    config_path = tmp_path / "run.yaml"
    config_path.write_text("n: 64\nN: 4\neps: 1e-4\nout: results/run1\n")

    config = load_config(config_path)

    assert (config.n, config.N) == (64, 4)
    assert config.eps == [1e-4]
    assert config.out == str(tmp_path / "results" / "run1")
    # untouched keys keep the preset's values
    assert config.ell_fixed == 8


def test_default_config_discovered_in_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    Path("msgfem.yaml").write_text("nloc: [0, 2, 4]\n")

    config = load_config(None)

    assert config.nloc == [0, 2, 4]


def test_explicit_missing_config_is_an_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_unknown_keys_are_rejected(tmp_path):
    config_path = tmp_path / "run.yaml"
    config_path.write_text("n: 64\nsubdomains: 4\n")

    with pytest.raises(ConfigError, match="subdomains"):
        load_config(config_path)


def test_non_mapping_config_is_rejected(tmp_path):
    config_path = tmp_path / "run.yaml"
    config_path.write_text("- 1\n- 2\n")

    with pytest.raises(ConfigError):
        load_config(config_path)


def test_text_form_round_trips():
    config = ExperimentConfig(n=64, N=4, ell=[2, 6], eps=[0.1, 1e-5], nloc=[0, 3], s=1 / 16, raster=None)

    assert ExperimentConfig.from_text(config.to_text()) == config


def test_cli_style_overrides_skip_unset_values():
    config = ExperimentConfig()

    updated = config.updated(n=128, eps=(0.5, 0.25), nloc=(), seed=None)

    assert updated.n == 128
    assert updated.eps == [0.5, 0.25]
    assert updated.nloc == config.nloc
    assert updated.seed == config.seed


@pytest.mark.parametrize(
    "overrides",
    [
        {"n": 30, "N": 4},
        {"eps": [0.0]},
        {"eps": [2.0]},
        {"ell": [-1]},
        {"nloc": [-2]},
        {"s": 0.3},
        {"contrast": 0.5},
        {"solver": "lu"},
        {"particular_bc": "robin"},
        {"source": "spike"},
        {"workers": 0},
        {"n": 16, "N": 4, "overlap": 5},
    ],
)
def test_invalid_values_are_rejected(overrides):
    with pytest.raises(ConfigError):
        ExperimentConfig(**overrides).validate()


def test_missing_raster_is_rejected(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        ExperimentConfig(raster=str(tmp_path / "coef.bin")).validate()


def test_point_defaults_to_fixed_oversampling():
    config = ExperimentConfig(ell=[4, 8], ell_fixed=6, eps=[0.1, 1e-3], nloc=[2, 5])

    point = config.point()

    assert (point.ell, point.eps, point.nloc) == (6, 0.1, 2)
    assert config.point(ell=4, eps=1e-3, nloc=5).ell == 4
