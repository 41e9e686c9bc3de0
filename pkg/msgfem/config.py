from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from msgfem.coefficient import SOURCES, micro_cells
from msgfem.decomposition import DEFAULT_OVERLAP
from msgfem.errors import ConfigError
from msgfem.local import PARTICULAR_BCS
from msgfem.presets import DEFAULT_PRESET, get_preset

log = logging.getLogger(__name__)

DEFAULT_CONFIG_NAME = "msgfem.yaml"
SOLVERS = ("cholesky", "cg")

_LIST_KEYS = {"ell": int, "eps": float, "nloc": int}
_SCALAR_KEYS = {
    "n": int,
    "N": int,
    "ell_fixed": int,
    "overlap": int,
    "seed": int,
    "s": float,
    "contrast": float,
    "source": str,
    "solver": str,
    "particular_bc": str,
    "rtol": float,
    "out": str,
    "workers": int,
}


@dataclass(frozen=True)
class ExperimentPoint:
    """One (n, N, ℓ, ε, n_loc) point of a sweep, with everything needed to rebuild it."""

    n: int
    N: int
    ell: int
    eps: float
    nloc: int
    seed: int
    s: float
    contrast: float
    raster: str | None = None
    source: str = "benchmark"
    solver: str = "cholesky"
    rtol: float = 1e-12
    overlap: int = DEFAULT_OVERLAP
    particular_bc: str = "natural"


@dataclass
class ExperimentConfig:
    """Sweep configuration; its YAML text form round-trips exactly."""

    n: int = 256
    N: int = 8
    ell: list[int] = field(default_factory=lambda: [4, 8, 12, 16])
    ell_fixed: int = 8
    eps: list[float] = field(default_factory=lambda: [0.1, 1e-4])
    nloc: list[int] = field(default_factory=lambda: [0])
    overlap: int = DEFAULT_OVERLAP
    seed: int = 42
    s: float = 1.0 / 64
    contrast: float = 1e4
    raster: str | None = None
    source: str = "benchmark"
    solver: str = "cholesky"
    rtol: float = 1e-12
    particular_bc: str = "natural"
    out: str = "results"
    workers: int = 1

    def validate(self) -> ExperimentConfig:
        if self.n < 2:
            raise ConfigError(f"n must be at least 2, got {self.n}")
        if self.N < 1 or self.n % self.N:
            raise ConfigError(f"N={self.N} must divide n={self.n}")
        if self.N > 1 and not 1 <= self.overlap <= self.n // self.N:
            raise ConfigError(f"overlap must be between 1 and the core width {self.n // self.N}, got {self.overlap}")
        if not self.ell or not self.eps or not self.nloc:
            raise ConfigError("ell, eps and nloc lists must not be empty")
        if min(self.ell) < 0 or self.ell_fixed < 0:
            raise ConfigError(f"oversampling layers must be >= 0, got {self.ell} / ell_fixed={self.ell_fixed}")
        if any(not 0.0 < e <= 1.0 for e in self.eps):
            raise ConfigError(f"every eps must lie in (0, 1], got {self.eps}")
        if min(self.nloc) < 0:
            raise ConfigError(f"nloc entries must be >= 0, got {self.nloc}")
        if self.raster is None:
            micro_cells(self.s)
            if self.contrast < 1.0:
                raise ConfigError(f"contrast must be >= 1, got {self.contrast}")
        elif not Path(self.raster).is_file():
            raise ConfigError(f"coefficient raster {self.raster} does not exist")
        if self.source not in SOURCES:
            raise ConfigError(f"unknown source {self.source!r}; expected one of {', '.join(SOURCES)}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; expected one of {', '.join(SOLVERS)}")
        if self.particular_bc not in PARTICULAR_BCS:
            raise ConfigError(
                f"unknown particular_bc {self.particular_bc!r}; expected one of {', '.join(PARTICULAR_BCS)}"
            )
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        return self

    def point(self, ell: int | None = None, eps: float | None = None, nloc: int | None = None) -> ExperimentPoint:
        return ExperimentPoint(
            n=self.n,
            N=self.N,
            ell=self.ell_fixed if ell is None else ell,
            eps=self.eps[0] if eps is None else eps,
            nloc=self.nloc[0] if nloc is None else nloc,
            seed=self.seed,
            s=self.s,
            contrast=self.contrast,
            raster=self.raster,
            source=self.source,
            solver=self.solver,
            rtol=self.rtol,
            overlap=self.overlap,
            particular_bc=self.particular_bc,
        )

    def updated(self, **overrides: Any) -> ExperimentConfig:
        """Copy with every non-None override applied (CLI flags)."""
        given = {k: v for k, v in overrides.items() if v is not None and v != ()}
        return replace(self, **_coerce(given))

    def to_text(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=False)

    @classmethod
    def from_text(cls, text: str) -> ExperimentConfig:
        return cls.from_dict(_read_mapping(text, "config"))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**_coerce(data))


def _read_mapping(text: str, origin: str) -> dict[str, Any]:
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{origin}: not valid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{origin}: config must be a mapping of keys to values")
    return data


def _resolve_paths(data: dict[str, Any], base_dir: Path) -> dict[str, Any]:
    resolved = dict(data)
    for key in ("raster", "out"):
        if resolved.get(key) is not None and not Path(str(resolved[key])).is_absolute():
            resolved[key] = str(base_dir / str(resolved[key]))
    return resolved


def _coerce(data: dict[str, Any]) -> dict[str, Any]:
    """Normalize YAML/CLI values: scalars become one-item lists, '1e-4' strings become floats."""
    out: dict[str, Any] = {}
    try:
        for key, value in data.items():
            if key in _LIST_KEYS:
                items = value if isinstance(value, (list, tuple)) else [value]
                out[key] = [_LIST_KEYS[key](v) for v in items]
            elif key in _SCALAR_KEYS:
                out[key] = _SCALAR_KEYS[key](value)
            elif key == "raster":
                out[key] = None if value is None else str(value)
            else:
                out[key] = value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in config: {exc}") from exc
    return out


def load_config(path: Path | None, preset: str | None = None) -> ExperimentConfig:
    """Resolve the experiment configuration.

    The preset (default "desk") supplies the base values. A config file
    overrides them: an explicit `path` must exist; when `path` is None,
    `./msgfem.yaml` is used if present. Relative `raster`/`out` paths in the
    file resolve against the file's directory.
    """
    base = ExperimentConfig.from_dict(get_preset(preset or DEFAULT_PRESET).values)

    if path is None:
        default_path = Path(DEFAULT_CONFIG_NAME)
        if not default_path.exists():
            return base
        path = default_path
    elif not Path(path).exists():
        raise ConfigError(f"config file {path} does not exist")

    data = _read_mapping(Path(path).read_text(), str(path))
    log.debug("config %s overrides %s", path, sorted(data))
    return ExperimentConfig.from_dict({**asdict(base), **_resolve_paths(data, Path(path).parent)})
