"""Heterogeneous diffusion coefficients and the benchmark source term.

A coefficient is a raster of positive values on an m x m micro-grid of width
s = 1/m. Synthetic rasters are log-uniform: every micro-cell independently gets
``10 ** (u * log10(contrast))`` with u uniform on [0, 1), drawn from numpy's
Philox generator (a 64-bit counter-based bit generator) keyed by the seed, in
row-major order (y rows, x fastest). Philox is stable across numpy releases, so a
(seed, s, contrast) triple always names the same raster.

Raster files start with a text header terminated by ``end_header``::

    MSGFEM-COEF v1
    m 64
    s 0.015625
    a_min 1.0
    a_max 10000.0
    seed 42
    end_header

followed by m*m little-endian float64 values, row-major.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from msgfem.errors import ConfigError
from msgfem.fem import StructuredMesh

log = logging.getLogger(__name__)

RASTER_MAGIC = "MSGFEM-COEF v1"
_END_HEADER = "end_header"


class GridMismatchError(ConfigError):
    """Raised when 1/s is not an integer micro-cell count."""


class DomainError(ConfigError):
    """Raised when a coefficient is evaluated outside the closed unit square."""


class RasterFormatError(ConfigError):
    """Raised for raster files that don't follow the MSGFEM-COEF v1 layout."""


@dataclass(frozen=True)
class CoefficientField:
    """Per-micro-cell diffusion values, indexed ``[j, i]`` (row j is the y-band)."""

    values: np.ndarray
    a_min: float
    a_max: float
    seed: int | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ConfigError(f"coefficient raster must be square, got shape {values.shape}")
        if not 0.0 < self.a_min <= self.a_max:
            raise ConfigError(f"invalid coefficient bounds a_min={self.a_min}, a_max={self.a_max}")
        if values.min() < self.a_min or values.max() > self.a_max:
            raise ConfigError(
                f"raster values [{values.min()}, {values.max()}] fall outside recorded bounds "
                f"[{self.a_min}, {self.a_max}]"
            )
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def s(self) -> float:
        return 1.0 / self.m

    @classmethod
    def constant(cls, value: float = 1.0, m: int = 1) -> CoefficientField:
        return cls(np.full((m, m), float(value)), a_min=float(value), a_max=float(value))


def micro_cells(s: float) -> int:
    m = round(1.0 / s)
    if m < 1 or not math.isclose(m * s, 1.0, rel_tol=0.0, abs_tol=1e-12):
        raise GridMismatchError(f"micro-cell width s={s} does not divide the unit interval")
    return m


def generate_multiscale(seed: int, s: float, contrast: float) -> CoefficientField:
    if contrast < 1.0:
        raise ConfigError(f"contrast must be >= 1, got {contrast}")
    m = micro_cells(s)
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.random((m, m))
    values = 10.0 ** (u * math.log10(contrast))
    log.debug("generated %dx%d raster seed=%d contrast=%g", m, m, seed, contrast)
    return CoefficientField(values, a_min=1.0, a_max=float(contrast), seed=seed)


def _micro_index(t: np.ndarray, m: int) -> np.ndarray:
    # half-open micro-cells, lower-left closed; the right/top edge belongs to the last cell
    idx = np.floor(t * m).astype(int)
    # t * m can round below an integer when t is exactly an edge k/m
    idx = np.where((idx + 1) / m <= t, idx + 1, idx)
    return np.clip(idx, 0, m - 1)


def eval_coefficient(field: CoefficientField, x: Any, y: Any) -> Any:
    """Value of the micro-cell containing (x, y); scalars in, scalar out."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if np.any((xa < 0.0) | (xa > 1.0) | (ya < 0.0) | (ya > 1.0)):
        raise DomainError(f"point(s) outside the unit square: x={x}, y={y}")
    value = field.values[_micro_index(ya, field.m), _micro_index(xa, field.m)]
    return float(value) if value.ndim == 0 else value


def cell_values(field: CoefficientField, mesh: StructuredMesh) -> np.ndarray:
    """Sample the raster at every fine-cell midpoint, indexed ``[cj, ci]``."""
    if mesh.n % field.m and field.m % mesh.n:
        log.warning("fine mesh n=%d and micro-grid m=%d are not nested; sampling at cell midpoints", mesh.n, field.m)
    mid = (np.arange(mesh.n) + 0.5) * mesh.h
    return field.values[np.ix_(_micro_index(mid, field.m), _micro_index(mid, field.m))]


def save_raster(field: CoefficientField, path: str | Path) -> None:
    header = [
        RASTER_MAGIC,
        f"m {field.m}",
        f"s {field.s!r}",
        f"a_min {field.a_min!r}",
        f"a_max {field.a_max!r}",
        f"seed {field.seed if field.seed is not None else 'none'}",
        _END_HEADER,
    ]
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    Path(path).write_bytes(("\n".join(header) + "\n").encode("ascii") + payload)


def load_raster(path: str | Path) -> CoefficientField:
    data = Path(path).read_bytes()
    marker = f"\n{_END_HEADER}\n".encode("ascii")
    cut = data.find(marker)
    if not data.startswith(RASTER_MAGIC.encode("ascii")) or cut < 0:
        raise RasterFormatError(f"{path}: not a {RASTER_MAGIC} raster")

    entries: dict[str, str] = {}
    for line in data[:cut].decode("ascii").splitlines()[1:]:
        key, _, value = line.partition(" ")
        entries[key] = value.strip()
    try:
        m = int(entries["m"])
        a_min = float(entries["a_min"])
        a_max = float(entries["a_max"])
    except (KeyError, ValueError) as exc:
        raise RasterFormatError(f"{path}: incomplete raster header ({exc})") from exc

    payload = data[cut + len(marker) :]
    if len(payload) != 8 * m * m:
        raise RasterFormatError(f"{path}: expected {m * m} float64 values, found {len(payload)} bytes")
    values = np.frombuffer(payload, dtype="<f8").reshape(m, m).astype(float)
    seed = entries.get("seed", "none")
    return CoefficientField(values, a_min=a_min, a_max=a_max, seed=None if seed == "none" else int(seed))


@dataclass(frozen=True)
class SourceField:
    """Analytic right-hand side f, selected by `kind` with its parameters."""

    kind: str
    params: dict[str, float] = field(default_factory=dict)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        p = self.params
        if self.kind == "gaussian":
            return p["amplitude"] * np.exp(-p["rate"] * ((x - p["x0"]) ** 2 + (y - p["y0"]) ** 2))
        if self.kind == "sine":
            return np.sin(np.pi * x) * np.sin(np.pi * y)
        if self.kind == "constant":
            return np.full(np.broadcast(x, y).shape, p.get("value", 1.0))
        raise ConfigError(f"unknown source kind {self.kind!r}")


def benchmark_source() -> SourceField:
    """f(x) = 10 exp(-10 (x1 - 0.15)² - 10 (x2 - 0.55)²)."""
    return SourceField("gaussian", {"amplitude": 10.0, "rate": 10.0, "x0": 0.15, "y0": 0.55})


def sine_source() -> SourceField:
    """sin(πx) sin(πy): with A ≡ 1 the exact solution is f / (1 + 2π²ε²)."""
    return SourceField("sine")


def constant_source(value: float = 1.0) -> SourceField:
    return SourceField("constant", {"value": value})


SOURCES = {"benchmark": benchmark_source, "sine": sine_source, "constant": constant_source}
