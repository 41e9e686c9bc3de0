from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from msgfem.errors import ConfigError

DEFAULT_PRESET = "desk"


@dataclass
class Preset:
    name: str
    description: str
    values: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> Preset:
        return cls(name=data["name"], description=data.get("description", ""), values=dict(data.get("values") or {}))


def load_presets(extra_paths: list[Path] | None = None) -> list[Preset]:
    """Load the built-in presets plus any user-supplied YAML files."""
    presets: list[Preset] = []

    package_dir = resources.files("msgfem").joinpath("presets")
    for entry in sorted(package_dir.iterdir(), key=lambda p: p.name):
        if entry.name.endswith((".yaml", ".yml")):
            presets.extend(_load_preset_file(entry.read_text()))

    for path in extra_paths or []:
        presets.extend(_load_preset_file(Path(path).read_text()))

    return presets


def _load_preset_file(text: str) -> list[Preset]:
    data = yaml.safe_load(text) or []
    return [Preset.from_dict(item) for item in data]


def get_preset(name: str) -> Preset:
    presets = {p.name: p for p in load_presets()}
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(presets))}")
    return presets[name]
