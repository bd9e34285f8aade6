"""Flat TOML experiment configs.

One experiment per file; values are scalars or (nested) arrays. Relative file
paths are resolved against the directory holding the config.
"""
from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SUBCOMMANDS = ("stein", "fourth-moment", "subordinated", "poincare", "multidim")

COMMON_KEYS = {"experiment", "seed", "workers", "stderr_band"}
KEYS = {
    "stein": {"functionals", "n", "hist_bins"},
    "fourth-moment": {"family", "kernels", "ks", "n"},
    "subordinated": {"H", "f", "a", "b", "T", "delta", "replicas", "qmax"},
    "poincare": {"functionals", "p", "n"},
    "multidim": {"functionals", "C", "n"},
}
REQUIRED = {
    "stein": {"functionals", "n"},
    "fourth-moment": {"n"},
    "subordinated": {"H", "f", "T"},
    "poincare": {"functionals", "n"},
    "multidim": {"functionals", "C", "n"},
}


class ConfigError(ValueError):
    """Invalid experiment config; the message names the file and, when known, the line."""


@dataclass
class ExperimentConfig:
    subcommand: str
    values: dict[str, Any]
    path: Path | None = None
    digest: str = ""
    lines: dict[str, int] = field(default_factory=dict)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def resolve(self, name: str) -> Path:
        p = Path(name)
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p

    def fail(self, key: str, msg: str):
        where = str(self.path) if self.path else "<config>"
        if key in self.lines:
            where += f":{self.lines[key]}"
        raise ConfigError(f"{where}: {key}: {msg}")


def _key_lines(text: str) -> dict[str, int]:
    out = {}
    for i, line in enumerate(text.splitlines(), 1):
        head = line.split("=", 1)[0].strip()
        if "=" in line and head and not head.startswith("#"):
            out.setdefault(head.strip('"'), i)
    return out


def parse_config(text: str, *, path: Path | None = None, subcommand: str | None = None) -> ExperimentConfig:
    where = str(path) if path else "<config>"
    try:
        values = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    lines = _key_lines(text)
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{where}:{lines.get(nested[0], '?')}: tables are not supported, keep the file flat")
    exp = values.get("experiment", subcommand)
    if exp is None:
        raise ConfigError(f"{where}: missing 'experiment' key")
    if subcommand is not None and exp != subcommand:
        raise ConfigError(f"{where}:{lines.get('experiment', '?')}: config is for '{exp}', not '{subcommand}'")
    if exp not in SUBCOMMANDS:
        raise ConfigError(f"{where}: unknown experiment '{exp}'")
    cfg = ExperimentConfig(exp, values, path, hashlib.sha256(text.encode()).hexdigest(), lines)
    for key in values:
        if key not in KEYS[exp] | COMMON_KEYS:
            cfg.fail(key, "unknown key")
    for key in sorted(REQUIRED[exp] - values.keys()):
        raise ConfigError(f"{where}: missing required key '{key}'")
    if exp == "fourth-moment" and ("family" in values) == ("kernels" in values):
        raise ConfigError(f"{where}: give exactly one of 'family' or 'kernels'")
    return cfg


def load_config(path, subcommand: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path=path, subcommand=subcommand)
