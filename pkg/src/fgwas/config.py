"""Flat ``key = value`` configuration files."""
from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped.

    Keys are normalized to underscores so ``burn-in`` and ``burn_in`` agree.
    Values stay strings; the command-line parser converts them.
    """
    out: dict[str, str] = {}
    path = Path(path)
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}, line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}, line {lineno}: empty key")
        key = key.replace("-", "_")
        if key in out:
            raise ConfigError(f"{path}, line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def write_config(values: dict, path) -> Path:
    path = Path(path)
    lines = [f"{k} = {v}" for k, v in values.items() if v is not None]
    path.write_text("\n".join(lines) + "\n")
    return path
