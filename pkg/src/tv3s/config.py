"""``key = value`` configuration files with ``model.*``, ``train.*``, ``data.*``, ``eval.*`` keys."""

from __future__ import annotations

import os

from .errors import ConfigError

NAMESPACES = ("model", "train", "data", "eval")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {ns: {} for ns in NAMESPACES}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (p.strip() for p in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        merge_setting(out, key, val, f"{source}:{n}")
    return out


def merge_setting(out: dict, key: str, val: str, where: str = "override") -> None:
    ns, dot, name = key.partition(".")
    if not dot or ns not in NAMESPACES or not name:
        raise ConfigError(f"{where}: key {key!r} must be one of {', '.join(n + '.*' for n in NAMESPACES)}")
    out[ns][name] = val


def load_config(path: str | os.PathLike | None) -> dict[str, dict[str, str]]:
    if path is None:
        return {ns: {} for ns in NAMESPACES}
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), os.fspath(path))
