"""Checkpoint directories: ``manifest.txt`` plus one TVT1 file per parameter."""

from __future__ import annotations

import os

import numpy as np

from . import tvt
from .decoder import TV3S, DecoderConfig, config_from_dict
from .errors import ConfigError, FormatError


def save_checkpoint(model: TV3S, path: str | os.PathLike) -> None:
    os.makedirs(path, exist_ok=True)
    lines = [f"config.{k} = {v}" for k, v in model.cfg.as_dict().items()]
    lines.append(f"dtype = {np.dtype(model.dtype).name}")
    for p in model.params():
        fname = f"{p.name}.tvt"
        tvt.save(os.path.join(path, fname), p.data)
        lines.append(f"param {p.name} = {fname}")
    with open(os.path.join(path, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str | os.PathLike) -> tuple[dict, dict, dict]:
    manifest = os.path.join(path, "manifest.txt")
    if not os.path.isfile(manifest):
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest}")
    config, files, meta = {}, {}, {}
    with open(manifest, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = (p.strip() for p in line.partition("="))
            if not sep:
                raise FormatError(f"{manifest}:{n}: expected 'key = value'")
            if key.startswith("config."):
                config[key[7:]] = val
            elif key.startswith("param "):
                files[key[6:]] = val
            else:
                meta[key] = val
    return config, files, meta


def load_checkpoint(path: str | os.PathLike, expect: DecoderConfig | None = None) -> TV3S:
    """Rebuild the saved model; refuse if ``expect`` disagrees with the saved config."""
    config, files, meta = read_manifest(path)
    saved = config_from_dict(config)
    model = TV3S(saved, np.dtype(meta.get("dtype", "float32")))
    if expect is not None and expect != saved:
        probe = TV3S(expect, model.dtype)
        diffs = [f"{k}: checkpoint {a} != requested {b}"
                 for k, a, b in ((k, getattr(saved, k), getattr(expect, k)) for k in saved.as_dict())
                 if a != b]
        first = _first_mismatch(probe, files, path)
        msg = "checkpoint config differs (" + "; ".join(diffs) + ")"
        if first:
            msg += f"; first mismatching tensor: {first}"
        raise ConfigError(msg)
    load_into(model, path, files)
    return model


def _first_mismatch(model: TV3S, files: dict, path) -> str | None:
    for p in model.params():
        fname = files.get(p.name)
        if fname is None:
            return f"{p.name} (absent from checkpoint)"
        arr = tvt.load(os.path.join(path, fname))
        if arr.shape != p.shape:
            return f"{p.name} {arr.shape} vs {p.shape}"
    return None


def load_into(model: TV3S, path: str | os.PathLike, files: dict | None = None) -> TV3S:
    """Copy saved parameters into an existing model; any shape mismatch is refused."""
    if files is None:
        _, files, _ = read_manifest(path)
    params = model.params()
    arrays = {}
    for p in params:
        fname = files.get(p.name)
        if fname is None:
            raise ConfigError(f"parameter {p.name} missing from checkpoint {path}")
        arr = tvt.load(os.path.join(path, fname))
        if arr.shape != p.shape:
            raise ConfigError(f"first mismatching tensor: {p.name} checkpoint {arr.shape} vs model {p.shape}")
        arrays[p.name] = arr
    for p in params:
        p.data = arrays[p.name].astype(p.dtype)
        p.zero_grad()
    return model
