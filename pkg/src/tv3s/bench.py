"""Ablation sweeps over window size, block count and inference-time temporal context."""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from .data import SynthSpec, generate
from .decoder import TV3S, DecoderConfig
from .inference import evaluate_model
from .ndcore import Tensor
from .training import TrainConfig, train

WINDOWS = (4, 6, 12, 16, 20, 28, 36)
BLOCKS = (1, 2, 3, 4)
CONTEXTS = (1, 2, 4, 8, 16, 32)


def decoder_fps(model: TV3S, H: int, W: int, frames: int = 4, seed: int = 0) -> float:
    """Frames per second through the blocks only (encoder and head excluded)."""
    rng = np.random.default_rng(seed)
    h, w = model.feature_extent(H, W)
    feats = [Tensor(rng.normal(size=(h, w, model.cfg.embed)).astype(model.dtype)) for _ in range(frames)]
    store = model.new_store(H, W)
    model.decode_features(feats[0], store)
    t0 = time.perf_counter()
    for E in feats:
        model.decode_features(E, store)
    return frames / (time.perf_counter() - t0)


def _train_eval(cfg: DecoderConfig, spec: SynthSpec, tcfg: TrainConfig, steps: int, ns, reset_every=0):
    videos = generate(spec)
    model = TV3S(cfg)
    train(model, videos, tcfg, steps=steps)
    eval_videos = generate(replace(spec, seed=spec.seed + 10_000))
    res = evaluate_model(model, eval_videos, ns=ns, reset_every=reset_every)
    return model, res


def sweep_window(windows, base: DecoderConfig, spec: SynthSpec, tcfg: TrainConfig, steps: int, ns=(4, 8)):
    rows = []
    for w in windows:
        side = 8 * w
        cfg = replace(base, window=w, shift=w // 2)
        sp = replace(spec, height=side, width=side, size_min=max(2, side // 8), size_max=max(3, side // 4))
        model, res = _train_eval(cfg, sp, tcfg, steps, ns)
        rows.append({"sweep": "window", "value": w, "miou": res.miou,
                     **{f"mvc{n}": res.mvc[n] for n in ns}, "fps_decoder": decoder_fps(model, side, side)})
    return rows


def sweep_blocks(blocks, base: DecoderConfig, spec: SynthSpec, tcfg: TrainConfig, steps: int, ns=(4, 8)):
    rows = []
    for nb in blocks:
        cfg = replace(base, blocks=nb)
        model, res = _train_eval(cfg, spec, tcfg, steps, ns)
        rows.append({"sweep": "blocks", "value": nb, "miou": res.miou,
                     **{f"mvc{n}": res.mvc[n] for n in ns},
                     "fps_decoder": decoder_fps(model, spec.height, spec.width)})
    return rows


def sweep_context(contexts, model: TV3S, videos, ns=(4, 8), skip_first: int = 0):
    """Evaluate one trained model with the store cleared every ``c`` frames."""
    rows = []
    H, W = videos[0].frames[0].shape[1:]
    fps = decoder_fps(model, H, W)
    for c in contexts:
        res = evaluate_model(model, videos, ns=ns, reset_every=c, skip_first=skip_first)
        rows.append({"sweep": "context", "value": c, "miou": res.miou,
                     **{f"mvc{n}": res.mvc[n] for n in ns}, "fps_decoder": fps})
    return rows


def format_table(rows) -> str:
    if not rows:
        return ""
    cols = list(rows[0].keys())
    lines = [" ".join(f"{c:>12}" for c in cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            cells.append(f"{v:>12.4f}" if isinstance(v, float) else f"{v!s:>12}")
        lines.append(" ".join(cells))
    return "\n".join(lines)
