"""Streaming inference and dataset evaluation."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .decoder import TV3S, StateStore
from .metrics import confusion_matrix, miou, mvc_report, pixel_accuracy


def stream_logits(model: TV3S, frames: Sequence[np.ndarray], reset_every: int = 0,
                  state_dir: str | None = None, video_id: str | None = None) -> list[np.ndarray]:
    """Per-frame logits for one video, carrying hidden states frame to frame.

    ``reset_every = k`` clears the store before frames ``k, 2k, ...`` (temporal
    context of at most ``k`` frames).  With ``state_dir`` the store is written
    to disk after every frame and read back before the next one.
    """
    if not frames:
        return []
    H, W = frames[0].shape[1:]
    store = model.new_store(H, W)
    store.video_id = video_id
    out = []
    for t, frame in enumerate(frames):
        if reset_every and t and t % reset_every == 0:
            store.reset()
            store.video_id = video_id
        out.append(model.forward_frame(frame, store).data.copy())
        if state_dir is not None:
            store.save(state_dir)
            store = StateStore.load(state_dir, model.cfg)
    return out


def stream_predictions(model: TV3S, frames, reset_every: int = 0) -> list[np.ndarray]:
    return [lg.argmax(axis=0) for lg in stream_logits(model, frames, reset_every)]


def replay_check(model: TV3S, frames) -> bool:
    """True if persisting the store between frames leaves every logit bit-identical."""
    direct = stream_logits(model, frames)
    with tempfile.TemporaryDirectory() as tmp:
        persisted = stream_logits(model, frames, state_dir=os.path.join(tmp, "state"))
    return all(a.tobytes() == b.tobytes() for a, b in zip(direct, persisted))


@dataclass
class EvalResult:
    miou: float
    accuracy: float
    mvc: dict = field(default_factory=dict)
    videos: int = 0
    skipped: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"metric=miou value={self.miou:.6f} videos={self.videos} skipped=0",
               f"metric=pixel_acc value={self.accuracy:.6f} videos={self.videos} skipped=0"]
        for n, v in sorted(self.mvc.items()):
            out.append(f"metric=mvc{n} value={v:.6f} videos={self.videos - self.skipped[n]} "
                       f"skipped={self.skipped[n]}")
        return out


def evaluate_predictions(masks_per_video, preds_per_video, num_classes: int, ns=(8, 16),
                         strict: bool = True, skip_first: int = 0) -> EvalResult:
    conf = np.zeros((num_classes, num_classes), np.int64)
    pairs = []
    for masks, preds in zip(masks_per_video, preds_per_video):
        masks, preds = list(masks)[skip_first:], list(preds)[skip_first:]
        for m, p in zip(masks, preds):
            conf += confusion_matrix(m, p, num_classes)
        pairs.append((masks, preds))
    res = EvalResult(miou(conf), pixel_accuracy(conf), videos=len(pairs))
    for n in ns:
        rep = mvc_report(pairs, n, strict)
        res.mvc[n] = rep.value
        res.skipped[n] = rep.skipped
    return res


def evaluate_model(model: TV3S, videos, ns=(8, 16), reset_every: int = 0, strict: bool = True,
                   skip_first: int = 0) -> EvalResult:
    preds = [stream_predictions(model, v.frames, reset_every) for v in videos]
    return evaluate_predictions([v.masks for v in videos], preds, model.cfg.num_classes, ns, strict, skip_first)
