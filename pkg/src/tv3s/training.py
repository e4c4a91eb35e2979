"""Dual-loss training over short clips with AdamW and a poly schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .data import VideoClip
from .decoder import TV3S, _coerce
from .errors import ConfigError, NumericError
from .ndcore import Param, Tape, Tensor, add, mul, softmax_cross_entropy

IGNORE_LABEL = 255


@dataclass
class TrainConfig:
    lam: float = 0.5
    offsets: tuple[int, ...] = (-9, -6, -3, 0)
    base_lr: float = 6e-5
    max_iters: int = 2000
    poly_power: float = 0.9
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    batch_size: int = 1
    include_current: bool = True
    detach_states: bool = False
    flip: bool = True
    crop: int = 0
    ignore_label: int = IGNORE_LABEL

    def __post_init__(self):
        self.offsets = tuple(int(o) for o in self.offsets)
        self.betas = tuple(float(b) for b in self.betas)
        if self.lam < 0:
            raise ConfigError("train.lam must be >= 0")
        if not self.offsets or self.offsets[-1] != 0 or any(a >= b for a, b in zip(self.offsets, self.offsets[1:])):
            raise ConfigError(f"train.offsets must be strictly increasing and end at 0 (got {self.offsets})")
        if self.max_iters < 1 or self.batch_size < 1:
            raise ConfigError("train.max_iters and train.batch_size must be >= 1")

    @property
    def span(self) -> int:
        return -self.offsets[0]


def train_config_from_dict(values: dict) -> TrainConfig:
    known = {f.name: f for f in fields(TrainConfig)}
    kwargs = {}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unknown train setting {key!r}")
        typ = known[key].type
        if isinstance(val, str) and typ.startswith("tuple"):
            parts = [p for p in val.replace(",", " ").split() if p]
            try:
                conv = float if "float" in typ else int
                val = tuple(conv(p) for p in parts)
            except ValueError:
                raise ConfigError(f"cannot parse train.{key} = {val!r}") from None
        else:
            val = _coerce(val, typ)
        kwargs[key] = val
    return TrainConfig(**kwargs)


def poly_lr(it: int, cfg: TrainConfig) -> float:
    if not 0 <= it <= cfg.max_iters:
        raise ValueError(f"iteration {it} outside [0, {cfg.max_iters}]")
    return cfg.base_lr * (1.0 - it / cfg.max_iters) ** cfg.poly_power


def total_loss(inter_logits: Sequence[Tensor], final_logits: Tensor, masks: Sequence[np.ndarray],
               lam: float, include_current: bool = True, ignore_label: int = IGNORE_LABEL):
    """``lam * sum_k CE(inter_k, mask_k) + CE(final, mask_last)``.

    ``inter_logits`` and ``masks`` are ordered oldest to newest; the last
    entry is the current frame.  Returns ``(loss, ce_final, ce_inter_sum)``.
    """
    if len(inter_logits) != len(masks):
        raise ValueError("one intermediate prediction per mask is required")
    ce_final = softmax_cross_entropy(final_logits, masks[-1], ignore_label)
    terms = list(zip(inter_logits, masks))
    if not include_current:
        terms = terms[:-1]
    if lam == 0 or not terms:
        return ce_final, ce_final, 0.0
    ce_inter = softmax_cross_entropy(terms[0][0], terms[0][1], ignore_label)
    for logits, mask in terms[1:]:
        ce_inter = add(ce_inter, softmax_cross_entropy(logits, mask, ignore_label))
    loss = add(mul(ce_inter, lam), ce_final)
    return loss, ce_final, ce_inter.item()


class AdamW:
    def __init__(self, params: Sequence[Param], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data *= 1.0 - lr * self.wd
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


@dataclass
class StepResult:
    loss: float
    ce_final: float
    ce_inter: float
    lr: float = 0.0
    accuracy: float = field(default=float("nan"))


def clip_loss(model: TV3S, clip: VideoClip, cfg: TrainConfig, store=None):
    """Forward one clip oldest to newest through a fresh (or given) state store."""
    H, W = clip.frames[0].shape[1:]
    if store is None:
        store = model.new_store(H, W)
    inter, final = [], None
    for i, frame in enumerate(clip.frames):
        E = model.encode(frame)
        inter.append(model.intermediate_head(E))
        F = model.decode_features(E, store)
        if i == len(clip.frames) - 1:
            final = model.head(F)
        elif cfg.detach_states:
            store.detach()
    loss, ce_f, ce_i = total_loss(inter, final, clip.masks, cfg.lam, cfg.include_current, cfg.ignore_label)
    return loss, ce_f, ce_i, final


def train_step(model: TV3S, clips: VideoClip | Sequence[VideoClip], cfg: TrainConfig,
               opt: AdamW, it: int) -> StepResult:
    """One optimizer update from a batch of clips (gradients averaged)."""
    if isinstance(clips, VideoClip):
        clips = [clips]
    opt.zero_grad()
    tot = ce_f_sum = ce_i_sum = 0.0
    for clip in clips:
        with Tape() as tape:
            loss, ce_f, ce_i, _ = clip_loss(model, clip, cfg)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at iteration {it} (video {clip.video_id})")
            tape.backward(loss, np.asarray(1.0 / len(clips), loss.dtype))
        tot += value
        ce_f_sum += ce_f.item()
        ce_i_sum += ce_i
    for p in opt.params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in {p.name} at iteration {it}")
    lr = poly_lr(it, cfg)
    opt.step(lr)
    n = len(clips)
    return StepResult(tot / n, ce_f_sum / n, ce_i_sum / n, lr)


def sample_clip(videos: Sequence[VideoClip], cfg: TrainConfig, rng: np.random.Generator) -> VideoClip:
    """Draw a training clip at the configured frame offsets, with flip / crop augmentation."""
    eligible = [v for v in videos if len(v.frames) > cfg.span]
    if not eligible:
        raise ConfigError(f"no video has more than {cfg.span} frames")
    vid = eligible[int(rng.integers(len(eligible)))]
    t = int(rng.integers(cfg.span, len(vid.frames)))
    idx = [t + o for o in cfg.offsets]
    frames = [vid.frames[i] for i in idx]
    masks = [vid.masks[i] for i in idx]
    if cfg.crop:
        H, W = frames[0].shape[1:]
        if cfg.crop > min(H, W):
            raise ConfigError(f"train.crop {cfg.crop} exceeds frame {H}x{W}")
        top = int(rng.integers(0, H - cfg.crop + 1))
        left = int(rng.integers(0, W - cfg.crop + 1))
        frames = [f[:, top:top + cfg.crop, left:left + cfg.crop] for f in frames]
        masks = [m[top:top + cfg.crop, left:left + cfg.crop] for m in masks]
    if cfg.flip and rng.random() < 0.5:
        frames = [f[:, :, ::-1] for f in frames]
        masks = [m[:, ::-1] for m in masks]
    frames = [np.ascontiguousarray(f) for f in frames]
    masks = [np.ascontiguousarray(m) for m in masks]
    return VideoClip(vid.video_id, frames, masks, vid.fps)


def format_log(it: int, res: StepResult) -> str:
    return f"iter={it} lr={res.lr:.6e} loss={res.loss:.6f} ce_final={res.ce_final:.6f} ce_inter={res.ce_inter:.6f}"


def train(model: TV3S, videos: Sequence[VideoClip], cfg: TrainConfig, steps: int | None = None,
          log: Callable[[str], None] | None = None) -> list[StepResult]:
    """Run ``steps`` (default ``cfg.max_iters``) updates; returns per-step results."""
    steps = cfg.max_iters if steps is None else steps
    if steps > cfg.max_iters:
        raise ConfigError(f"steps {steps} exceeds train.max_iters {cfg.max_iters}")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.params(), cfg.betas, cfg.adam_eps, cfg.weight_decay)
    history = []
    for it in range(steps):
        batch = [sample_clip(videos, cfg, rng) for _ in range(cfg.batch_size)]
        res = train_step(model, batch, cfg, opt, it)
        history.append(res)
        if log is not None:
            log(format_log(it, res))
    return history
