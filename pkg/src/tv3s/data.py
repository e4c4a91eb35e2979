"""Synthetic moving-shapes videos with exact per-pixel labels.

Objects move at constant velocity and bounce off the borders.  Each class has
a fixed colour; with ``occlusion`` on, an object is drawn in a class-neutral
grey on a random subset of frames (never the first), so its class can only
be recovered from earlier frames.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tvt
from .errors import ConfigError, FormatError

NEUTRAL = np.array([0.6, 0.6, 0.6])


@dataclass
class VideoClip:
    video_id: str
    frames: list
    masks: list
    fps: float = 15.0

    def __post_init__(self):
        if len(self.frames) != len(self.masks):
            raise ConfigError(f"video {self.video_id}: {len(self.frames)} frames but {len(self.masks)} masks")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class SynthSpec:
    seed: int = 0
    num_videos: int = 4
    frames_per_video: int = 16
    height: int = 160
    width: int = 160
    num_classes: int = 3
    shapes: str = "rect,disk"
    objects: int = 2
    size_min: int = 10
    size_max: int = 24
    speed_max: float = 1.5
    noise: float = 0.03
    occlusion: bool = False
    flicker_prob: float = 0.3
    fps: float = 15.0

    def __post_init__(self):
        kinds = [k.strip() for k in self.shapes.split(",") if k.strip()]
        if not kinds or any(k not in ("rect", "disk") for k in kinds):
            raise ConfigError(f"data.shapes must list rect and/or disk (got {self.shapes!r})")
        if self.num_classes < 2:
            raise ConfigError("data.num_classes must be >= 2 (background + at least one object class)")
        if self.size_min < 1 or self.size_max < self.size_min:
            raise ConfigError("data.size_min / size_max are inconsistent")
        if self.size_max > min(self.height, self.width):
            raise ConfigError(f"objects up to {self.size_max}px do not fit a {self.height}x{self.width} frame")
        if self.num_videos < 1 or self.frames_per_video < 1 or self.objects < 1:
            raise ConfigError("data.num_videos, frames_per_video and objects must be >= 1")

    @property
    def kinds(self) -> list[str]:
        return [k.strip() for k in self.shapes.split(",") if k.strip()]


def class_palette(num_classes: int) -> np.ndarray:
    """Fixed colour per class; index 0 is unused (background is per-video)."""
    base = np.array([
        [0.0, 0.0, 0.0], [0.95, 0.15, 0.15], [0.15, 0.85, 0.2], [0.2, 0.3, 0.95],
        [0.95, 0.9, 0.1], [0.9, 0.2, 0.9], [0.1, 0.9, 0.9], [1.0, 0.55, 0.1],
    ])
    if num_classes <= len(base):
        return base[:num_classes]
    extra = np.random.default_rng(1234).uniform(0.3, 1.0, (num_classes - len(base), 3))
    return np.concatenate([base, extra])


def _render_masks(kind: str, top: int, left: int, size: int, H: int, W: int) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W]
    if kind == "rect":
        return (yy >= top) & (yy < top + size) & (xx >= left) & (xx < left + size)
    r = size / 2.0
    cy, cx = top + r - 0.5, left + r - 0.5
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def generate_video(spec: SynthSpec, index: int) -> VideoClip:
    rng = np.random.default_rng([spec.seed, index])
    H, W, T = spec.height, spec.width, spec.frames_per_video
    palette = class_palette(spec.num_classes)
    background = rng.uniform(0.05, 0.35, 3)
    objs = []
    for _ in range(spec.objects):
        size = int(rng.integers(spec.size_min, spec.size_max + 1))
        objs.append({
            "kind": spec.kinds[int(rng.integers(len(spec.kinds)))],
            "cls": int(rng.integers(1, spec.num_classes)),
            "size": size,
            "pos": np.array([rng.uniform(0, H - size), rng.uniform(0, W - size)]),
            "vel": rng.uniform(-spec.speed_max, spec.speed_max, 2),
        })
    frames, masks = [], []
    for t in range(T):
        img = np.broadcast_to(background[:, None, None], (3, H, W)).copy()
        mask = np.zeros((H, W), np.int64)
        for ob in objs:
            top, left = (int(round(v)) for v in ob["pos"])
            region = _render_masks(ob["kind"], top, left, ob["size"], H, W)
            hidden = spec.occlusion and t > 0 and rng.random() < spec.flicker_prob
            colour = NEUTRAL if hidden else palette[ob["cls"]]
            img[:, region] = colour[:, None]
            mask[region] = ob["cls"]
        if spec.noise > 0:
            img += rng.normal(0.0, spec.noise, img.shape)
        frames.append(np.clip(img, 0.0, 1.0).astype(np.float32))
        masks.append(mask)
        for ob in objs:
            ob["pos"] = ob["pos"] + ob["vel"]
            limit = np.array([H - ob["size"], W - ob["size"]], dtype=float)
            for ax in range(2):
                if ob["pos"][ax] < 0:
                    ob["pos"][ax] = -ob["pos"][ax]
                    ob["vel"][ax] = -ob["vel"][ax]
                elif ob["pos"][ax] > limit[ax]:
                    ob["pos"][ax] = 2 * limit[ax] - ob["pos"][ax]
                    ob["vel"][ax] = -ob["vel"][ax]
    return VideoClip(f"v{index:04d}", frames, masks, spec.fps)


def generate(spec: SynthSpec) -> list[VideoClip]:
    return [generate_video(spec, i) for i in range(spec.num_videos)]


def write_dataset(videos, root: str | os.PathLike, spec: SynthSpec | None = None) -> None:
    os.makedirs(root, exist_ok=True)
    lines = []
    if spec is not None:
        lines += [f"# {k} = {v}" for k, v in asdict(spec).items()]
    for vid in videos:
        vdir = os.path.join(root, vid.video_id)
        os.makedirs(vdir, exist_ok=True)
        for t, (f, m) in enumerate(zip(vid.frames, vid.masks)):
            tvt.save(os.path.join(vdir, f"frame_{t:04d}.tvt"), f)
            tvt.save(os.path.join(vdir, f"mask_{t:04d}.tvt"), m)
        _, h, w = vid.frames[0].shape
        lines.append(f"id={vid.video_id} frames={len(vid.frames)} h={h} w={w}")
    with open(os.path.join(root, "index.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def gen_synthetic(spec: SynthSpec, root: str | os.PathLike) -> list[VideoClip]:
    videos = generate(spec)
    write_dataset(videos, root, spec)
    return videos


def read_index(root: str | os.PathLike) -> list[dict]:
    path = os.path.join(root, "index.txt")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"dataset index not found: {path}")
    entries = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                kv = dict(tok.split("=", 1) for tok in line.split())
                entries.append({"id": kv["id"], "frames": int(kv["frames"]), "h": int(kv["h"]), "w": int(kv["w"])})
            except (KeyError, ValueError):
                raise FormatError(f"{path}:{n}: malformed index line {line!r}") from None
    return entries


def load_masks(vdir: str, prefix: str, count: int) -> list[np.ndarray]:
    out = []
    for t in range(count):
        p = os.path.join(vdir, f"{prefix}_{t:04d}.tvt")
        if not os.path.isfile(p):
            raise FileNotFoundError(f"missing file: {p}")
        out.append(np.rint(tvt.load(p)).astype(np.int64))
    return out


def load_dataset(root: str | os.PathLike) -> list[VideoClip]:
    videos = []
    for e in read_index(root):
        vdir = os.path.join(root, e["id"])
        frames = []
        for t in range(e["frames"]):
            p = os.path.join(vdir, f"frame_{t:04d}.tvt")
            if not os.path.isfile(p):
                raise FileNotFoundError(f"missing file: {p}")
            frames.append(tvt.load(p).astype(np.float32))
        videos.append(VideoClip(e["id"], frames, load_masks(vdir, "mask", e["frames"])))
    return videos


def synth_spec_from_dict(values: dict) -> SynthSpec:
    from .decoder import _coerce

    known = {f.name: f for f in fields(SynthSpec)}
    kwargs = {}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unknown data setting {key!r}")
        kwargs[key] = _coerce(val, known[key].type)
    return SynthSpec(**kwargs)
