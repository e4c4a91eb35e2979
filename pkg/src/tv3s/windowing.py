"""Rectangle decompositions of a feature map into scan slots.

The unshifted plan is a regular ``w x w`` grid.  The shifted plan moves the
grid origin by ``(s, s)`` with ``s = w / 2`` and keeps the overhanging border
strips as their own slots, so a map of ``n x n`` windows yields ``(n-1)^2``
full windows, ``2(n-1)`` strips of each orientation and four corner quarters.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class Rect:
    top: int
    left: int
    height: int
    width: int

    @property
    def area(self) -> int:
        return self.height * self.width


def _cuts(extent: int, w: int, offset: int) -> list[int]:
    cuts = [0]
    pos = offset if offset else w
    while pos < extent:
        cuts.append(pos)
        pos += w
    cuts.append(extent)
    return cuts


@dataclass(frozen=True)
class PatchPlan:
    map_h: int
    map_w: int
    w: int
    s: int
    shifted: bool
    rects: tuple[Rect, ...]

    @property
    def slot_count(self) -> int:
        return len(self.rects)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([r.area for r in self.rects], dtype=np.int64)

    @cached_property
    def index(self) -> np.ndarray:
        """``[slots, max_len]`` flat pixel indices (row-major per rect), ``-1`` padded."""
        idx = np.full((self.slot_count, int(self.lengths.max())), -1, dtype=np.int64)
        for k, r in enumerate(self.rects):
            rows = np.arange(r.top, r.top + r.height)[:, None]
            cols = np.arange(r.left, r.left + r.width)[None, :]
            idx[k, :r.area] = (rows * self.map_w + cols).reshape(-1)
        return idx

    def coverage(self) -> np.ndarray:
        count = np.zeros((self.map_h, self.map_w), dtype=np.int64)
        for r in self.rects:
            count[r.top:r.top + r.height, r.left:r.left + r.width] += 1
        return count

    def census(self) -> dict[tuple[int, int], int]:
        out: dict[tuple[int, int], int] = {}
        for r in self.rects:
            out[(r.height, r.width)] = out.get((r.height, r.width), 0) + 1
        return out


def build_plan(map_h: int, map_w: int, w: int, s: int | None = None, shifted: bool = False) -> PatchPlan:
    if w < 1 or map_h < 1 or map_w < 1:
        raise ConfigError("window and map extents must be positive")
    if map_h % w or map_w % w:
        raise ConfigError(f"feature map {map_h}x{map_w} is not divisible by window {w}")
    if s is None:
        s = w // 2
    if shifted:
        if w % 2 or s != w // 2:
            raise ConfigError(f"shifted plans need an even window and s = w/2 (got w={w}, s={s})")
    elif not 0 <= s < w:
        raise ConfigError(f"shift {s} must satisfy 0 <= s < w")
    offset = s if shifted else 0
    rows = _cuts(map_h, w, offset)
    cols = _cuts(map_w, w, offset)
    rects = tuple(
        Rect(t, l, b - t, r - l)
        for t, b in zip(rows[:-1], rows[1:])
        for l, r in zip(cols[:-1], cols[1:])
    )
    return PatchPlan(map_h, map_w, w, s, shifted, rects)


def extract_flatten(E: np.ndarray, r: Rect) -> np.ndarray:
    """Row-major flattening of rect ``r`` of a ``[C, H, W]`` map into ``[C, h*w]``."""
    E = np.asarray(E)
    _, h, w = E.shape
    if r.top < 0 or r.left < 0 or r.top + r.height > h or r.left + r.width > w or r.height < 1 or r.width < 1:
        raise ValueError(f"{r} lies outside a {h}x{w} map")
    return E[:, r.top:r.top + r.height, r.left:r.left + r.width].reshape(E.shape[0], -1).copy()


def scatter_unflatten(seqs, plan: PatchPlan) -> np.ndarray:
    """Reassemble per-slot ``[C, len]`` sequences into a ``[C, H, W]`` map."""
    if len(seqs) != plan.slot_count:
        raise DimensionError(f"expected {plan.slot_count} slot sequences, got {len(seqs)}")
    c = np.asarray(seqs[0]).shape[0]
    out = np.zeros((c, plan.map_h, plan.map_w), dtype=np.asarray(seqs[0]).dtype)
    for k, (seq, r) in enumerate(zip(seqs, plan.rects)):
        seq = np.asarray(seq)
        if seq.shape != (c, r.area):
            raise DimensionError(f"slot {k}: sequence {seq.shape} does not fit rect {r.height}x{r.width}")
        out[:, r.top:r.top + r.height, r.left:r.left + r.width] = seq.reshape(c, r.height, r.width)
    return out
