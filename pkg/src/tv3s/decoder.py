"""Full decoder stack: toy encoder, N blocks of paired TSS modules, heads.

Feature maps are kept channels-last (``[h, w, D]``) inside the stack so that
patch gathers are plain row lookups; logits leave as ``[C, H, W]``.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tvt
from .errors import ConfigError, FormatError, StateGeometryError
from .ndcore import (Param, Tensor, bilinear_upsample, gather_rows, linear, reshape,
                     scatter_rows, silu, take, transpose, add)
from .ssm import HiddenState
from .tss import TSSWeights, tss_tokens
from .windowing import PatchPlan, build_plan

BRANCHES = ("unshifted", "shifted")
PATCH = 4


@dataclass
class DecoderConfig:
    blocks: int = 4
    window: int = 20
    shift: int = 0          # 0 means window // 2
    embed: int = 32
    num_classes: int = 3
    expand: int = 2
    n_state: int = 16
    conv_k: int = 4
    rank: int = 0           # 0 means ceil(D_inner / 16)
    gate: bool = False
    in_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.shift == 0:
            self.shift = self.window // 2
        self.validate()

    def validate(self) -> None:
        if self.blocks < 1:
            raise ConfigError("model.blocks must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("model.num_classes must be >= 2")
        if self.window < 2 or self.window % 2:
            raise ConfigError(f"model.window must be an even integer >= 2 (got {self.window})")
        if self.shift != self.window // 2:
            raise ConfigError(f"model.shift must equal window/2 = {self.window // 2} (got {self.shift})")
        for name in ("embed", "expand", "n_state", "conv_k", "in_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")

    @property
    def d_inner(self) -> int:
        return self.expand * self.embed

    @property
    def d_rank(self) -> int:
        return self.rank or max(math.ceil(self.d_inner / 16), 1)

    def as_dict(self) -> dict:
        return asdict(self)


class ToyEncoder:
    """Stride-4 patch embedding followed by a residual pointwise MLP."""

    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator, dtype=np.float32):
        d = cfg.embed
        k = cfg.in_channels * PATCH * PATCH
        self.W_embed = Param(rng.normal(0.0, 1.0 / math.sqrt(k), (d, k)).astype(dtype), "enc.W_embed")
        self.b_embed = Param(np.zeros(d, dtype), "enc.b_embed")
        self.W_1 = Param(rng.normal(0.0, 1.0 / math.sqrt(d), (d, d)).astype(dtype), "enc.mlp.W_1")
        self.b_1 = Param(np.zeros(d, dtype), "enc.mlp.b_1")
        self.W_2 = Param(rng.normal(0.0, 1.0 / math.sqrt(d), (d, d)).astype(dtype), "enc.mlp.W_2")
        self.b_2 = Param(np.zeros(d, dtype), "enc.mlp.b_2")

    def params(self) -> list[Param]:
        return [self.W_embed, self.b_embed, self.W_1, self.b_1, self.W_2, self.b_2]

    def __call__(self, frame: np.ndarray) -> Tensor:
        c, H, W = frame.shape
        h, w = H // PATCH, W // PATCH
        patches = frame.reshape(c, h, PATCH, w, PATCH).transpose(1, 3, 0, 2, 4).reshape(h, w, -1)
        e = linear(Tensor(patches.astype(self.W_embed.dtype)), self.W_embed, self.b_embed)
        return add(e, linear(silu(linear(e, self.W_1, self.b_1)), self.W_2, self.b_2))


class StateStore:
    """Per (block, branch) stacked hidden states ``[slots, D_inner, N]``.

    The only carrier of temporal context between frames.  Its size depends on
    the feature-map geometry, never on how many frames have been processed.
    """

    def __init__(self, cfg: DecoderConfig, map_h: int, map_w: int, dtype=np.float32):
        self.cfg = cfg
        self.map_h, self.map_w = map_h, map_w
        self.dtype = np.dtype(dtype)
        self.plans = {
            "unshifted": build_plan(map_h, map_w, cfg.window, cfg.shift, shifted=False),
            "shifted": build_plan(map_h, map_w, cfg.window, cfg.shift, shifted=True),
        }
        self.video_id: str | None = None
        self.frame = 0
        self.states: dict[tuple[int, str], Tensor] = {}
        self.reset()

    def reset(self) -> "StateStore":
        self.states = {
            (n, br): Tensor(np.zeros((self.plans[br].slot_count, self.cfg.d_inner, self.cfg.n_state), self.dtype))
            for n in range(self.cfg.blocks) for br in BRANCHES
        }
        self.frame = 0
        self.video_id = None
        return self

    def slot_count(self, block: int, branch: str) -> int:
        return self.states[(block, branch)].shape[0]

    def get(self, block: int, branch: str, slot: int) -> HiddenState:
        step = self.frame - 1 if self.frame else None
        return HiddenState(self.states[(block, branch)].data[slot], step)

    def set(self, block: int, branch: str, value: Tensor) -> None:
        key = (block, branch)
        if key not in self.states:
            raise StateGeometryError(f"no state slots for block {block} branch {branch!r}")
        if value.shape != self.states[key].shape:
            raise StateGeometryError(f"block {block} {branch}: state {value.shape} "
                                     f"does not match {self.states[key].shape}")
        self.states[key] = value

    def detach(self) -> None:
        self.states = {k: v.detach() for k, v in self.states.items()}

    def nbytes(self) -> int:
        return sum(v.data.nbytes for v in self.states.values())

    def total_slots(self) -> int:
        return sum(v.shape[0] for v in self.states.values())

    def check_geometry(self, map_h: int, map_w: int) -> None:
        if (map_h, map_w) != (self.map_h, self.map_w):
            raise StateGeometryError(f"feature map {map_h}x{map_w} does not match state store "
                                     f"{self.map_h}x{self.map_w}")

    # persistence: same directory layout as checkpoints
    def save(self, path: str | os.PathLike) -> None:
        os.makedirs(path, exist_ok=True)
        lines = [f"frame = {self.frame}", f"video_id = {self.video_id or ''}",
                 f"map = {self.map_h}x{self.map_w}", f"dtype = {self.dtype.name}"]
        for (n, br), v in sorted(self.states.items()):
            fname = f"state.{n}.{br}.tvt"
            tvt.save(os.path.join(path, fname), v.data)
            lines.append(f"state {n}.{br} = {fname}")
        with open(os.path.join(path, "manifest.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike, cfg: DecoderConfig) -> "StateStore":
        manifest = os.path.join(path, "manifest.txt")
        if not os.path.isfile(manifest):
            raise FileNotFoundError(f"state manifest not found: {manifest}")
        meta, files = {}, {}
        with open(manifest, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                key, _, val = (p.strip() for p in line.partition("="))
                if key.startswith("state "):
                    files[key[6:]] = val
                else:
                    meta[key] = val
        try:
            mh, mw = (int(v) for v in meta["map"].split("x"))
            store = cls(cfg, mh, mw, np.dtype(meta["dtype"]))
            store.frame = int(meta["frame"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{manifest}: malformed state manifest ({exc})") from None
        store.video_id = meta.get("video_id") or None
        for (n, br) in list(store.states):
            fname = files.get(f"{n}.{br}")
            if fname is None:
                raise StateGeometryError(f"{manifest}: missing state for block {n} branch {br}")
            store.set(n, br, Tensor(tvt.load(os.path.join(path, fname))))
        return store


class TV3S:
    """Encoder, N blocks of (unshifted TSS, shifted TSS), final and intermediate heads."""

    def __init__(self, cfg: DecoderConfig, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.encoder = ToyEncoder(cfg, rng, dtype)
        self.blocks: list[dict[str, TSSWeights]] = []
        for n in range(cfg.blocks):
            self.blocks.append({
                br: TSSWeights(cfg.embed, cfg.expand, cfg.n_state, cfg.conv_k, cfg.d_rank, cfg.gate,
                               rng=rng, prefix=f"block{n}.{br}", dtype=dtype)
                for br in BRANCHES
            })
        lim = 1.0 / math.sqrt(cfg.embed)
        self.head_W = Param(rng.uniform(-lim, lim, (cfg.num_classes, cfg.embed)).astype(dtype) * 0.1, "head.W")
        self.head_b = Param(np.zeros(cfg.num_classes, dtype), "head.b")
        self.inter_W = Param(rng.uniform(-lim, lim, (cfg.num_classes, cfg.embed)).astype(dtype) * 0.1, "inter_head.W")
        self.inter_b = Param(np.zeros(cfg.num_classes, dtype), "inter_head.b")
        names = [p.name for p in self.params()]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names")

    @property
    def dtype(self):
        return self.head_W.dtype

    def params(self) -> list[Param]:
        out = self.encoder.params()
        for blk in self.blocks:
            for br in BRANCHES:
                out += blk[br].params()
        out += [self.head_W, self.head_b, self.inter_W, self.inter_b]
        return out

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())

    def astype(self, dtype) -> "TV3S":
        for p in self.params():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    # ---------------------------------------------------------- forward pieces

    def feature_extent(self, H: int, W: int) -> tuple[int, int]:
        step = PATCH * self.cfg.window
        if H % step or W % step:
            raise ConfigError(f"frame {H}x{W} must be a multiple of 4*window = {step} in both axes")
        return H // PATCH, W // PATCH

    def new_store(self, H: int, W: int) -> StateStore:
        h, w = self.feature_extent(H, W)
        return StateStore(self.cfg, h, w, self.dtype)

    def encode(self, frame: np.ndarray) -> Tensor:
        frame = np.asarray(frame)
        if frame.ndim != 3 or frame.shape[0] != self.cfg.in_channels:
            raise ConfigError(f"frame must be [{self.cfg.in_channels}, H, W], got {frame.shape}")
        self.feature_extent(frame.shape[1], frame.shape[2])
        return self.encoder(frame)

    def _head(self, E: Tensor, W: Param, b: Param) -> Tensor:
        logits = transpose(linear(E, W, b), (2, 0, 1))
        return bilinear_upsample(logits, PATCH)

    def intermediate_head(self, E: Tensor) -> Tensor:
        """Per-pixel class logits straight from encoder features, bypassing every block."""
        return self._head(E, self.inter_W, self.inter_b)

    def head(self, E: Tensor) -> Tensor:
        return self._head(E, self.head_W, self.head_b)

    def block_forward(self, E: Tensor, store: StateStore, block_idx: int,
                      slot_order: dict[str, np.ndarray] | None = None) -> Tensor:
        h, w, d = E.shape
        store.check_geometry(h, w)
        weights = self.blocks[block_idx]
        for br in BRANCHES:
            plan: PatchPlan = store.plans[br]
            h_in = store.states[(block_idx, br)]
            if h_in.shape[0] != plan.slot_count:
                raise StateGeometryError(f"block {block_idx} {br}: {h_in.shape[0]} state slots "
                                         f"for a plan with {plan.slot_count}")
            index, lengths = plan.index, plan.lengths
            order = None if slot_order is None else np.asarray(slot_order[br])
            if order is not None:
                index, lengths = index[order], lengths[order]
                h_in = take(h_in, (order,))
            seqs = gather_rows(reshape(E, (h * w, d)), index)
            y, h_out = tss_tokens(seqs, h_in, weights[br], lengths)
            if order is not None:
                h_out = take(h_out, (np.argsort(order),))
            E = reshape(scatter_rows(y, index, h * w), (h, w, d))
            store.set(block_idx, br, h_out)
        return E

    def decode_features(self, E: Tensor, store: StateStore) -> Tensor:
        for n in range(self.cfg.blocks):
            E = self.block_forward(E, store, n)
        store.frame += 1
        return E

    def decoder_forward(self, E: Tensor, store: StateStore) -> Tensor:
        """Run every block (advancing the store), then the classification head."""
        return self.head(self.decode_features(E, store))

    def forward_frame(self, frame: np.ndarray, store: StateStore) -> Tensor:
        return self.decoder_forward(self.encode(frame), store)


def reset_states(store: StateStore) -> StateStore:
    return store.reset()


def config_from_dict(values: dict) -> DecoderConfig:
    known = {f.name: f for f in fields(DecoderConfig)}
    kwargs = {}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unknown model setting {key!r}")
        kwargs[key] = _coerce(val, known[key].type)
    return DecoderConfig(**kwargs)


def _coerce(val, typ):
    if not isinstance(val, str):
        return val
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    try:
        if typ == "bool":
            if val.lower() in ("1", "true", "yes", "on"):
                return True
            if val.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(val)
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
    except ValueError:
        raise ConfigError(f"cannot parse {val!r} as {typ}") from None
    return val
