"""Command line entry point: ``tv3s {gen-data,train,infer,eval,bench,params}``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import bench, tvt
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, merge_setting
from .data import gen_synthetic, load_dataset, load_masks, synth_spec_from_dict
from .decoder import TV3S, config_from_dict
from .errors import ConfigError, NumericError, TV3SError
from .inference import evaluate_model, evaluate_predictions, stream_logits
from .training import train, train_config_from_dict

FULL_SCALE = {"blocks": "4", "window": "20", "embed": "256", "expand": "2", "n_state": "16", "conv_k": "4"}


def _settings(args) -> dict[str, dict[str, str]]:
    cfg = load_config(getattr(args, "config", None))
    for item in getattr(args, "set", None) or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        merge_setting(cfg, key.strip(), val.strip())
    return cfg


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def _emit(line: str, log_fh=None) -> None:
    print(line, flush=True)
    if log_fh is not None:
        log_fh.write(line + "\n")


# ------------------------------------------------------------------ commands


def cmd_gen_data(args) -> int:
    s = _settings(args)
    data = dict(s["data"])
    for flag, key in (("seed", "seed"), ("videos", "num_videos"), ("frames", "frames_per_video"),
                      ("classes", "num_classes"), ("flicker", "flicker_prob")):
        if getattr(args, flag) is not None:
            data[key] = str(getattr(args, flag))
    if args.size is not None:
        data["height"] = data["width"] = str(args.size)
    if args.occlusion:
        data["occlusion"] = "true"
    spec = synth_spec_from_dict(data)
    videos = gen_synthetic(spec, args.out)
    print(f"wrote {len(videos)} videos to {args.out}")
    return 0


def cmd_train(args) -> int:
    s = _settings(args)
    model_cfg = dict(s["model"])
    train_cfg = dict(s["train"])
    if args.steps is not None:
        train_cfg.setdefault("max_iters", str(args.steps))
    if args.lr is not None:
        train_cfg["base_lr"] = str(args.lr)
    if args.seed is not None:
        train_cfg["seed"] = str(args.seed)
        model_cfg["seed"] = str(args.seed)
    videos = load_dataset(args.data)
    if "num_classes" not in model_cfg:
        model_cfg["num_classes"] = str(max(int(max(m.max() for m in v.masks)) for v in videos) + 1)
    cfg = config_from_dict(model_cfg)
    tcfg = train_config_from_dict(train_cfg)
    model = TV3S(cfg)
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        train(model, videos, tcfg, steps=args.steps, log=lambda line: _emit(line, log_fh))
    finally:
        if log_fh is not None:
            log_fh.close()
    save_checkpoint(model, args.out)
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_infer(args) -> int:
    model = load_checkpoint(args.checkpoint)
    videos = load_dataset(args.data)
    if args.video:
        videos = [v for v in videos if v.video_id == args.video]
        if not videos:
            raise FileNotFoundError(f"video {args.video!r} not in {args.data}")
    os.makedirs(args.out, exist_ok=True)
    status = 0
    for vid in videos:
        vdir = os.path.join(args.out, vid.video_id)
        os.makedirs(vdir, exist_ok=True)
        state_dir = args.state_dir or os.path.join(vdir, "state")
        logits = stream_logits(model, vid.frames, args.reset_every,
                               state_dir=state_dir if args.stream else None, video_id=vid.video_id)
        for t, lg in enumerate(logits):
            tvt.save(os.path.join(vdir, f"pred_{t:04d}.tvt"), lg.argmax(axis=0))
            if args.save_logits:
                tvt.save(os.path.join(vdir, f"logits_{t:04d}.tvt"), lg)
        store = model.new_store(*vid.frames[0].shape[1:])
        line = (f"video={vid.video_id} frames={len(logits)} state_slots={store.total_slots()} "
                f"state_bytes={store.nbytes()}")
        if args.replay_check:
            other = stream_logits(model, vid.frames, args.reset_every,
                                  state_dir=None if args.stream else state_dir, video_id=vid.video_id)
            equal = all(a.tobytes() == b.tobytes() for a, b in zip(logits, other))
            line += f" replay_equal={'true' if equal else 'false'}"
            if not equal:
                status = 4
        print(line)
    return status


def cmd_eval(args) -> int:
    s = _settings(args)
    ns = _int_list(args.n) if args.n else _int_list(s["eval"].get("n", "8,16"))
    strict = not args.lenient
    videos = load_dataset(args.data)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        res = evaluate_model(model, videos, ns, args.reset_every, strict, args.skip_first)
    else:
        num_classes = args.classes or (max(int(max(m.max() for m in v.masks)) for v in videos) + 1)
        preds = []
        for v in videos:
            if args.oracle:
                preds.append(v.masks)
            elif args.pred:
                preds.append(load_masks(os.path.join(args.pred, v.video_id), "pred", len(v.masks)))
            else:
                raise ConfigError("eval needs one of --checkpoint, --pred or --oracle")
        res = evaluate_predictions([v.masks for v in videos], preds, num_classes, ns, strict, args.skip_first)
    lines = res.lines()
    for line in lines:
        print(line)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write("miou = %r\npixel_acc = %r\n" % (res.miou, res.accuracy))
            for n, v in sorted(res.mvc.items()):
                fh.write(f"mvc{n} = {v!r}\n")
    return 0


def cmd_bench(args) -> int:
    s = _settings(args)
    base = config_from_dict({"window": "8", "blocks": "2", "embed": "16", **s["model"]})
    spec = synth_spec_from_dict({"num_videos": "2", "frames_per_video": "12", "height": "64", "width": "64",
                                 "size_min": "8", "size_max": "20", **s["data"]})
    tcfg = train_config_from_dict({"base_lr": "3e-3", "max_iters": str(max(args.steps, 1)), **s["train"]})
    ns = _int_list(args.n) if args.n else [4, 8]
    rows = []
    if args.window:
        rows += bench.sweep_window(_int_list(args.window), base, spec, tcfg, args.steps, ns)
    if args.blocks:
        rows += bench.sweep_blocks(_int_list(args.blocks), base, spec, tcfg, args.steps, ns)
    if args.context:
        if args.checkpoint:
            model = load_checkpoint(args.checkpoint)
        else:
            model = TV3S(replace(base, num_classes=spec.num_classes))
            train(model, load_dataset(args.data) if args.data else bench.generate(spec), tcfg, steps=args.steps)
        videos = load_dataset(args.data) if args.data else bench.generate(replace(spec, seed=spec.seed + 10_000))
        rows += bench.sweep_context(_int_list(args.context), model, videos, ns)
    if not rows:
        raise ConfigError("bench needs at least one of --window, --blocks, --context")
    print("# fps_decoder counts decoder blocks only (encoder and head excluded)")
    print(bench.format_table(rows))
    return 0


def cmd_params(args) -> int:
    s = _settings(args)
    values = dict(FULL_SCALE)
    values["num_classes"] = "124"
    values.update(s["model"])
    model = TV3S(config_from_dict(values))
    groups: dict[str, int] = {}
    for p in model.params():
        key = p.name.split(".")[0]
        if key.startswith("block"):
            key = ".".join(p.name.split(".")[:2])
        groups[key] = groups.get(key, 0) + p.data.size
    for k, v in groups.items():
        print(f"params group={k} count={v}")
    dec = sum(v for k, v in groups.items() if k.startswith("block"))
    print(f"params decoder_blocks={dec} total={model.param_count()}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tv3s", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    g = sub.add_parser("gen-data", help="write a synthetic video dataset")
    common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--videos", type=int)
    g.add_argument("--frames", type=int)
    g.add_argument("--size", type=int)
    g.add_argument("--classes", type=int)
    g.add_argument("--occlusion", action="store_true")
    g.add_argument("--flicker", type=float)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train on a dataset and save a checkpoint")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--log", help="also write the per-step log here")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="frame-by-frame inference with persisted hidden states")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--video")
    i.add_argument("--stream", action="store_true", help="persist the state store to disk between frames")
    i.add_argument("--state-dir")
    i.add_argument("--reset-every", type=int, default=0)
    i.add_argument("--replay-check", action="store_true",
                   help="also run the other mode and require byte-equal logits")
    i.add_argument("--save-logits", action="store_true")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="mIoU and mVC_n over a dataset")
    common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--pred", help="directory of <video>/pred_####.tvt files")
    e.add_argument("--oracle", action="store_true", help="score the ground truth against itself")
    e.add_argument("--classes", type=int)
    e.add_argument("--n", help="window lengths, e.g. 8,16")
    e.add_argument("--reset-every", type=int, default=0)
    e.add_argument("--skip-first", type=int, default=0)
    e.add_argument("--lenient", action="store_true", help="VC numerator without the label-match requirement")
    e.add_argument("--report", help="write key = value metrics here")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="window / block / temporal-context sweeps")
    common(b)
    b.add_argument("--window", help="e.g. 4,6,12,16,20,28,36")
    b.add_argument("--blocks", help="e.g. 1,2,3,4")
    b.add_argument("--context", help="e.g. 1,2,4,8,16,32")
    b.add_argument("--steps", type=int, default=50)
    b.add_argument("--checkpoint")
    b.add_argument("--data")
    b.add_argument("--n", help="mVC window lengths")
    b.set_defaults(func=cmd_bench)

    q = sub.add_parser("params", help="parameter counts (full-scale defaults)")
    common(q)
    q.set_defaults(func=cmd_params)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (OSError, TV3SError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
