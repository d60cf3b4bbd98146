"""Command-line entry points.

    msemcom gen-data  --out-dir data/toy
    msemcom pretrain  --config cfg.json --out-dir runs/p1
    msemcom train     --config cfg.json [--init runs/p1/pretrain.ckpt | --no-pretrain]
    msemcom eval      --checkpoint runs/t/model.ckpt --flip-prob 0 0.01
    msemcom sweep     --config cfg.json --bpp 0.0039 0.015625 0.09375 --modality both
    msemcom plot      runs/sweep/sweep.csv

Every command writes ``run.json`` into its output directory. That manifest
holds the full config and the argument vector, and passing it back through
``--config`` replays the run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .channel import lb_for_bpp
from .config import ConfigError, RunConfig, apply_overrides, load_config, parse_assignments
from .data import (
    DatasetError,
    generate_synthetic,
    load_dataset,
    select,
    split_dataset,
    synthetic_manifest,
    write_layout,
)
from .decoder import auto_grid
from .reporting import plot_rate_curves, read_metrics, write_metrics
from .training import (
    TrainingError,
    evaluate,
    load_checkpoint,
    pretrain,
    save_checkpoint,
    timestamp,
    train_e2e,
)

log = logging.getLogger("msemcom")

VARIANTS = {
    "both+pretrain": ("both", True),
    "both": ("both", False),
    "rgb": ("rgb", False),
    "thermal": ("thermal", False),
}


def code_hash() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


class RunManifest:
    """Tracks one command invocation and the files it produced."""

    def __init__(self, command: str, argv: list[str], cfg: RunConfig, out_dir: Path):
        self.out_dir = out_dir
        self.data = {
            "command": command,
            "argv": list(argv),
            "version": __version__,
            "code_hash": code_hash(),
            "started": timestamp(),
            "finished": None,
            "config_hash": cfg.digest(),
            "config": cfg.to_dict(),
            "seeds": {k: getattr(cfg.train, k) for k in ("seed", "data_seed", "split_seed", "channel_seed")},
            "outputs": [],
        }

    def add(self, path: Path, **info) -> Path:
        self.data["outputs"].append({"path": str(Path(path).relative_to(self.out_dir)), **info})
        return path

    def write(self) -> Path:
        self.data["finished"] = timestamp()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "run.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return path


# ------------------------------------------------------------------- parsing


def _common(p: argparse.ArgumentParser, channel=True):
    p.add_argument("--config", help="JSON config file (or a run.json manifest to replay)")
    p.add_argument("--seed", type=int, help="model / training seed")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any dotted config key")
    if channel:
        p.add_argument("--lb", type=int, help="bit budget L_b (L_s follows)")
        p.add_argument("--temperature", type=float, help="Gumbel-Softmax temperature")
        p.add_argument("--modality", choices=["rgb", "thermal", "both"])
        p.add_argument("--no-pretrain", action="store_true", help="skip phase-1 pre-training")
        p.add_argument("--epochs", type=int, help="phase-2 epochs")
        p.add_argument("--pretrain-epochs", type=int, help="phase-1 epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msemcom", description="Multimodal semantic communication for RGB-thermal segmentation")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset in the rgb/thermal/labels layout")
    _common(p, channel=False)

    p = sub.add_parser("pretrain", help="phase 1: contrastive prompt pre-training of the encoders")
    _common(p)
    p.add_argument("--flip-prob", type=float)

    p = sub.add_parser("train", help="phase 2: end-to-end training (runs phase 1 first unless --init/--no-pretrain)")
    _common(p)
    p.add_argument("--flip-prob", type=float, help="BSC flip probability during training")
    p.add_argument("--init", help="phase-1 checkpoint to start from")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--flip-prob", type=float, nargs="+", default=None, help="evaluation flip probabilities")
    p.add_argument("--split", choices=["train", "test", "val"], default="test")

    p = sub.add_parser("sweep", help="train and evaluate variants over a bpp grid")
    _common(p)
    p.add_argument("--flip-prob", type=float, help="BSC flip probability during training")
    p.add_argument("--bpp", type=float, nargs="*", default=[0.0039, 0.015625, 0.09375])
    p.add_argument("--seeds", type=int, nargs="+", help="training seeds (default: --seed or config)")
    p.add_argument("--variants", nargs="+", choices=sorted(VARIANTS), help="explicit variant list")
    p.set_defaults(modality_all=True)

    p = sub.add_parser("plot", help="render rate curves from a metrics CSV")
    p.add_argument("csv_path")
    p.add_argument("--out-dir")
    return parser


def resolve_config(args) -> RunConfig:
    """Defaults < config file < flags."""
    cfg = load_config(getattr(args, "config", None), validate=False)
    flags = {}
    if getattr(args, "seed", None) is not None:
        flags["train.seed"] = args.seed
    if getattr(args, "lb", None) is not None:
        flags["channel.lb"] = args.lb
    if getattr(args, "temperature", None) is not None:
        flags["channel.temperature"] = args.temperature
    if getattr(args, "modality", None) is not None:
        flags["train.modality"] = args.modality
    if getattr(args, "no_pretrain", False):
        flags["train.pretrain"] = False
    if getattr(args, "epochs", None) is not None:
        flags["train.epochs"] = args.epochs
    if getattr(args, "pretrain_epochs", None) is not None:
        flags["train.pretrain_epochs"] = args.pretrain_epochs
    fp = getattr(args, "flip_prob", None)
    if isinstance(fp, float):
        flags["channel.flip_prob"] = fp
    if getattr(args, "out_dir", None):
        flags["out_dir"] = args.out_dir
    apply_overrides(cfg, flags)
    apply_overrides(cfg, parse_assignments(getattr(args, "set", None)))
    if "channel.lb" in flags and cfg.channel.lb % (cfg.decoder.grid_h * cfg.decoder.grid_w):
        # a new budget that the configured grid cannot hold picks its own grid
        g = auto_grid(cfg.channel.lb, cfg.data.height, cfg.data.width, cfg.decoder.grid_h)
        cfg.decoder.grid_h = cfg.decoder.grid_w = g
    return cfg.validate()


def _splits(cfg: RunConfig):
    pairs = load_dataset(cfg)
    split = split_dataset(pairs, cfg.train.split_seed)
    return {"train": select(pairs, split.train), "test": select(pairs, split.test), "val": select(pairs, split.val)}


# ------------------------------------------------------------------ commands


def cmd_gen_data(args, argv) -> int:
    cfg = resolve_config(args)
    seed = args.seed if args.seed is not None else cfg.train.data_seed
    out = Path(args.out_dir or Path(cfg.out_dir) / "data")
    pairs = generate_synthetic(cfg, seed)
    write_layout(pairs, out, synthetic_manifest(cfg, seed))
    man = RunManifest("gen-data", argv, cfg, out)
    man.add(out / "manifest.json", kind="dataset-manifest", count=len(pairs))
    man.write()
    print(f"wrote {len(pairs)} pairs to {out}")
    return 0


def _run_pretrain(cfg, data, out: Path, man: RunManifest):
    ckpt = pretrain(data["train"], cfg)
    path = man.add(save_checkpoint(ckpt, out / "pretrain.ckpt"), kind="checkpoint", phase="pretrain")
    return ckpt, path


def cmd_pretrain(args, argv) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    man = RunManifest("pretrain", argv, cfg, out)
    data = _splits(cfg)
    ckpt, path = _run_pretrain(cfg, data, out, man)
    losses = ckpt.history.get("pretrain_loss", [])
    man.data["pretrain_loss"] = losses
    man.write()
    print(f"pretrain: {len(losses)} epochs, checkpoint {path}")
    return 0


def _train_one(cfg: RunConfig, data, out: Path, man: RunManifest, init_path=None, run_id="", variant=""):
    init = None
    if init_path:
        init = load_checkpoint(init_path)
        mode = "from-checkpoint"
    elif cfg.train.pretrain and cfg.train.modality == "both" and cfg.train.pretrain_epochs > 0:
        init, _ = _run_pretrain(cfg, data, out, man)
        mode = "pretrain"
    else:
        mode = "no-pretrain"
    ckpt = train_e2e(data["train"], cfg, init, data["val"])
    path = man.add(save_checkpoint(ckpt, out / "model.ckpt"), kind="checkpoint", phase="train")
    rows = evaluate(data["test"], ckpt, cfg, [cfg.channel.eval_flip_prob], run_id=run_id, variant=variant, split="test")
    return ckpt, path, rows, mode


def cmd_train(args, argv) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    man = RunManifest("train", argv, cfg, out)
    data = _splits(cfg)
    variant = cfg.train.modality + ("+pretrain" if cfg.train.pretrain and cfg.train.modality == "both" and (args.init or cfg.train.pretrain_epochs > 0) else "")
    ckpt, path, rows, mode = _train_one(cfg, data, out, man, args.init, run_id=out.name, variant=variant)
    man.data["ablation"] = {"mode": mode, "modality": cfg.train.modality, "pretrain": mode != "no-pretrain"}
    man.data["history"] = {k: v for k, v in ckpt.history.items() if not isinstance(v, list)}
    man.add(write_metrics(rows, out / "metrics.csv"), kind="metrics")
    man.write()
    r = rows[0]
    print(f"train ({mode}): test mIoU={r['miou']:.4f} mAcc={r['macc']:.4f} checkpoint {path}")
    return 0


def cmd_eval(args, argv) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config.copy()
    if args.set:
        apply_overrides(cfg, parse_assignments(args.set))
    if args.seed is not None:
        cfg.train.channel_seed = args.seed
    cfg.validate()
    out = Path(args.out_dir or Path(args.checkpoint).parent)
    man = RunManifest("eval", argv, cfg, out)
    data = _splits(cfg)
    probs = args.flip_prob if args.flip_prob is not None else [cfg.channel.eval_flip_prob]
    variant = cfg.train.modality
    rows = evaluate(data[args.split], ckpt, cfg, probs, run_id=Path(args.checkpoint).parent.name, variant=variant, split=args.split)
    man.add(write_metrics(rows, out / f"eval_{args.split}.csv"), kind="metrics")
    man.data["checkpoint"] = str(args.checkpoint)
    man.write()
    for r in rows:
        print(f"p={r['flip_prob']}: mIoU={r['miou']:.4f} mAcc={r['macc']:.4f}")
    return 0


def sweep_variants(args, cfg: RunConfig) -> list[str]:
    if args.variants:
        return list(args.variants)
    if args.modality is None:
        names = list(VARIANTS)
    elif args.modality == "both":
        names = ["both+pretrain", "both"]
    else:
        names = [args.modality]
    if args.no_pretrain or not cfg.train.pretrain:
        names = [n for n in names if not VARIANTS[n][1]]
    return names


def cmd_sweep(args, argv) -> int:
    if not args.bpp:
        raise ConfigError("bpp", "empty bpp grid")
    base = resolve_config(args)
    out = Path(base.out_dir)
    man = RunManifest("sweep", argv, base, out)
    data = _splits(base)
    seeds = args.seeds or [base.train.seed]
    H, W = base.data.height, base.data.width
    csv_path = out / "sweep.csv"
    rows = []
    for name in sweep_variants(args, base):
        modality, use_pretrain = VARIANTS[name]
        for rate in args.bpp:
            lb = lb_for_bpp(rate, H, W)
            for seed in seeds:
                cfg = base.copy()
                cfg.train.modality = modality
                cfg.train.pretrain = use_pretrain
                cfg.train.seed = seed
                cfg.channel.lb = lb
                cfg.fusion.ls = None
                g = auto_grid(lb, H, W, base.decoder.grid_h)
                cfg.decoder.grid_h = cfg.decoder.grid_w = g
                cfg.validate()
                run_id = f"{name}-lb{lb}-s{seed}"
                sub = out / run_id
                sub_man = RunManifest("sweep-point", argv, cfg, sub)
                _, _, point_rows, mode = _train_one(cfg, data, sub, sub_man, run_id=run_id, variant=name)
                sub_man.add(write_metrics(point_rows, sub / "metrics.csv"), kind="metrics")
                sub_man.data["ablation"] = {"mode": mode, "modality": modality}
                man.add(sub_man.write(), kind="run-manifest", run_id=run_id)
                rows.extend(point_rows)
                r = point_rows[0]
                write_metrics(rows, csv_path)
                print(f"{run_id}: bpp={r['bpp']:.6g} mIoU={r['miou']:.4f} mAcc={r['macc']:.4f}", flush=True)
    man.add(csv_path, kind="metrics")
    for p in plot_rate_curves(rows, out, "sweep"):
        man.add(p, kind="figure")
    man.write()
    return 0


def cmd_plot(args, argv) -> int:
    csv_path = Path(args.csv_path)
    if not csv_path.is_file():
        raise FileNotFoundError(f"metrics CSV not found: {csv_path}")
    rows = read_metrics(csv_path)
    if not rows:
        raise DatasetError(f"{csv_path}: no metric rows")
    out = Path(args.out_dir or csv_path.parent)
    for p in plot_rate_curves(rows, out, csv_path.stem):
        print(p)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, TrainingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
