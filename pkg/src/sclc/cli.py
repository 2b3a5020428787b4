"""Command-line entry point: ``sclc <command> [--config run.json] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import cam, data, pipeline
from .pipeline import RunConfig


def _config(args) -> RunConfig:
    raw = {}
    if args.reference_protocol:
        raw.update(pipeline.REFERENCE_PROTOCOL)
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        if not isinstance(loaded, dict):
            raise ValueError("config must be a single JSON object")
        raw.update(loaded)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out-dir"] = args.out
    return RunConfig.from_dict(raw)


def cmd_synth(cfg, args):
    if cfg.dataset["kind"] != "synthetic":
        raise ValueError("synth needs a synthetic dataset config")
    ds = pipeline.load_dataset(cfg)
    data.write_directory(ds, cfg.out_dir, cfg.train_fraction, cfg.seed)
    print(f"wrote {len(ds)} images in {ds.n_classes} classes to {cfg.out_dir}")


def cmd_pretrain(cfg, args):
    res = pipeline.pretrain(cfg, cfg.out_dir)
    first, last = res.curve[0], res.curve[-1]
    print(f"checkpoint {res.checkpoint}; train loss {first[1]:.5f} -> {last[1]:.5f}")


def cmd_finetune(cfg, args):
    ckpt = args.checkpoint or Path(cfg.out_dir) / "pretrained.sclc"
    res = pipeline.finetune(cfg, ckpt, cfg.out_dir)
    print(res.report.to_text(), end="")
    print(f"checkpoint {res.checkpoint}")


def cmd_evaluate(cfg, args):
    ckpt = args.checkpoint or Path(cfg.out_dir) / "finetuned.sclc"
    dataset = pipeline.load_dataset(cfg)
    if args.split != "all":
        train, test = pipeline.splits(cfg, dataset)
        dataset = train if args.split == "train" else test
    rep, _ = pipeline.evaluate(ckpt, dataset)
    pipeline.write_report(rep, _, Path(cfg.out_dir), stem=f"evaluate_{args.split}")
    print(rep.to_text(), end="")


def cmd_explain(cfg, args):
    ckpt = args.checkpoint or Path(cfg.out_dir) / "finetuned.sclc"
    methods = cam.METHODS if args.method == ["all"] else tuple(args.method)
    names = None
    if cfg.dataset["kind"] == "synthetic":
        names = list(cfg.dataset.get("classes", pipeline.DEFAULT_DATASET["classes"]))
    record, _ = pipeline.explain(ckpt, args.image, methods, args.layer, args.target_class,
                                 Path(cfg.out_dir), names, args.channel_budget, cfg.resolution)
    print(json.dumps(record, indent=2))


def cmd_experiment_losses(cfg, args):
    curves = pipeline.experiment_losses(cfg, cfg.out_dir)
    for kind, curve in curves.items():
        print(f"{kind:15s} train {curve[0][1]:.5f} -> {curve[-1][1]:.5f}   test {curve[-1][2]:.5f}")


def cmd_experiment_cost(cfg, args):
    pairs = pipeline.experiment_cost(cfg, cfg.out_dir, args.repeats)
    print("seed  minority-recall(unw -> bal)  macro-F1(unw -> bal)  improved")
    for p in pairs:
        print(f"{p.seed:4d}  {p.minority_recall('unweighted'):.3f} -> {p.minority_recall('weighted'):.3f}"
              f"            {p.macro_f1('unweighted'):.3f} -> {p.macro_f1('weighted'):.3f}      {p.improved}")
    print(f"improved in {sum(p.improved for p in pairs)}/{len(pairs)} seeds")


COMMANDS = {
    "synth": (cmd_synth, "write the synthetic dataset as class folders of PPM files"),
    "pretrain": (cmd_pretrain, "contrastive pretraining of encoder + projection head"),
    "finetune": (cmd_finetune, "train the classifier head on the frozen encoder"),
    "evaluate": (cmd_evaluate, "classification report of a fine-tuned checkpoint"),
    "explain": (cmd_explain, "CAM heatmaps and overlays for one image"),
    "experiment-losses": (cmd_experiment_losses, "pretrain with each contrastive loss"),
    "experiment-cost": (cmd_experiment_cost, "paired unweighted vs class-weighted fine-tuning"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sclc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON object with kebab-case run settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--reference-protocol", action="store_true",
                       help="224px, lr 2e-5, 50/220 epochs, batch 64 (config keys still override)")
        if name in ("finetune", "evaluate", "explain"):
            p.add_argument("--checkpoint")
        if name == "evaluate":
            p.add_argument("--split", choices=("test", "train", "all"), default="test")
        if name == "explain":
            p.add_argument("--image", required=True, help="PPM image to explain")
            p.add_argument("--method", nargs="+", default=["gradcam"],
                           choices=list(cam.METHODS) + ["all"])
            p.add_argument("--layer", help="conv layer id, default: last conv")
            p.add_argument("--class", dest="target_class", type=int, help="default: predicted class")
            p.add_argument("--channel-budget", type=int, default=16)
        if name == "experiment-cost":
            p.add_argument("--repeats", type=int, default=5, help="number of paired seeds")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command][0](cfg, args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"sclc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
