"""Command-line entry point.

Subcommands: gradcheck, synth, train-demo, eval, ablate. Logs go to
stderr, machine-readable artifacts to files; stdout carries a single final
summary line. Every run that writes artifacts also writes a manifest.json
next to them (subcommand, resolved configuration, seed, engine version,
paths, timestamps); rerunning with an identical manifest reproduces the
primary outputs byte for byte (timestamps aside, which live only in the
manifest).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .checks import BLOCKS, run_all_blocks, run_block_suite
from .coco import load_coco, load_detections
from .errors import GradCheckError, TrainingDiverged
from .evaluation import evaluate, format_table
from .model import ModelConfig
from .synth import SynthSpec, generate_synthetic, load_dataset, small_target_ratio
from .train import ablate, train_demo


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    engine_version: str
    inputs: list
    outputs: list
    started_at: str
    finished_at: str


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _log(msg):
    print(msg, file=sys.stderr)


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2, default=list)
        f.write("\n")


def _write_manifest(out_dir, subcommand, config, seed, inputs, outputs, started):
    manifest = RunManifest(
        subcommand=subcommand, config=config, seed=seed, engine_version=__version__,
        inputs=[str(p) for p in inputs], outputs=[str(p) for p in outputs],
        started_at=started, finished_at=_now(),
    )
    _write_json(Path(out_dir) / "manifest.json", asdict(manifest))


def _model_config_from(args) -> ModelConfig:
    """Config file first, explicit flags on top of it."""
    values = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            file_values = json.load(f)
        known = {f.name for f in fields(ModelConfig)}
        unknown = set(file_values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for key in ("input_size", "seed", "spd_enabled", "cspok_enabled", "cls_loss"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    for key in ("stage_widths", "strides"):
        if key in values:
            values[key] = tuple(values[key])
    return ModelConfig(**values)


def _cmd_gradcheck(args):
    started = _now()
    blocks = BLOCKS if args.block == "all" else (args.block,)
    reports = []
    for block in blocks:
        rep = run_block_suite(block, instances=args.instances, epsilon=args.eps,
                              tolerance=args.tol, seed=args.seed)
        _log(str(rep))
        reports.append(rep)
    n_pass = sum(r.passed for r in reports)
    if args.out:
        out_dir = Path(args.out)
        _write_json(out_dir / "gradcheck.json",
                    {"reports": [asdict(r) for r in reports],
                     "tolerance": args.tol, "epsilon": args.eps})
        _write_manifest(out_dir, "gradcheck",
                        {"blocks": list(blocks), "tol": args.tol, "eps": args.eps,
                         "instances": args.instances},
                        args.seed, [], [str(out_dir / "gradcheck.json")], started)
    print(f"gradcheck: {n_pass}/{len(reports)} blocks passed")
    return 0 if n_pass == len(reports) else 1


def _cmd_synth(args):
    started = _now()
    if args.spec:
        spec = SynthSpec.from_json(Path(args.spec).read_text())
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    else:
        spec = SynthSpec(seed=args.seed if args.seed is not None else 0,
                         n_images=args.images, image_size=args.size,
                         n_classes=args.classes)
    out_dir = Path(args.out)
    ds = generate_synthetic(spec, out_dir)
    ratio = small_target_ratio(ds.annotations)
    _log(f"wrote {len(ds.images)} images, {len(ds.annotations)} annotations, "
         f"small-target ratio {ratio:.3f}")
    outputs = [str(out_dir / "annotations.json")] + \
              [str(out_dir / im.file_name) for im in ds.coco_images]
    _write_manifest(out_dir, "synth", json.loads(spec.to_json()), spec.seed,
                    [args.spec] if args.spec else [], outputs, started)
    print(f"synth: {len(ds.images)} images -> {out_dir}")
    return 0


def _cmd_train_demo(args):
    started = _now()
    config = _model_config_from(args)
    dataset = load_dataset(args.data)
    history = train_demo(config, dataset, epochs=args.epochs, lr=args.lr,
                         batch_size=args.batch_size)
    out_dir = Path(args.out)
    doc = {
        "config": asdict(config),
        "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
        "history": [{"epoch": r.epoch, "loss": r.loss,
                     "eval": r.eval_result.to_dict()} for r in history],
    }
    _write_json(out_dir / "history.json", doc)
    _write_manifest(out_dir, "train-demo", asdict(config), config.seed,
                    [args.data], [str(out_dir / "history.json")], started)
    final = history[-1].loss if history else float("nan")
    for rec in history:
        _log(f"epoch {rec.epoch}: loss {rec.loss:.4f} map50 {rec.eval_result.map_50:.3f}")
    print(f"train-demo: {len(history)} epochs, final loss {final:.4f} -> {out_dir}")
    return 0


def _cmd_eval(args):
    started = _now()
    _, gts, categories = load_coco(args.gt)
    dets = load_detections(args.dets)
    result = evaluate(dets, gts, categories)
    _write_json(args.out, result.to_dict())
    out_dir = Path(args.out).parent
    _write_manifest(out_dir, "eval", {"iou_thresholds": "0.50:0.05:0.95"}, 0,
                    [args.gt, args.dets], [args.out], started)
    if args.table:
        _log(format_table(result))
    print(f"eval: map_50_95={result.map_50_95:.4f} map_50={result.map_50:.4f} "
          f"-> {args.out}")
    return 0


def _cmd_ablate(args):
    started = _now()
    spec = SynthSpec.from_json(Path(args.spec).read_text())
    out_dir = Path(args.out)
    dataset = generate_synthetic(spec, out_dir / "dataset")
    seeds = [int(s) for s in args.seeds.split(",") if s]
    base = _model_config_from(args)
    report = ablate(dataset, seeds, base_config=base, epochs=args.epochs, lr=args.lr,
                    batch_size=args.batch_size)
    _write_json(out_dir / "ablation.json", report)
    _write_manifest(out_dir, "ablate", asdict(base), seeds[0] if seeds else 0,
                    [args.spec], [str(out_dir / "ablation.json")], started)
    for arm in report["arms"]:
        m = arm["metrics"]
        _log(f"{arm['name']:<16} map50={m['map_50']} map50_95={m['map_50_95']} "
             f"ap_small={m['ap_small']}")
    print(f"ablate: 4 arms x {len(seeds)} seeds -> {out_dir / 'ablation.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tinydet",
                                     description="desk-scale detector toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gradcheck", help="run finite-difference gradient suites")
    p.add_argument("--block", default="all", choices=("all",) + BLOCKS)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", default=None, help="SynthSpec JSON file")
    p.add_argument("--images", type=int, default=16)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train-demo", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--config", default=None, help="ModelConfig JSON; flags override")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--input-size", dest="input_size", type=int, default=None)
    p.add_argument("--spd", dest="spd_enabled", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--cspok", dest="cspok_enabled", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--cls-loss", dest="cls_loss", choices=("vfl", "focal", "bce"),
                   default=None)
    p.set_defaults(fn=_cmd_train_demo)

    p = sub.add_parser("eval", help="evaluate detections against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--dets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--table", action="store_true")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run the four-arm ablation")
    p.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=8e-3)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--input-size", dest="input_size", type=int, default=None)
    p.add_argument("--spd", dest="spd_enabled", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--cspok", dest="cspok_enabled", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--cls-loss", dest="cls_loss", choices=("vfl", "focal", "bce"),
                   default=None)
    p.set_defaults(fn=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, GradCheckError, TrainingDiverged) as e:
        _log(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
