"""Command-line interface: ``oocgraph {gen,train,eval,report,ingest,run}``.

Exit status is 0 on success, 1 for validation or configuration errors and
2 for I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_classifier, load_gcrn, save_classifier, save_gcrn
from .detect import read_records
from .errors import ConfigError, OocError
from .experiment import (
    KL_ALIASES,
    METHOD_ALIASES,
    MODE_ALIASES,
    ModeResult,
    TrainedModels,
    build_dataset,
    dataset_dims,
    evaluate_all,
    load_config,
    merge_config,
    render_tables,
    summarize,
    train_models,
    write_report,
)
from .gcrn import EmHistory
from .ingest import attach_oracle_appearance, corrupt_labels, load_dataset, parse_coco_annotations, parse_native_dataset
from .synth import Dataset, WorldModel, save_dataset, stream

log = logging.getLogger("oocgraph")

# Extra seed-stream keys used only by the CLI.
_APPEARANCE_STREAM = 4
_FLIP_STREAM = 5


def _config(args) -> dict:
    cfg = load_config(args.config) if args.config else merge_config({})
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    ev = cfg["eval"]
    if getattr(args, "mode", None):
        ev["modes"] = [MODE_ALIASES[m] for m in args.mode]
    if getattr(args, "method", None):
        ev["methods"] = [METHOD_ALIASES.get(m, m) for m in args.method]
    if getattr(args, "kl", None):
        ev["kl"] = KL_ALIASES[args.kl]
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True), encoding="utf-8")


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> None:
    cfg = _config(args)
    out = _out(args)
    dataset = build_dataset(cfg)
    save_dataset(dataset, out / "dataset.json")
    _write_json(out / "config.json", cfg)
    print(f"wrote {len(dataset.train)} train and {len(dataset.test)} test scenes to {out / 'dataset.json'}")


def cmd_train(args) -> None:
    cfg = _config(args)
    out = _out(args)
    dataset = load_dataset(args.dataset)
    models = train_models(cfg, *dataset_dims(dataset), dataset.train)
    save_gcrn(models.gcrn, out / "gcrn.json")
    save_classifier(models.classifier, out / "classifier.json")
    _write_json(out / "training.json", {"config": cfg, **models.histories()})
    em = models.em_history
    print(f"trained on {len(dataset.train)} scenes; EM ran {len(em.records)} iterations (converged={em.converged})")


def cmd_eval(args) -> None:
    cfg = _config(args)
    out = _out(args)
    dataset = load_dataset(args.dataset)
    models_dir = Path(args.models)
    gcrn, clf = load_gcrn(models_dir / "gcrn.json"), load_classifier(models_dir / "classifier.json")
    models = TrainedModels(gcrn, clf, [], EmHistory([], False), [])
    results = evaluate_all(cfg, models, dataset.test, gcrn.num_classes)
    report = summarize(results, None, cfg)
    write_report(report, out, results)
    print(render_tables(report), end="")


_RECORDS = re.compile(r"records_(?P<mode>oracle_labels|pred_labels)_(?P<method>\w+)\.jsonl$")


def cmd_report(args) -> None:
    src = Path(args.records)
    out = _out(args)
    found: dict[str, dict] = {}
    for path in sorted(src.glob("records_*.jsonl")):
        m = _RECORDS.match(path.name)
        if m:
            found.setdefault(m["mode"], {})[m["method"]] = read_records(path)
    if not found:
        raise ConfigError(f"no records_<mode>_<method>.jsonl files in {src}")
    results = {}
    for mode, records in found.items():
        pred_path = src / f"predictions_{mode}.json"
        preds = json.loads(pred_path.read_text(encoding="utf-8")) if pred_path.exists() else None
        results[mode] = ModeResult.from_parts(records, preds)
    report = summarize(results, None, None)
    write_report(report, out)
    print(render_tables(report), end="")


def _load_world(path) -> WorldModel:
    raw = Path(path).read_bytes()
    doc = json.loads(raw)
    if isinstance(doc, dict) and "scenes" in doc:
        world = parse_native_dataset(raw).world
        if world is None:
            raise ConfigError(f"{path} holds no world model")
        return world
    try:
        return WorldModel.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: not a world model ({exc})") from None


def cmd_ingest(args) -> None:
    out = _out(args)
    res = parse_coco_annotations(Path(args.input).read_bytes(), lenient=args.lenient)
    scenes = res.scenes
    world = None
    if args.world:
        world = _load_world(args.world)
        scenes = attach_oracle_appearance(scenes, world, stream(args.seed, _APPEARANCE_STREAM))
    if args.flip_rate:
        num_classes = world.num_classes if world is not None else len(res.remap)
        scenes, flips = corrupt_labels(scenes, args.flip_rate, stream(args.seed, _FLIP_STREAM), num_classes)
        _write_json(out / "flips.json", flips)
    split = args.split
    dataset = Dataset(world, scenes if split == "train" else [], scenes if split == "test" else [])
    save_dataset(dataset, out / "dataset.json")
    _write_json(out / "remap.json", [[k, v] for k, v in res.remap.items()])
    print(f"ingested {len(scenes)} scenes ({res.skipped} annotations skipped) into {out / 'dataset.json'}")


def cmd_run(args) -> None:
    from .experiment import run_experiment

    cfg = _config(args)
    out = _out(args)
    result = run_experiment(cfg)
    write_report(result.report, out, result.mode_results)
    save_gcrn(result.models.gcrn, out / "gcrn.json")
    save_classifier(result.models.classifier, out / "classifier.json")
    print(render_tables(result.report), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oocgraph", description="Out-of-context object detection on scene graphs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON config file (defaults used for missing keys)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", required=out_required, help="output directory")

    def eval_flags(sp):
        sp.add_argument("--mode", action="append", choices=sorted(MODE_ALIASES), help="repeatable")
        sp.add_argument("--method", action="append", choices=["gcrn", "no-cong", "softmax"], help="repeatable")
        sp.add_argument("--kl", choices=sorted(KL_ALIASES))

    sp = sub.add_parser("gen", help="generate a synthetic dataset")
    common(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train GCRN and the context-free classifier")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a dataset's test split with trained models")
    common(sp)
    eval_flags(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--models", required=True, help="directory holding gcrn.json and classifier.json")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="tables, JSON and ROC CSV from record files")
    sp.add_argument("--records", required=True, help="directory written by eval or run")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("ingest", help="convert COCO-style annotations to the native dataset format")
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--world", help="world model (JSON) or native dataset whose world supplies appearance")
    sp.add_argument("--lenient", action="store_true", help="skip invalid boxes instead of failing")
    sp.add_argument("--flip-rate", type=float, default=0.0, help="corrupt labels at this rate")
    sp.add_argument("--split", choices=["train", "test"], default="test")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("run", help="generate, train, evaluate and report in one go")
    common(sp)
    eval_flags(sp)
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OocError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
