"""End-to-end benchmark: generate, train, score, summarise.

Config files are JSON with four optional sections (``world``, ``data``,
``model``, ``eval``) plus a top-level ``seed``; every key has a default, and
unknown keys are rejected. See ``DEFAULT_CONFIG``.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .detect import (
    ContextFreeClassifier,
    KlMode,
    Method,
    OocRecord,
    ooc_score,
    softmax_confidence_baseline,
    train_context_free,
    write_records,
)
from .errors import ConfigError, DegenerateInputError
from .gcrn import EmHistory, Gcrn, LabelSource, em_train, no_context_forward, predict, pretrain_repg
from .ingest import corrupt_labels
from .metrics import accuracy_report, auc, roc_curve
from .scene import SceneGraph, Violation
from .synth import Dataset, GenConfig, generate_dataset, generate_world, stream

logger = logging.getLogger(__name__)

MODES = ("oracle_labels", "pred_labels")
MODE_ALIASES = {"oracle-labels": "oracle_labels", "pred-labels": "pred_labels"}
METHOD_ALIASES = {"no-cong": "no_cong", "softmax": "softmax_confidence"}
KL_ALIASES = {"sym": "symmetric", "free2ctx": "kl_free_to_ctx", "ctx2free": "kl_ctx_to_free"}

DEFAULT_CONFIG = {
    "seed": 0,
    "world": {
        "num_classes": 12,
        "num_groups": 2,
        "appearance_dim": 16,
        "noise_scale": 0.15,
        "size_spread": 0.1,
        "scene_size_range": [3, 8],
    },
    "data": {
        "num_train_scenes": 2000,
        "num_test_scenes": 500,
        "ooc_fraction": 0.5,
        "violation_mix": {"cooccurrence": 0.68, "size": 0.32},
        "size_scale_range": [2.0, 5.0],
    },
    "model": {
        "widths": [256, 128, 64, 64],
        "lr": 0.001,
        "pretrain_epochs": 5,
        "em_max_iterations": 10,
        "em_threshold": 0.01,
        "em_inner_epochs": 1,
        "classifier_hidden": [64, 64],
        "classifier_epochs": 20,
        "batch_size": 16,
    },
    "eval": {
        "modes": ["oracle_labels", "pred_labels"],
        "methods": ["gcrn", "no_cong", "softmax_confidence"],
        "kl": "symmetric",
        "pred_labels_source": "corrupt",
        "pred_label_flip_rate": 0.1,
    },
}


def merge_config(overrides: dict | None) -> dict:
    """Defaults overlaid with ``overrides``; unknown keys raise ConfigError."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    overrides = overrides or {}
    if not isinstance(overrides, dict):
        raise ConfigError("config must be a JSON object")
    unknown = []
    for key, value in overrides.items():
        if key not in cfg:
            unknown.append(key)
        elif isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be an object")
            unknown += [f"{key}.{k}" for k in value if k not in cfg[key]]
            cfg[key].update({k: v for k, v in value.items() if k in cfg[key]})
        else:
            cfg[key] = value
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    ev = cfg["eval"]
    ev["modes"] = [MODE_ALIASES.get(m, m) for m in ev["modes"]]
    ev["methods"] = [METHOD_ALIASES.get(m, m) for m in ev["methods"]]
    ev["kl"] = KL_ALIASES.get(ev["kl"], ev["kl"])
    try:
        for m in ev["modes"]:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}")
        [Method(m) for m in ev["methods"]]
        KlMode(ev["kl"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if ev["pred_labels_source"] not in ("corrupt", "repg_argmax"):
        raise ConfigError(f"pred_labels_source must be 'corrupt' or 'repg_argmax'")
    return cfg


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return merge_config(raw)


def build_dataset(cfg: dict) -> Dataset:
    w, d, seed = cfg["world"], cfg["data"], int(cfg["seed"])
    world = generate_world(
        int(w["num_classes"]),
        int(w["num_groups"]),
        int(w["appearance_dim"]),
        seed,
        noise_scale=float(w["noise_scale"]),
        scene_size_range=tuple(w["scene_size_range"]),
        size_spread=float(w["size_spread"]),
    )
    gen = GenConfig(
        seed=seed,
        num_train_scenes=int(d["num_train_scenes"]),
        num_test_scenes=int(d["num_test_scenes"]),
        ooc_fraction=float(d["ooc_fraction"]),
        violation_mix=dict(d["violation_mix"]),
        size_scale_range=tuple(d["size_scale_range"]),
    )
    return generate_dataset(world, gen)


@dataclass
class TrainedModels:
    gcrn: Gcrn
    classifier: ContextFreeClassifier
    pretrain_history: list[float]
    em_history: EmHistory
    classifier_history: list[float]

    def histories(self) -> dict:
        return {
            "pretrain_loss": self.pretrain_history,
            "em": self.em_history.to_dict(),
            "classifier_loss": self.classifier_history,
        }


def dataset_dims(dataset: Dataset) -> tuple[int, int]:
    """(num_classes, appearance_dim), from the world or else from the scenes."""
    if dataset.world is not None:
        return dataset.world.num_classes, dataset.world.appearance_dim
    scenes = dataset.train + dataset.test
    labels = [n.label for s in scenes for n in s.nodes if n.label is not None]
    dims = {len(n.appearance) for s in scenes for n in s.nodes if n.appearance is not None}
    if not labels or len(dims) != 1:
        raise ConfigError("dataset has no world model and no consistent labels/appearance to infer sizes from")
    return max(labels) + 1, dims.pop()


def train_models(
    cfg: dict, num_classes: int, appearance_dim: int, train: Sequence[SceneGraph], em_observer=None
) -> TrainedModels:
    m, seed = cfg["model"], int(cfg["seed"])
    gcrn = Gcrn.init(num_classes, appearance_dim, m["widths"], seed=seed, lr=float(m["lr"]))
    bs = int(m["batch_size"])
    gcrn, pre_hist = pretrain_repg(gcrn, train, int(m["pretrain_epochs"]), seed=seed + 10, batch_size=bs)
    logger.info("RepG pretraining losses %s", pre_hist)
    gcrn, em_hist = em_train(
        gcrn,
        train,
        max_iterations=int(m["em_max_iterations"]),
        disagreement_threshold=float(m["em_threshold"]),
        inner_epochs=int(m["em_inner_epochs"]),
        seed=seed + 20,
        observer=em_observer,
        batch_size=bs,
    )
    clf = ContextFreeClassifier.init(
        num_classes, appearance_dim, m["classifier_hidden"], seed=seed + 30, lr=float(m["lr"])
    )
    clf, clf_hist = train_context_free(clf, train, int(m["classifier_epochs"]), seed=seed + 40, batch_size=bs)
    logger.info("context-free classifier losses %s", clf_hist)
    return TrainedModels(gcrn, clf, pre_hist, em_hist, clf_hist)


@dataclass
class ModeResult:
    records: dict[str, list[OocRecord]]  # method -> records
    context_pred: np.ndarray | None  # ConG argmax per node
    no_context_pred: np.ndarray | None  # pretrained-RepG argmax per node
    truth_labels: np.ndarray | None
    ooc_flags: np.ndarray | None

    def predictions_dict(self) -> dict:
        return {
            "context_pred": self.context_pred.tolist(),
            "no_context_pred": self.no_context_pred.tolist(),
            "truth_labels": self.truth_labels.tolist(),
            "ooc_flags": self.ooc_flags.tolist(),
        }

    @classmethod
    def from_parts(cls, records: dict[str, list[OocRecord]], predictions: dict | None) -> "ModeResult":
        """Rebuild from saved files; without ``predictions`` only AUC tables can be formed."""
        if predictions is None:
            return cls(records, None, None, None, None)
        try:
            return cls(
                records,
                np.asarray(predictions["context_pred"], dtype=np.int64),
                np.asarray(predictions["no_context_pred"], dtype=np.int64),
                np.asarray(predictions["truth_labels"], dtype=np.int64),
                np.asarray(predictions["ooc_flags"], dtype=bool),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed predictions file: {exc}") from None


def mode_scenes(cfg: dict, mode: str, scenes: Sequence[SceneGraph], num_classes: int):
    """Scenes as seen by the scorer in ``mode`` and the label source to use."""
    if mode == "oracle_labels":
        return list(scenes), LabelSource.GROUND_TRUTH
    ev = cfg["eval"]
    if ev["pred_labels_source"] == "repg_argmax":
        return list(scenes), LabelSource.REPG_ARGMAX
    noisy, _ = corrupt_labels(scenes, float(ev["pred_label_flip_rate"]), stream(int(cfg["seed"]), 3), num_classes)
    return noisy, LabelSource.GROUND_TRUTH


def evaluate_mode(
    models: TrainedModels,
    scenes: Sequence[SceneGraph],
    truth_scenes: Sequence[SceneGraph],
    label_source: LabelSource,
    methods: Sequence[str],
    kl: str,
) -> ModeResult:
    methods = [Method(m) for m in methods]
    records: dict[str, list[OocRecord]] = {m.value: [] for m in methods}
    ctx_pred, rep_pred, truth_labels, flags = [], [], [], []
    for scene, truth in zip(scenes, truth_scenes):
        free = models.classifier.predict_scene(scene)
        ctx = predict(models.gcrn, scene, label_source).cong_probs
        rep = no_context_forward(models.gcrn, scene)
        ctx_pred.extend(ctx.argmax(axis=1))
        rep_pred.extend(rep.argmax(axis=1))
        for i, node in enumerate(truth.nodes):
            truth_labels.append(node.label)
            flags.append(node.is_ooc_truth)
            for m in methods:
                if m is Method.GCRN:
                    s = ooc_score(ctx[i], free[i], kl)
                elif m is Method.NO_CONG:
                    s = ooc_score(rep[i], free[i], kl)
                else:
                    s = softmax_confidence_baseline(free[i])
                records[m.value].append(OocRecord(truth.scene_id, i, s, node.is_ooc_truth, node.violation))
    return ModeResult(records, np.array(ctx_pred), np.array(rep_pred), np.array(truth_labels), np.array(flags, dtype=bool))


def auc_by_violation(records: Sequence[OocRecord]) -> dict[str, float | None]:
    """AUC of each violation kind's OOC nodes against all in-context nodes."""
    negatives = [r for r in records if not r.truth]
    out: dict[str, float | None] = {}
    for kind in (Violation.COOCCURRENCE, Violation.SIZE):
        positives = [r for r in records if r.truth and r.violation is kind]
        out[kind.value] = _safe_auc(positives + negatives)
    return out


def _finite_or_none(x: float) -> float | None:
    return x if np.isfinite(x) else None


def _safe_auc(records) -> float | None:
    try:
        return auc(records)
    except DegenerateInputError:
        return None


def summarize(mode_results: dict[str, ModeResult], models: TrainedModels | None, cfg: dict | None) -> dict:
    report: dict = {"auc": {}, "auc_by_violation": {}, "accuracy": {}, "roc": {}}
    if cfg is not None:
        report["config"] = cfg
    for mode, res in mode_results.items():
        report["auc"][mode] = {m: _safe_auc(recs) for m, recs in res.records.items()}
        report["auc_by_violation"][mode] = {m: auc_by_violation(recs) for m, recs in res.records.items()}
        if res.truth_labels is not None:
            report["accuracy"][mode] = {
                "gcrn": accuracy_report(res.context_pred, res.truth_labels, res.ooc_flags).to_dict(),
                "no_cong": accuracy_report(res.no_context_pred, res.truth_labels, res.ooc_flags).to_dict(),
            }
        report["roc"][mode] = {
            m: [[_finite_or_none(p.threshold), p.true_positive_rate, p.false_positive_rate] for p in roc_curve(recs)]
            for m, recs in res.records.items()
            if _safe_auc(recs) is not None
        }
    oracle = "oracle_labels" if "oracle_labels" in mode_results else next(iter(mode_results), None)
    report["summary_auc_by_method"] = report["auc"].get(oracle, {})
    report["summary_accuracy"] = report["accuracy"].get(oracle, {})
    report["summary_auc_by_violation"] = report["auc_by_violation"].get(oracle, {}).get("gcrn")
    report["summary_auc_by_mode"] = {mode: aucs.get("gcrn") for mode, aucs in report["auc"].items()}
    if models is not None:
        report["training"] = models.histories()
    return report


@dataclass
class ExperimentResult:
    report: dict
    dataset: Dataset
    models: TrainedModels
    mode_results: dict[str, ModeResult]


def run_experiment(config: dict | str | Path | None = None, em_observer=None) -> ExperimentResult:
    """Full pipeline; ``em_observer`` is forwarded to :func:`em_train`."""
    cfg = load_config(config) if isinstance(config, (str, Path)) else merge_config(config)
    dataset = build_dataset(cfg)
    models = train_models(cfg, *dataset_dims(dataset), dataset.train, em_observer)
    results = evaluate_all(cfg, models, dataset.test, dataset.world.num_classes)
    return ExperimentResult(summarize(results, models, cfg), dataset, models, results)


def evaluate_all(
    cfg: dict, models: TrainedModels, test: Sequence[SceneGraph], num_classes: int
) -> dict[str, ModeResult]:
    """Score ``test`` under every configured mode and method."""
    ev = cfg["eval"]
    results = {}
    for mode in ev["modes"]:
        scenes, source = mode_scenes(cfg, mode, test, num_classes)
        results[mode] = evaluate_mode(models, scenes, test, source, ev["methods"], ev["kl"])
    return results


def _fmt(v) -> str:
    return "absent" if v is None else f"{v:.3f}"


def render_tables(report: dict) -> str:
    lines = ["AUC by method (oracle labels)", "-" * 40]
    for m, v in report.get("summary_auc_by_method", {}).items():
        lines.append(f"{m:<24}{_fmt(v):>10}")
    lines += ["", "Accuracy (OOC lower is better)", "-" * 40, f"{'':<12}{'OOC':>9}{'non-OOC':>10}{'overall':>9}"]
    for m, acc in report.get("summary_accuracy", {}).items():
        lines.append(
            f"{m:<12}{_fmt(acc['ooc_accuracy']):>9}{_fmt(acc['non_ooc_accuracy']):>10}{_fmt(acc['overall_accuracy']):>9}"
        )
    lines += ["", "GCRN AUC by violation kind", "-" * 40]
    for kind, v in (report.get("summary_auc_by_violation") or {}).items():
        lines.append(f"{kind:<24}{_fmt(v):>10}")
    lines += ["", "GCRN AUC by label mode", "-" * 40]
    for mode, v in report.get("summary_auc_by_mode", {}).items():
        lines.append(f"{mode:<24}{_fmt(v):>10}")
    em = report.get("training", {}).get("em")
    if em:
        lines += ["", "EM iterations", "-" * 40]
        for r in em["records"]:
            lines.append(
                f"iter {r['iteration']:>2}  repg {r['repg_loss']:.4f}  cong {r['cong_loss']:.4f}  "
                f"disagreement {r['disagreement']:.4f}"
            )
    return "\n".join(lines) + "\n"


def write_roc_csv(points: Sequence[Sequence[float]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold,true_positive_rate,false_positive_rate\n")
        for t, tpr, fpr in points:
            fh.write(f"{'inf' if t is None else repr(t)},{tpr!r},{fpr!r}\n")


def write_report(report: dict, out_dir, mode_results: dict[str, ModeResult] | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    (out / "tables.txt").write_text(render_tables(report), encoding="utf-8")
    for mode, by_method in report.get("roc", {}).items():
        for method, points in by_method.items():
            write_roc_csv(points, out / f"roc_{mode}_{method}.csv")
    for mode, res in (mode_results or {}).items():
        for method, recs in res.records.items():
            write_records(recs, out / f"records_{mode}_{method}.jsonl")
        if res.truth_labels is not None:
            pred_path = out / f"predictions_{mode}.json"
            pred_path.write_text(json.dumps(res.predictions_dict()), encoding="utf-8")
    return out
