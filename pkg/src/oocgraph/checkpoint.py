"""JSON checkpoints for GCRN models and the context-free classifier.

Floats are written with ``repr`` precision, so a load reproduces every
parameter bit for bit. Optimizer state is not stored.
"""

from __future__ import annotations

import json

import numpy as np

from .detect import ContextFreeClassifier
from .errors import CheckpointDimensionError, CheckpointError, CheckpointTruncatedError, CheckpointVersionError
from .gcn import AdamWState, GcnModel
from .gcrn import Gcrn
from .scene import GEOMETRY_DIM

CHECKPOINT_VERSION = 1


def model_to_dict(model: GcnModel) -> dict:
    return {
        "in_dim": model.in_dim,
        "num_classes": model.num_classes,
        "widths": list(model.widths),
        "params": {name: {"shape": list(v.shape), "values": v.ravel().tolist()} for name, v in model.params.items()},
    }


def model_from_dict(d: dict) -> GcnModel:
    try:
        model = GcnModel(int(d["in_dim"]), int(d["num_classes"]), tuple(int(w) for w in d["widths"]), {})
        for name, p in d["params"].items():
            model.params[name] = np.array(p["values"], dtype=np.float64).reshape(p["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed model payload: {exc}") from None
    try:
        model.check()
    except ValueError as exc:
        raise CheckpointDimensionError(str(exc)) from None
    return model


def _payload(kind: str, body: dict) -> str:
    return json.dumps({"format": "oocgraph-checkpoint", "version": CHECKPOINT_VERSION, "kind": kind, **body})


def _read(path, kind: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        stripped = text.rstrip()
        if exc.pos >= len(stripped) or not stripped.endswith("}"):
            raise CheckpointTruncatedError(f"{path}: checkpoint ends prematurely") from None
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("format") != "oocgraph-checkpoint":
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: version {doc.get('version')!r}, expected {CHECKPOINT_VERSION}")
    if doc.get("kind") != kind:
        raise CheckpointError(f"{path}: holds a {doc.get('kind')!r} checkpoint, expected {kind!r}")
    return doc


def save_gcrn(gcrn: Gcrn, path) -> None:
    body = {
        "num_classes": gcrn.num_classes,
        "appearance_dim": gcrn.appearance_dim,
        "pretrained": gcrn.pretrained,
        "repg": model_to_dict(gcrn.repg),
        "cong": model_to_dict(gcrn.cong),
        "repg_pretrained": None if gcrn.repg_pretrained is None else model_to_dict(gcrn.repg_pretrained),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_payload("gcrn", body))


def load_gcrn(path) -> Gcrn:
    doc = _read(path, "gcrn")
    try:
        repg = model_from_dict(doc["repg"])
        cong = model_from_dict(doc["cong"])
        num_classes, app_dim = int(doc["num_classes"]), int(doc["appearance_dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    if repg.in_dim != app_dim + GEOMETRY_DIM or cong.in_dim != num_classes + GEOMETRY_DIM:
        raise CheckpointDimensionError(
            f"input dims repg={repg.in_dim} cong={cong.in_dim} incompatible with "
            f"{num_classes} classes and appearance dim {app_dim}"
        )
    if repg.num_classes != num_classes or cong.num_classes != num_classes:
        raise CheckpointDimensionError(f"model heads do not output {num_classes} classes")
    snap = doc.get("repg_pretrained")
    snapshot = None if snap is None else model_from_dict(snap)
    if snapshot is not None and snapshot.expected_shapes() != repg.expected_shapes():
        raise CheckpointDimensionError("pretrained snapshot does not match the representation model")
    return Gcrn(
        repg, cong, num_classes, app_dim,
        pretrained=bool(doc.get("pretrained", True)),
        repg_pretrained=snapshot,
    )


def save_classifier(classifier: ContextFreeClassifier, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_payload("context_free", {"model": model_to_dict(classifier.model)}))


def load_classifier(path) -> ContextFreeClassifier:
    doc = _read(path, "context_free")
    if "model" not in doc:
        raise CheckpointError(f"{path}: malformed checkpoint (no model)")
    return ContextFreeClassifier(model_from_dict(doc["model"]), AdamWState())


save_model = save_gcrn
load_model = load_gcrn
