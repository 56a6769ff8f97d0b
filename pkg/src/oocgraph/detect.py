"""Context-free classifier, KL-based OOC scores and thresholding."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError, ValidationError
from .gcn import AdamWState, GcnModel, gcn_forward, train_samples
from .gcrn import Gcrn, LabelSource, no_context_forward, predict
from .scene import GEOMETRY_DIM, SceneGraph, Violation, repg_inputs
from .tensor import PROB_FLOOR


class KlMode(str, enum.Enum):
    FREE_TO_CTX = "kl_free_to_ctx"
    CTX_TO_FREE = "kl_ctx_to_free"
    SYMMETRIC = "symmetric"


class Method(str, enum.Enum):
    GCRN = "gcrn"
    NO_CONG = "no_cong"
    SOFTMAX = "softmax_confidence"


@dataclass
class ContextFreeClassifier:
    """Per-node MLP; structurally a residual GCN run with an identity adjacency."""

    model: GcnModel
    state: AdamWState

    @classmethod
    def init(
        cls, num_classes: int, appearance_dim: int, hidden: Sequence[int] = (64, 64), seed: int = 0, lr: float = 1e-3
    ) -> "ContextFreeClassifier":
        model = GcnModel.init(appearance_dim + GEOMETRY_DIM, num_classes, hidden, seed)
        return cls(model, AdamWState(lr=lr))

    @property
    def num_classes(self) -> int:
        return self.model.num_classes

    def probs(self, node_inputs: np.ndarray) -> np.ndarray:
        # Each row is classified alone: identity adjacency means no message passing.
        return gcn_forward(self.model, np.eye(node_inputs.shape[0]), node_inputs).probs

    def predict_scene(self, scene: SceneGraph) -> np.ndarray:
        return self.probs(repg_inputs(scene))


def train_context_free(
    classifier: ContextFreeClassifier,
    scenes: Sequence[SceneGraph],
    epochs: int,
    seed: int = 0,
    batch_size: int = 1,
) -> tuple[ContextFreeClassifier, list[float]]:
    """One AdamW step per scene, the scene's nodes forming an independent minibatch."""
    samples = []
    for s in scenes:
        if not s.has_labels:
            raise ValidationError(f"scene {s.scene_id!r} is unlabeled")
        samples.append((np.eye(len(s)), repg_inputs(s), np.asarray(s.labels), None))
    return classifier, train_samples(classifier.model, samples, epochs, seed, classifier.state, batch_size)


def _as_distribution(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"distribution must be 1-D, got {arr.shape}")
    return arr


def kl_divergence(p, q) -> float:
    """KL(p || q) with both arguments floored at 1e-12."""
    p = _as_distribution(p)
    q = _as_distribution(q)
    if p.shape != q.shape:
        raise ShapeError(f"distribution lengths differ: {p.shape} vs {q.shape}")
    pf = np.maximum(p, PROB_FLOOR)
    qf = np.maximum(q, PROB_FLOOR)
    # Clamp tiny negative round-off; the floored sum can dip below 0 by ~1e-16.
    return max(float(np.sum(p * np.log(pf / qf))), 0.0)


def ooc_score(context_probs, free_probs, mode: KlMode | str = KlMode.SYMMETRIC) -> float:
    mode = KlMode(mode)
    if mode is KlMode.FREE_TO_CTX:
        return kl_divergence(free_probs, context_probs)
    if mode is KlMode.CTX_TO_FREE:
        return kl_divergence(context_probs, free_probs)
    return kl_divergence(free_probs, context_probs) + kl_divergence(context_probs, free_probs)


def softmax_confidence_baseline(free_probs) -> float:
    """1 - max probability, so that larger means more likely out of context."""
    return 1.0 - float(np.max(_as_distribution(free_probs)))


@dataclass(frozen=True)
class OocRecord:
    scene_id: str
    node_index: int
    score: float
    truth: bool
    violation: Violation = Violation.NONE

    def __post_init__(self):
        if not np.isfinite(self.score) or self.score < 0:
            raise ValidationError(f"OOC score must be finite and >= 0, got {self.score}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "scene_id": self.scene_id,
                "node_index": self.node_index,
                "score": self.score,
                "truth": self.truth,
                "violation": Violation(self.violation).value,
            }
        )

    @classmethod
    def from_dict(cls, d: dict) -> "OocRecord":
        return cls(str(d["scene_id"]), int(d["node_index"]), float(d["score"]), bool(d["truth"]), Violation(d["violation"]))


def write_records(records: Iterable[OocRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_records(path) -> list[OocRecord]:
    with open(path, encoding="utf-8") as fh:
        return [OocRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def detect(records: Sequence[OocRecord], threshold: float) -> list[bool]:
    return [r.score > threshold for r in records]


def score_scene(
    gcrn: Gcrn,
    classifier: ContextFreeClassifier,
    scene: SceneGraph,
    method: Method | str = Method.GCRN,
    label_source: LabelSource | str = LabelSource.GROUND_TRUTH,
    kl_mode: KlMode | str = KlMode.SYMMETRIC,
    truth_scene: SceneGraph | None = None,
) -> list[OocRecord]:
    """OOC records for every node of ``scene``.

    ``truth_scene`` supplies the ground-truth flags when ``scene`` carries
    corrupted labels; it defaults to ``scene`` itself.
    """
    method = Method(method)
    truth_scene = truth_scene or scene
    free = classifier.predict_scene(scene)
    if method is Method.SOFTMAX:
        scores = [softmax_confidence_baseline(row) for row in free]
    else:
        if method is Method.GCRN:
            ctx = predict(gcrn, scene, label_source).cong_probs
        else:
            ctx = no_context_forward(gcrn, scene)
        scores = [ooc_score(c, f, kl_mode) for c, f in zip(ctx, free)]
    return [
        OocRecord(scene.scene_id, i, s, node.is_ooc_truth, node.violation)
        for i, (s, node) in enumerate(zip(scores, truth_scene.nodes))
    ]
