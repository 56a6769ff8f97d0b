"""Representation graph + context graph, coupled by alternating EM.

RepG predicts labels from appearance and geometry. ConG predicts a node's
label from its neighbours' labels and the scene geometry; the node's own
label slot is zeroed so ConG can never copy it. Because every node needs a
different mask, ConG is evaluated on an ``(n, n, d)`` stack where copy ``i``
has row ``i`` masked, and only output ``[i, i]`` is read.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import StateError, ValidationError
from .gcn import DEFAULT_WIDTHS, AdamWState, GcnModel, gcn_forward, train_samples
from .scene import GEOMETRY_DIM, SceneGraph, cong_inputs, repg_inputs

logger = logging.getLogger(__name__)


class LabelSource(str, enum.Enum):
    GROUND_TRUTH = "ground_truth"
    REPG_ARGMAX = "repg_argmax"


@dataclass
class Gcrn:
    repg: GcnModel
    cong: GcnModel
    num_classes: int
    appearance_dim: int
    repg_state: AdamWState = field(default_factory=AdamWState)
    cong_state: AdamWState = field(default_factory=AdamWState)
    pretrained: bool = False
    # RepG as it stood after pretraining, i.e. with no context graph involved.
    repg_pretrained: GcnModel | None = None

    @classmethod
    def init(
        cls,
        num_classes: int,
        appearance_dim: int,
        widths: Sequence[int] = DEFAULT_WIDTHS,
        seed: int = 0,
        lr: float = 1e-3,
    ) -> "Gcrn":
        repg = GcnModel.init(appearance_dim + GEOMETRY_DIM, num_classes, widths, seed)
        cong = GcnModel.init(num_classes + GEOMETRY_DIM, num_classes, widths, seed + 1)
        return cls(repg, cong, num_classes, appearance_dim, AdamWState(lr=lr), AdamWState(lr=lr))

    def check(self) -> None:
        if self.repg.num_classes != self.num_classes or self.cong.num_classes != self.num_classes:
            raise ValidationError("RepG/ConG disagree on num_classes")
        if self.repg.in_dim != self.appearance_dim + GEOMETRY_DIM:
            raise ValidationError(f"RepG in_dim {self.repg.in_dim} != {self.appearance_dim} + {GEOMETRY_DIM}")
        if self.cong.in_dim != self.num_classes + GEOMETRY_DIM:
            raise ValidationError(f"ConG in_dim {self.cong.in_dim} != {self.num_classes} + {GEOMETRY_DIM}")


@dataclass
class EmRecord:
    iteration: int
    repg_loss: float
    cong_loss: float
    disagreement: float


@dataclass
class EmHistory:
    records: list[EmRecord] = field(default_factory=list)
    converged: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {"converged": self.converged, "records": [asdict(r) for r in self.records]}


@dataclass
class Prediction:
    repg_probs: np.ndarray
    cong_probs: np.ndarray


def masked_cong_batch(scene: SceneGraph, assumed_labels: Sequence[int], num_classes: int) -> np.ndarray:
    """``(n, n, d)`` ConG inputs; copy ``i`` has node ``i``'s label slot zeroed."""
    base = cong_inputs(scene, assumed_labels, num_classes)
    n = len(scene)
    batch = np.repeat(base[None], n, axis=0)
    idx = np.arange(n)
    batch[idx, idx, :num_classes] = 0.0
    return batch


def _diag(n: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(n)
    return idx, idx


def cong_forward(gcrn: Gcrn, scene: SceneGraph, assumed_labels: Sequence[int]) -> np.ndarray:
    batch = masked_cong_batch(scene, assumed_labels, gcrn.num_classes)
    return gcn_forward(gcrn.cong, scene.adjacency_norm, batch).probs[_diag(len(scene))]


def repg_forward(gcrn: Gcrn, scene: SceneGraph) -> np.ndarray:
    return gcn_forward(gcrn.repg, scene.adjacency_norm, repg_inputs(scene)).probs


def no_context_forward(gcrn: Gcrn, scene: SceneGraph) -> np.ndarray:
    """RepG output from the pretrained snapshot (current RepG if none was taken)."""
    model = gcrn.repg_pretrained or gcrn.repg
    return gcn_forward(model, scene.adjacency_norm, repg_inputs(scene)).probs


def _require_labels(scenes: Sequence[SceneGraph]) -> None:
    for scene in scenes:
        if not scene.has_labels:
            raise ValidationError(f"scene {scene.scene_id!r} is unlabeled")


def pretrain_repg(
    gcrn: Gcrn, train_scenes: Sequence[SceneGraph], epochs: int = 5, seed: int = 0, batch_size: int = 1
) -> tuple[Gcrn, list[float]]:
    _require_labels(train_scenes)
    samples = [(s.adjacency_norm, repg_inputs(s), np.asarray(s.labels), None) for s in train_scenes]
    history = train_samples(gcrn.repg, samples, epochs, seed, gcrn.repg_state, batch_size)
    if epochs > 0:
        gcrn.pretrained = True
        gcrn.repg_pretrained = gcrn.repg.copy()
    return gcrn, history


def disagreement(gcrn: Gcrn, scenes: Sequence[SceneGraph]) -> float:
    """Fraction of nodes where RepG's argmax differs from ConG's argmax.

    ConG is fed RepG's argmax labels as its assumed neighbour labels.
    """
    differ = total = 0
    for scene in scenes:
        rep = repg_forward(gcrn, scene).argmax(axis=1)
        con = cong_forward(gcrn, scene, rep).argmax(axis=1)
        differ += int((rep != con).sum())
        total += len(scene)
    return differ / total if total else 0.0


Observer = Callable[[int, str, Gcrn], None]


def em_train(
    gcrn: Gcrn,
    train_scenes: Sequence[SceneGraph],
    max_iterations: int = 10,
    disagreement_threshold: float = 0.01,
    inner_epochs: int = 1,
    seed: int = 0,
    observer: Observer | None = None,
    batch_size: int = 1,
) -> tuple[Gcrn, EmHistory]:
    """Alternate ConG fitting on true labels and RepG fitting to ConG's labels.

    ``observer(iteration, phase, gcrn)`` is called with phase ``"start"``,
    ``"cong_updated"`` and ``"repg_updated"``.
    """
    if not gcrn.pretrained:
        raise StateError("RepG must be pretrained before EM")
    _require_labels(train_scenes)
    history = EmHistory()
    if max_iterations <= 0:
        return gcrn, history

    # ConG sees true neighbour labels, so its inputs are fixed across iterations.
    cong_samples = [
        (s.adjacency_norm, masked_cong_batch(s, s.labels, gcrn.num_classes), np.asarray(s.labels), _diag(len(s)))
        for s in train_scenes
    ]
    repg_x = [repg_inputs(s) for s in train_scenes]

    for it in range(1, max_iterations + 1):
        if observer:
            observer(it, "start", gcrn)
        cong_hist = train_samples(gcrn.cong, cong_samples, inner_epochs, seed + 2 * it, gcrn.cong_state, batch_size)
        if observer:
            observer(it, "cong_updated", gcrn)

        repg_samples = []
        for scene, x in zip(train_scenes, repg_x):
            rep = gcn_forward(gcrn.repg, scene.adjacency_norm, x).probs.argmax(axis=1)
            con = cong_forward(gcrn, scene, rep).argmax(axis=1)
            repg_samples.append((scene.adjacency_norm, x, con, None))
        repg_hist = train_samples(
            gcrn.repg, repg_samples, inner_epochs, seed + 2 * it + 1, gcrn.repg_state, batch_size
        )
        if observer:
            observer(it, "repg_updated", gcrn)

        d = disagreement(gcrn, train_scenes)
        history.records.append(
            EmRecord(it, repg_hist[-1] if repg_hist else 0.0, cong_hist[-1] if cong_hist else 0.0, d)
        )
        logger.info("EM iteration %d: disagreement %.4f", it, d)
        if d <= disagreement_threshold:
            history.converged = True
            break
    return gcrn, history


def predict(
    gcrn: Gcrn, scene: SceneGraph, label_source: LabelSource | str = LabelSource.GROUND_TRUTH
) -> Prediction:
    """RepG output plus the context-informed ConG output for every node."""
    source = LabelSource(label_source)
    repg_probs = repg_forward(gcrn, scene)
    if source is LabelSource.GROUND_TRUTH:
        if not scene.has_labels:
            raise ValidationError(f"scene {scene.scene_id!r} has no labels for ground_truth source")
        assumed = scene.labels
    else:
        assumed = repg_probs.argmax(axis=1)
    return Prediction(repg_probs, cong_forward(gcrn, scene, assumed))
