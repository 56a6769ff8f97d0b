"""Per-image object graphs and the node feature constructors."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptySceneError, LabelIndexError, ValidationError

SPATIAL_DIM = 7
GEOMETRY_DIM = 4 + SPATIAL_DIM


class Violation(str, enum.Enum):
    NONE = "none"
    COOCCURRENCE = "cooccurrence"
    SIZE = "size"


class EdgePolicy(str, enum.Enum):
    FULLY_CONNECTED = "fully_connected"


@dataclass(frozen=True)
class BoundingBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        coords = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(c) for c in coords):
            raise ValidationError(f"non-finite box {coords}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValidationError(f"degenerate box {coords}")
        if self.xmin < 0 or self.ymin < 0:
            raise ValidationError(f"negative box coordinate {coords}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]

    def fits(self, image_w: float, image_h: float) -> bool:
        return self.xmax <= image_w and self.ymax <= image_h


@dataclass(frozen=True)
class ObjectNode:
    box: BoundingBox
    label: int | None = None
    appearance: np.ndarray | None = None
    is_ooc_truth: bool = False
    violation: Violation = Violation.NONE

    def __eq__(self, other):
        if not isinstance(other, ObjectNode):
            return NotImplemented
        same_app = (self.appearance is None and other.appearance is None) or (
            self.appearance is not None
            and other.appearance is not None
            and np.array_equal(self.appearance, other.appearance)
        )
        return (
            self.box == other.box
            and self.label == other.label
            and same_app
            and self.is_ooc_truth == other.is_ooc_truth
            and self.violation == other.violation
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SceneGraph:
    nodes: tuple[ObjectNode, ...]
    image_w: float
    image_h: float
    adjacency_norm: np.ndarray = field(repr=False)
    edge_policy: EdgePolicy = EdgePolicy.FULLY_CONNECTED
    scene_id: str = ""

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def labels(self) -> list[int]:
        missing = [i for i, n in enumerate(self.nodes) if n.label is None]
        if missing:
            raise ValidationError(f"scene {self.scene_id!r}: nodes {missing} are unlabeled")
        return [n.label for n in self.nodes]

    @property
    def has_labels(self) -> bool:
        return all(n.label is not None for n in self.nodes)

    def with_nodes(self, nodes: Sequence[ObjectNode]) -> "SceneGraph":
        """Same image and edge policy, new node list (adjacency rebuilt)."""
        return build_scene_graph(nodes, self.image_w, self.image_h, self.edge_policy, self.scene_id)

    def structurally_equal(self, other: "SceneGraph") -> bool:
        return (
            self.scene_id == other.scene_id
            and self.image_w == other.image_w
            and self.image_h == other.image_h
            and self.nodes == other.nodes
            and np.array_equal(self.adjacency_norm, other.adjacency_norm)
        )


def normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 for a symmetric 0/1 adjacency without self-loops."""
    a_hat = adjacency + np.eye(adjacency.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


def build_scene_graph(
    objects: Sequence[ObjectNode],
    image_w: float,
    image_h: float,
    edge_policy: EdgePolicy | str = EdgePolicy.FULLY_CONNECTED,
    scene_id: str = "",
) -> SceneGraph:
    objects = tuple(objects)
    if not objects:
        raise EmptySceneError(f"scene {scene_id!r} has no objects")
    _check_image(image_w, image_h)
    for i, node in enumerate(objects):
        if not node.box.fits(image_w, image_h):
            raise ValidationError(
                f"scene {scene_id!r} node {i}: box {node.box.as_list()} outside "
                f"{image_w}x{image_h} image"
            )
    policy = EdgePolicy(edge_policy)
    n = len(objects)
    if policy is EdgePolicy.FULLY_CONNECTED:
        adjacency = np.ones((n, n)) - np.eye(n)
    return SceneGraph(objects, float(image_w), float(image_h), normalized_adjacency(adjacency), policy, scene_id)


def _check_image(image_w: float, image_h: float) -> None:
    if not (image_w > 0 and image_h > 0) or not (math.isfinite(image_w) and math.isfinite(image_h)):
        raise ValidationError(f"invalid image size {image_w}x{image_h}")


def spatial_features(box: BoundingBox, image_w: float, image_h: float) -> np.ndarray:
    """[w/W, h/H, a/A, xmin/W, ymin/H, xmax/W, ymax/H]."""
    _check_image(image_w, image_h)
    return np.array(
        [
            box.width / image_w,
            box.height / image_h,
            box.area / (image_w * image_h),
            box.xmin / image_w,
            box.ymin / image_h,
            box.xmax / image_w,
            box.ymax / image_h,
        ]
    )


def geometry_features(box: BoundingBox, image_w: float, image_h: float) -> np.ndarray:
    """Raw (xmin, ymin, xmax, ymax) followed by the 7-D spatial vector."""
    return np.concatenate([box.as_list(), spatial_features(box, image_w, image_h)])


def node_input_repg(node: ObjectNode, image_w: float, image_h: float) -> np.ndarray:
    if node.appearance is None:
        raise ValidationError("node has no appearance vector")
    return np.concatenate([np.asarray(node.appearance, dtype=np.float64), geometry_features(node.box, image_w, image_h)])


def node_input_cong(
    node: ObjectNode, assumed_label: int, num_classes: int, image_w: float, image_h: float
) -> np.ndarray:
    if not 0 <= assumed_label < num_classes:
        raise LabelIndexError(f"label {assumed_label} outside [0, {num_classes})")
    onehot = np.zeros(num_classes)
    onehot[assumed_label] = 1.0
    return np.concatenate([onehot, geometry_features(node.box, image_w, image_h)])


def repg_inputs(scene: SceneGraph) -> np.ndarray:
    """Stacked RepG inputs for every node of ``scene``."""
    return np.stack([node_input_repg(n, scene.image_w, scene.image_h) for n in scene.nodes])


def cong_inputs(scene: SceneGraph, assumed_labels: Sequence[int], num_classes: int) -> np.ndarray:
    if len(assumed_labels) != len(scene):
        raise ValidationError(f"{len(assumed_labels)} assumed labels for {len(scene)} nodes")
    return np.stack(
        [
            node_input_cong(n, int(y), num_classes, scene.image_w, scene.image_h)
            for n, y in zip(scene.nodes, assumed_labels)
        ]
    )
