"""Synthetic in-context scenes and injected out-of-context violations.

Randomness
----------
All sampling uses numpy's PCG64 bit generator. Every scene gets its own
stream seeded by ``SeedSequence([seed, split, index])`` (split 0 = train,
1 = test) and the choice of which test scenes receive a violation uses the
stream ``SeedSequence([seed, 2])``. A dataset is therefore a pure function
of ``(world, config)`` and scenes can be generated in any order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import UnsupportedError, ValidationError
from .scene import BoundingBox, ObjectNode, SceneGraph, Violation, build_scene_graph

SIZE_AREA_RANGE = (0.005, 0.2)
MAX_COSINE = 0.99
TRAIN, TEST, SELECTION = 0, 1, 2


def stream(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


@dataclass
class WorldModel:
    num_classes: int
    groups: list[list[int]]
    size_mean: np.ndarray  # per-class mean box area as a fraction of the image
    size_spread: np.ndarray  # per-class std-dev of log-area
    prototypes: np.ndarray  # (num_classes, appearance_dim), unit rows
    noise_scale: float
    scene_size_range: tuple[int, int] = (3, 8)

    @property
    def appearance_dim(self) -> int:
        return self.prototypes.shape[1]

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def group_of(self, label: int) -> int:
        for g, members in enumerate(self.groups):
            if label in members:
                return g
        raise ValidationError(f"label {label} not in any group")

    def sample_appearance(self, label: int, rng: np.random.Generator) -> np.ndarray:
        return self.prototypes[label] + self.noise_scale * rng.standard_normal(self.appearance_dim)

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "groups": [list(map(int, g)) for g in self.groups],
            "size_mean": self.size_mean.tolist(),
            "size_spread": self.size_spread.tolist(),
            "prototypes": self.prototypes.tolist(),
            "noise_scale": self.noise_scale,
            "scene_size_range": list(self.scene_size_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldModel":
        world = cls(
            int(d["num_classes"]),
            [[int(c) for c in g] for g in d["groups"]],
            np.asarray(d["size_mean"], dtype=np.float64),
            np.asarray(d["size_spread"], dtype=np.float64),
            np.asarray(d["prototypes"], dtype=np.float64),
            float(d["noise_scale"]),
            tuple(int(v) for v in d["scene_size_range"]),
        )
        world.validate()
        return world

    def validate(self) -> None:
        flat = sorted(c for g in self.groups for c in g)
        if flat != list(range(self.num_classes)):
            raise ValidationError("groups must partition the class range exactly")
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] != self.num_classes or self.size_mean.shape != (self.num_classes,):
            raise ValidationError("per-class arrays do not match num_classes")
        if self.size_spread.shape != (self.num_classes,):
            raise ValidationError("size_spread does not match num_classes")
        if not (np.all(np.isfinite(self.prototypes)) and np.all(np.isfinite(self.size_spread))):
            raise ValidationError("world arrays must be finite")
        if not np.all((self.size_mean > 0) & (self.size_mean < 1)):
            raise ValidationError("size means must lie in (0, 1)")
        lo, hi = self.scene_size_range
        if not 1 <= lo <= hi:
            raise ValidationError(f"bad scene_size_range {self.scene_size_range}")


def generate_world(
    num_classes: int,
    num_groups: int,
    appearance_dim: int,
    seed: int,
    noise_scale: float = 0.15,
    scene_size_range: tuple[int, int] = (3, 8),
    size_spread: float = 0.1,
) -> WorldModel:
    if not num_classes >= num_groups >= 2:
        raise ValidationError(f"need num_classes >= num_groups >= 2, got {num_classes}, {num_groups}")
    if appearance_dim < 2:
        raise ValidationError("appearance_dim must be at least 2")
    rng = stream(seed)
    perm = rng.permutation(num_classes)
    groups = [sorted(int(c) for c in chunk) for chunk in np.array_split(perm, num_groups)]
    # Log-area strata per group keep classes of one context separable by size.
    lo, hi = np.log(SIZE_AREA_RANGE)
    log_mean = np.empty(num_classes)
    for members in groups:
        k = len(members)
        width = (hi - lo) / k
        slots = rng.permutation(k)
        jitter = rng.uniform(-0.25 * width, 0.25 * width, k)
        log_mean[members] = lo + (slots + 0.5) * width + jitter
    size_mean = np.exp(log_mean)
    spread = np.full(num_classes, float(size_spread))

    protos = np.empty((num_classes, appearance_dim))
    for c in range(num_classes):
        while True:
            v = rng.standard_normal(appearance_dim)
            v /= np.linalg.norm(v)
            if c == 0 or np.max(protos[:c] @ v) < MAX_COSINE:
                protos[c] = v
                break
    world = WorldModel(num_classes, groups, size_mean, spread, protos, float(noise_scale), tuple(scene_size_range))
    world.validate()
    return world


def sample_box(world: WorldModel, label: int, rng: np.random.Generator) -> BoundingBox:
    """Box in the unit square with area within [mean/3, mean*3] of the class."""
    z = np.clip(world.size_spread[label] * rng.standard_normal(), -math.log(3), math.log(3))
    area = float(world.size_mean[label] * math.exp(z))
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    aspect = min(max(aspect, area), 1.0 / area)
    w = min(math.sqrt(area * aspect), 1.0)
    h = min(area / w, 1.0)
    x0 = float(rng.uniform(0.0, 1.0 - w))
    y0 = float(rng.uniform(0.0, 1.0 - h))
    return BoundingBox(x0, y0, min(x0 + w, 1.0), min(y0 + h, 1.0))


def generate_scene(world: WorldModel, rng: np.random.Generator, scene_id: str = "") -> SceneGraph:
    group = world.groups[int(rng.integers(world.num_groups))]
    lo, hi = world.scene_size_range
    n = int(rng.integers(lo, hi + 1))
    nodes = []
    for _ in range(n):
        label = int(group[int(rng.integers(len(group)))])
        box = sample_box(world, label, rng)
        nodes.append(ObjectNode(box, label, world.sample_appearance(label, rng)))
    return build_scene_graph(nodes, 1.0, 1.0, scene_id=scene_id)


def _majority_group(scene: SceneGraph, world: WorldModel) -> int:
    counts = np.bincount([world.group_of(n.label) for n in scene.nodes], minlength=world.num_groups)
    return int(np.argmax(counts))


def inject_cooccurrence_ooc(
    scene: SceneGraph, world: WorldModel, rng: np.random.Generator
) -> tuple[SceneGraph, dict]:
    """Swap one node's class for a class of another group; box kept."""
    if world.num_groups < 2:
        raise UnsupportedError("co-occurrence violations need at least two groups")
    home = _majority_group(scene, world)
    i = int(rng.integers(len(scene)))
    others = [g for g in range(world.num_groups) if g != home]
    group = world.groups[others[int(rng.integers(len(others)))]]
    new_label = int(group[int(rng.integers(len(group)))])
    old = scene.nodes[i]
    new = replace(
        old,
        label=new_label,
        appearance=world.sample_appearance(new_label, rng),
        is_ooc_truth=True,
        violation=Violation.COOCCURRENCE,
    )
    nodes = list(scene.nodes)
    nodes[i] = new
    info = {"scene_id": scene.scene_id, "node_index": i, "kind": Violation.COOCCURRENCE.value,
            "parameters": {"original_label": old.label, "new_label": new_label}}
    return scene.with_nodes(nodes), info


def scale_box(box: BoundingBox, factor: float, image_w: float = 1.0, image_h: float = 1.0) -> BoundingBox:
    cx, cy = box.center
    hw, hh = box.width * factor / 2, box.height * factor / 2
    return BoundingBox(max(cx - hw, 0.0), max(cy - hh, 0.0), min(cx + hw, image_w), min(cy + hh, image_h))


def inject_size_ooc(
    scene: SceneGraph,
    world: WorldModel,
    rng: np.random.Generator,
    scale_range: tuple[float, float] = (2.0, 5.0),
) -> tuple[SceneGraph, dict]:
    """Scale one node's box about its centre by U[2, 5], clipped to the image."""
    i = int(rng.integers(len(scene)))
    factor = float(rng.uniform(*scale_range))
    old = scene.nodes[i]
    new = replace(
        old,
        box=scale_box(old.box, factor, scene.image_w, scene.image_h),
        is_ooc_truth=True,
        violation=Violation.SIZE,
    )
    nodes = list(scene.nodes)
    nodes[i] = new
    info = {"scene_id": scene.scene_id, "node_index": i, "kind": Violation.SIZE.value,
            "parameters": {"scale": factor}}
    return scene.with_nodes(nodes), info


@dataclass
class GenConfig:
    seed: int = 0
    num_train_scenes: int = 2000
    num_test_scenes: int = 500
    ooc_fraction: float = 0.5
    violation_mix: dict[str, float] = field(
        default_factory=lambda: {"cooccurrence": 0.68, "size": 0.32}
    )
    size_scale_range: tuple[float, float] = (2.0, 5.0)

    def validate(self) -> None:
        if not 0.0 <= self.ooc_fraction <= 1.0:
            raise ValidationError(f"ooc_fraction {self.ooc_fraction} outside [0, 1]")
        if set(self.violation_mix) - {"cooccurrence", "size"}:
            raise ValidationError(f"unknown violation kinds {sorted(self.violation_mix)}")
        weights = list(self.violation_mix.values())
        if any(w < 0 for w in weights) or not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
            raise ValidationError(f"violation weights must be >= 0 and sum to 1: {self.violation_mix}")
        lo, hi = self.size_scale_range
        if not 1.0 < lo <= hi:
            raise ValidationError(f"bad size_scale_range {self.size_scale_range}")
        if self.num_train_scenes < 0 or self.num_test_scenes < 0:
            raise ValidationError("scene counts must be >= 0")


@dataclass
class Dataset:
    world: WorldModel | None
    train: list[SceneGraph]
    test: list[SceneGraph]
    manifest: list[dict] = field(default_factory=list)


def generate_dataset(world: WorldModel, config: GenConfig) -> Dataset:
    config.validate()
    train = [
        generate_scene(world, stream(config.seed, TRAIN, i), f"train-{i:05d}")
        for i in range(config.num_train_scenes)
    ]
    n_ooc = int(round(config.ooc_fraction * config.num_test_scenes))
    chosen = set(stream(config.seed, SELECTION).permutation(config.num_test_scenes)[:n_ooc].tolist())
    p_cooc = config.violation_mix.get("cooccurrence", 0.0)
    test, manifest = [], []
    for i in range(config.num_test_scenes):
        rng = stream(config.seed, TEST, i)
        scene = generate_scene(world, rng, f"test-{i:05d}")
        if i in chosen:
            if rng.random() < p_cooc:
                scene, info = inject_cooccurrence_ooc(scene, world, rng)
            else:
                scene, info = inject_size_ooc(scene, world, rng, config.size_scale_range)
            manifest.append(info)
        test.append(scene)
    return Dataset(world, train, test, manifest)


def context_violations(scenes: Sequence[SceneGraph], world: WorldModel) -> list[str]:
    """Ids of scenes whose non-co-occurrence nodes mix classes from several groups.

    Also flags scenes whose OOC flags and violation kinds are inconsistent.
    """
    bad = []
    for scene in scenes:
        groups = {
            world.group_of(n.label) for n in scene.nodes
            if n.label is not None and n.violation is not Violation.COOCCURRENCE
        }
        flags_ok = all((n.violation is not Violation.NONE) == n.is_ooc_truth for n in scene.nodes)
        if len(groups) > 1 or not flags_ok:
            bad.append(scene.scene_id)
    return bad


# -- native file format -----------------------------------------------------

FORMAT_VERSION = 1


def scene_to_dict(scene: SceneGraph, split: str | None = None) -> dict:
    d = {
        "id": scene.scene_id,
        "width": scene.image_w,
        "height": scene.image_h,
        "objects": [
            {
                "bbox": n.box.as_list(),
                "label": n.label,
                "appearance": None if n.appearance is None else np.asarray(n.appearance).tolist(),
                "is_ooc": n.is_ooc_truth,
                "violation": Violation(n.violation).value,
            }
            for n in scene.nodes
        ],
    }
    if split is not None:
        d["split"] = split
    return d


def dataset_to_dict(dataset: Dataset) -> dict:
    return {
        "version": FORMAT_VERSION,
        "world": None if dataset.world is None else dataset.world.to_dict(),
        "scenes": [scene_to_dict(s, "train") for s in dataset.train] + [scene_to_dict(s, "test") for s in dataset.test],
        "manifest": dataset.manifest,
    }


def dumps_dataset(dataset: Dataset) -> str:
    return json.dumps(dataset_to_dict(dataset), separators=(",", ":"))


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_dataset(dataset))
