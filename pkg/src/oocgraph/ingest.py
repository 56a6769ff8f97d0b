"""Annotation file parsers and detector-degradation emulation.

Two input formats are understood:

* a COCO-style subset: ``images``, ``annotations`` (``bbox`` as
  ``[x, y, w, h]``) and ``categories``; everything else is ignored;
* the package's native dataset JSON written by :mod:`oocgraph.synth`.

Every malformed input raises a subclass of :class:`~oocgraph.errors.IngestError`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Any, Sequence

import numpy as np

from .errors import (
    AnnotationValidationError,
    IngestError,
    MappingError,
    ParseError,
    ReferentialIntegrityError,
    SchemaError,
    ValidationError,
)
from .scene import BoundingBox, ObjectNode, SceneGraph, Violation, build_scene_graph
from .synth import FORMAT_VERSION, Dataset, WorldModel


def _load_json(data: bytes | str) -> Any:
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"invalid UTF-8: {exc.reason}", exc.start) from None
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        # Positions are character indices; report bytes of the UTF-8 encoding.
        offset = len(data[: exc.pos].encode("utf-8", "surrogatepass"))
        raise ParseError(exc.msg, offset) from None
    except RecursionError:
        raise ParseError("nesting too deep", 0) from None


def _require(obj: Any, key: str, kind: type | tuple, where: str) -> Any:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise SchemaError(f"{where}: missing key {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise SchemaError(f"{where}.{key}: unexpected type {type(value).__name__}")
    return value


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}: expected a number, got {type(value).__name__}")
    try:
        out = float(value)
    except OverflowError:
        raise SchemaError(f"{where}: number out of range") from None
    if not math.isfinite(out):
        raise SchemaError(f"{where}: non-finite number")
    return out


def _ident(value: Any, where: str) -> int | str:
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise SchemaError(f"{where}: id must be an integer or string")
    return value


@dataclass
class CocoParseResult:
    scenes: list[SceneGraph]
    remap: dict[int | str, int]  # category id -> dense class index
    skipped: int = 0


def parse_coco_annotations(data: bytes | str, lenient: bool = False) -> CocoParseResult:
    """One labelled scene per image with at least one annotation.

    Category ids are remapped to ``0..K-1`` in ascending id order over the
    declared categories. With ``lenient`` set, annotations with invalid boxes
    are skipped and counted instead of raising.
    """
    doc = _load_json(data)
    images = _require(doc, "images", list, "root")
    annotations = _require(doc, "annotations", list, "root")
    categories = _require(doc, "categories", list, "root")

    sizes: dict[int | str, tuple[float, float]] = {}
    for k, img in enumerate(images):
        where = f"images[{k}]"
        iid = _ident(_require(img, "id", (int, str), where), where + ".id")
        w = _number(img.get("width"), where + ".width")
        h = _number(img.get("height"), where + ".height")
        if w <= 0 or h <= 0:
            raise SchemaError(f"{where}: image size must be positive")
        if iid in sizes:
            raise SchemaError(f"{where}: duplicate image id {iid!r}")
        sizes[iid] = (w, h)

    cat_ids: list = []
    seen = set()
    for k, cat in enumerate(categories):
        where = f"categories[{k}]"
        cid = _ident(_require(cat, "id", (int, str), where), where + ".id")
        if cid in seen:
            raise SchemaError(f"{where}: duplicate category id {cid!r}")
        seen.add(cid)
        cat_ids.append(cid)
    try:
        ordered = sorted(cat_ids)
    except TypeError:
        raise SchemaError("category ids mix integers and strings") from None
    remap = {cid: i for i, cid in enumerate(ordered)}

    per_image: dict[int | str, list[ObjectNode]] = {}
    skipped = 0
    for k, ann in enumerate(annotations):
        where = f"annotations[{k}]"
        iid = _ident(_require(ann, "image_id", (int, str), where), where + ".image_id")
        cid = _ident(_require(ann, "category_id", (int, str), where), where + ".category_id")
        bbox = _require(ann, "bbox", list, where)
        if iid not in sizes:
            raise ReferentialIntegrityError("image", iid)
        if cid not in remap:
            raise ReferentialIntegrityError("category", cid)
        if len(bbox) != 4:
            raise SchemaError(f"{where}.bbox: expected 4 numbers, got {len(bbox)}")
        x, y, w, h = (_number(v, f"{where}.bbox[{j}]") for j, v in enumerate(bbox))
        width, height = sizes[iid]
        problem = None
        if w <= 0 or h <= 0:
            problem = f"non-positive box size w={w} h={h}"
        elif x < 0 or y < 0 or x + w > width or y + h > height:
            problem = f"box {[x, y, w, h]} outside {width}x{height} image"
        if problem:
            if lenient:
                skipped += 1
                continue
            raise AnnotationValidationError(problem, k)
        try:
            box = BoundingBox(x, y, x + w, y + h)
        except ValidationError as exc:
            # x + w can round back onto x for extreme magnitudes.
            if lenient:
                skipped += 1
                continue
            raise AnnotationValidationError(str(exc), k) from None
        per_image.setdefault(iid, []).append(ObjectNode(box, remap[cid]))

    scenes = [
        build_scene_graph(per_image[iid], *sizes[iid], scene_id=str(iid))
        for iid in sizes
        if iid in per_image
    ]
    return CocoParseResult(scenes, remap, skipped)


def scenes_to_coco(scenes: Sequence[SceneGraph], num_classes: int) -> dict:
    """COCO-style annotation dict for labelled scenes (inverse of the parser)."""
    images, annotations = [], []
    for k, scene in enumerate(scenes):
        images.append({"id": k, "width": scene.image_w, "height": scene.image_h, "file_name": scene.scene_id})
        for node in scene.nodes:
            b = node.box
            annotations.append(
                {"image_id": k, "category_id": node.label, "bbox": [b.xmin, b.ymin, b.width, b.height]}
            )
    categories = [{"id": c, "name": f"class_{c}"} for c in range(num_classes)]
    return {"images": images, "annotations": annotations, "categories": categories}


def _parse_native_scene(d: Any, where: str) -> tuple[SceneGraph, str]:
    sid = _require(d, "id", str, where)
    width = _number(d.get("width"), where + ".width")
    height = _number(d.get("height"), where + ".height")
    objects = _require(d, "objects", list, where)
    nodes = []
    for j, obj in enumerate(objects):
        w = f"{where}.objects[{j}]"
        bbox = _require(obj, "bbox", list, w)
        if len(bbox) != 4:
            raise SchemaError(f"{w}.bbox: expected 4 numbers")
        coords = [_number(v, f"{w}.bbox") for v in bbox]
        label = obj.get("label")
        if label is not None and (isinstance(label, bool) or not isinstance(label, int) or label < 0):
            raise SchemaError(f"{w}.label: expected a non-negative integer or null")
        app = obj.get("appearance")
        if app is not None:
            if not isinstance(app, list):
                raise SchemaError(f"{w}.appearance: expected a list")
            app = np.array([_number(v, f"{w}.appearance") for v in app])
        is_ooc = obj.get("is_ooc", False)
        if not isinstance(is_ooc, bool):
            raise SchemaError(f"{w}.is_ooc: expected a boolean")
        try:
            violation = Violation(obj.get("violation", "none"))
            nodes.append(ObjectNode(BoundingBox(*coords), label, app, is_ooc, violation))
        except ValueError as exc:
            raise SchemaError(f"{w}: {exc}") from None
    split = d.get("split", "test")
    if split not in ("train", "test"):
        raise SchemaError(f"{where}.split: expected 'train' or 'test'")
    try:
        return build_scene_graph(nodes, width, height, scene_id=sid), split
    except ValidationError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def parse_native_dataset(data: bytes | str) -> Dataset:
    doc = _load_json(data)
    version = _require(doc, "version", int, "root")
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported dataset version {version}")
    if not isinstance(doc, dict) or "world" not in doc:
        raise SchemaError("root: missing key 'world'")
    world = None
    if doc["world"] is not None:
        try:
            world = WorldModel.from_dict(_require(doc, "world", dict, "root"))
        except (KeyError, TypeError, ValueError, IndexError, OverflowError) as exc:
            if isinstance(exc, IngestError):
                raise
            raise SchemaError(f"world: {exc}") from None
    train, test = [], []
    for k, sd in enumerate(_require(doc, "scenes", list, "root")):
        scene, split = _parse_native_scene(sd, f"scenes[{k}]")
        for node in scene.nodes:
            if world is not None and node.label is not None and node.label >= world.num_classes:
                raise SchemaError(f"scenes[{k}]: label {node.label} outside world vocabulary")
        (train if split == "train" else test).append(scene)
    manifest = doc.get("manifest", [])
    if not isinstance(manifest, list):
        raise SchemaError("manifest: expected a list")
    return Dataset(world, train, test, manifest)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return parse_native_dataset(fh.read())


def attach_oracle_appearance(
    scenes: Sequence[SceneGraph],
    world: WorldModel,
    rng: np.random.Generator,
    noise_scale: float | None = None,
) -> list[SceneGraph]:
    """Give every node the world prototype of its label plus Gaussian noise."""
    sigma = world.noise_scale if noise_scale is None else noise_scale
    out = []
    for scene in scenes:
        nodes = []
        for node in scene.nodes:
            if node.label is None or not 0 <= node.label < world.num_classes:
                raise MappingError(f"scene {scene.scene_id!r}: label {node.label} not in world vocabulary")
            app = world.prototypes[node.label] + sigma * rng.standard_normal(world.appearance_dim)
            nodes.append(replace(node, appearance=app))
        out.append(scene.with_nodes(nodes))
    return out


def corrupt_labels(
    scenes: Sequence[SceneGraph], flip_rate: float, rng: np.random.Generator, num_classes: int
) -> tuple[list[SceneGraph], list[dict]]:
    """Independently replace each label, with probability ``flip_rate``, by a different class.

    Input scenes are left untouched; the manifest records every flip with
    its original label.
    """
    if not 0.0 <= flip_rate <= 1.0:
        raise ValidationError(f"flip_rate {flip_rate} outside [0, 1]")
    if num_classes < 2 and flip_rate > 0:
        raise ValidationError("cannot flip labels with fewer than two classes")
    out, manifest = [], []
    for scene in scenes:
        nodes = list(scene.nodes)
        flipped = False
        for i, node in enumerate(nodes):
            if node.label is None:
                raise ValidationError(f"scene {scene.scene_id!r} node {i} is unlabeled")
            if rng.random() < flip_rate:
                new = (node.label + int(rng.integers(1, num_classes))) % num_classes
                manifest.append({"scene_id": scene.scene_id, "node_index": i, "original": node.label, "new": new})
                nodes[i] = replace(node, label=new)
                flipped = True
        out.append(scene.with_nodes(nodes) if flipped else scene)
    return out, manifest

