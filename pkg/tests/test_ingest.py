import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fuzzing
from oocgraph.detect import ContextFreeClassifier, train_context_free
from oocgraph.errors import (
    AnnotationValidationError,
    MappingError,
    ParseError,
    ReferentialIntegrityError,
    SchemaError,
    ValidationError,
)
from oocgraph.ingest import (
    attach_oracle_appearance,
    corrupt_labels,
    parse_coco_annotations,
    parse_native_dataset,
    scenes_to_coco,
)
from oocgraph.synth import GenConfig, Dataset, dumps_dataset, generate_dataset, generate_scene, stream


def coco(images, annotations, categories):
    return json.dumps({"images": images, "annotations": annotations, "categories": categories})


IMG = [{"id": 1, "width": 640, "height": 480}]
CATS = [{"id": 18, "name": "dog"}, {"id": 3, "name": "car"}]


def test_empty_annotations():
    res = parse_coco_annotations(coco(IMG, [], []))
    assert res.scenes == [] and res.remap == {} and res.skipped == 0


def test_single_box_conversion():
    res = parse_coco_annotations(coco(IMG, [{"image_id": 1, "bbox": [10, 20, 30, 40], "category_id": 18}], CATS))
    (scene,) = res.scenes
    assert scene.nodes[0].box.as_list() == [10, 20, 40, 60]
    assert res.remap == {3: 0, 18: 1}
    assert scene.nodes[0].label == 1 and scene.nodes[0].appearance is None
    assert (scene.image_w, scene.image_h, scene.scene_id) == (640, 480, "1")


@settings(max_examples=300)
@given(st.integers(0, 300), st.integers(0, 200), st.integers(1, 300), st.integers(1, 200))
def test_integer_box_conversion_is_exact(x, y, w, h):
    res = parse_coco_annotations(coco([{"id": 0, "width": 600, "height": 400}],
                                      [{"image_id": 0, "bbox": [x, y, w, h], "category_id": 3}], CATS))
    b = res.scenes[0].nodes[0].box
    assert b.xmax - b.xmin == w and b.ymax - b.ymin == h
    assert (b.xmin, b.ymin) == (x, y)


@settings(max_examples=300)
@given(st.floats(0, 100), st.floats(0, 100), st.floats(0.001, 100), st.floats(0.001, 100))
def test_float_box_conversion_matches_arithmetic(x, y, w, h):
    res = parse_coco_annotations(coco([{"id": 0, "width": 1000, "height": 1000}],
                                      [{"image_id": 0, "bbox": [x, y, w, h], "category_id": 3}], CATS))
    b = res.scenes[0].nodes[0].box
    assert (b.xmin, b.ymin, b.xmax, b.ymax) == (x, y, x + w, y + h)


def test_one_scene_per_annotated_image():
    imgs = IMG + [{"id": 2, "width": 10, "height": 10}, {"id": 3, "width": 10, "height": 10}]
    anns = [{"image_id": 3, "bbox": [0, 0, 1, 1], "category_id": 3}, {"image_id": 1, "bbox": [0, 0, 1, 1], "category_id": 3}]
    res = parse_coco_annotations(coco(imgs, anns, CATS))
    assert [s.scene_id for s in res.scenes] == ["1", "3"]


def test_dangling_references_name_the_id():
    with pytest.raises(ReferentialIntegrityError, match="image id 99") as e:
        parse_coco_annotations(coco(IMG, [{"image_id": 99, "bbox": [0, 0, 1, 1], "category_id": 3}], CATS))
    assert (e.value.kind, e.value.ref_id) == ("image", 99)
    with pytest.raises(ReferentialIntegrityError, match="category id 4") as e:
        parse_coco_annotations(coco(IMG, [{"image_id": 1, "bbox": [0, 0, 1, 1], "category_id": 4}], CATS))
    assert (e.value.kind, e.value.ref_id) == ("category", 4)


def test_zero_area_boxes_strict_and_lenient():
    anns = [
        {"image_id": 1, "bbox": [0, 0, 0, 5], "category_id": 3},
        {"image_id": 1, "bbox": [0, 0, 5, 5], "category_id": 3},
        {"image_id": 1, "bbox": [1, 1, 4, -1], "category_id": 18},
    ]
    with pytest.raises(AnnotationValidationError) as e:
        parse_coco_annotations(coco(IMG, anns, CATS))
    assert e.value.index == 0
    res = parse_coco_annotations(coco(IMG, anns, CATS), lenient=True)
    assert res.skipped == 2 and len(res.scenes[0]) == 1


def test_malformed_json_reports_byte_offset():
    with pytest.raises(ParseError) as e:
        parse_coco_annotations(b'{"images": [1,, 2]}')
    assert e.value.offset == 14
    with pytest.raises(ParseError) as e:
        parse_coco_annotations('{"é": [}'.encode())
    assert e.value.offset == len('{"é": ['.encode())
    with pytest.raises(ParseError):
        parse_coco_annotations(b"\xff\xfe")
    with pytest.raises(SchemaError):
        parse_coco_annotations(b"[]")


def test_native_round_trip(small_dataset):
    text = dumps_dataset(small_dataset)
    back = parse_native_dataset(text)
    assert len(back.train) == len(small_dataset.train) and len(back.test) == len(small_dataset.test)
    for a, b in zip(small_dataset.train + small_dataset.test, back.train + back.test):
        assert a.structurally_equal(b)
    assert back.manifest == small_dataset.manifest
    assert dumps_dataset(back) == text


def test_coco_round_trip(small_dataset):
    scenes = small_dataset.test[:20]
    res = parse_coco_annotations(json.dumps(scenes_to_coco(scenes, small_dataset.world.num_classes)))
    assert res.remap == {c: c for c in range(small_dataset.world.num_classes)}
    for a, b in zip(scenes, res.scenes):
        assert [n.label for n in a.nodes] == [n.label for n in b.nodes]
        for na, nb in zip(a.nodes, b.nodes):
            np.testing.assert_allclose(nb.box.as_list(), na.box.as_list(), rtol=0, atol=1e-15)


def test_native_without_world(small_dataset):
    ds = Dataset(None, small_dataset.train[:3], [], [])
    assert parse_native_dataset(dumps_dataset(ds)).world is None


def test_native_rejects_bad_documents(small_dataset):
    good = json.loads(dumps_dataset(small_dataset))
    for mutate in (
        lambda d: d.update(version=99),
        lambda d: d.pop("world"),
        lambda d: d["scenes"][0]["objects"][0].update(bbox=[0.5, 0.5, 0.1, 0.9]),
        lambda d: d["scenes"][0]["objects"][0].update(label=999),
        lambda d: d["scenes"][0].update(split="val"),
        lambda d: d["world"].update(groups=[[0]]),
    ):
        doc = json.loads(json.dumps(good))
        mutate(doc)
        with pytest.raises(SchemaError):
            parse_native_dataset(json.dumps(doc))


def test_attach_appearance(small_world):
    scenes = [generate_scene(small_world, stream(4, i)) for i in range(5)]
    clean = attach_oracle_appearance(scenes, small_world, stream(1), noise_scale=0.0)
    for s in clean:
        for n in s.nodes:
            assert np.array_equal(n.appearance, small_world.prototypes[n.label])
    a = attach_oracle_appearance(scenes, small_world, stream(2))
    b = attach_oracle_appearance(scenes, small_world, stream(2))
    assert all(x.structurally_equal(y) for x, y in zip(a, b))
    from dataclasses import replace

    bad = scenes[0].with_nodes([replace(scenes[0].nodes[0], label=small_world.num_classes)] + list(scenes[0].nodes[1:]))
    with pytest.raises(MappingError):
        attach_oracle_appearance([bad], small_world, stream(3))


def test_classifier_on_ingested_scenes(small_dataset, small_world):
    clf = ContextFreeClassifier.init(small_world.num_classes, small_world.appearance_dim, seed=0)
    train_context_free(clf, small_dataset.train, 5, seed=0)
    external = parse_coco_annotations(json.dumps(scenes_to_coco(small_dataset.test, small_world.num_classes))).scenes
    external = attach_oracle_appearance(external, small_world, stream(9))
    correct = total = 0
    for s in external:
        correct += int((clf.predict_scene(s).argmax(1) == np.array(s.labels)).sum())
        total += len(s)
    assert correct / total > 1.0 / small_world.num_classes + 0.3


def test_corrupt_labels_extremes(small_dataset):
    scenes = small_dataset.test[:30]
    same, manifest = corrupt_labels(scenes, 0.0, stream(0), 6)
    assert manifest == [] and all(a is b for a, b in zip(same, scenes))
    flipped, manifest = corrupt_labels(scenes, 1.0, stream(0), 6)
    for a, b in zip(scenes, flipped):
        assert all(x != y for x, y in zip(a.labels, b.labels))
        assert all(0 <= y < 6 for y in b.labels)
    assert len(manifest) == sum(len(s) for s in scenes)
    assert all(m["original"] != m["new"] for m in manifest)
    with pytest.raises(ValidationError):
        corrupt_labels(scenes, 1.2, stream(0), 6)


def test_corrupt_labels_rate(small_world):
    scenes = []
    rng = stream(21)
    while sum(len(s) for s in scenes) < 10_000:
        scenes.append(generate_scene(small_world, rng))
    total = sum(len(s) for s in scenes)
    for rate in (0.1, 0.5):
        out, manifest = corrupt_labels(scenes, rate, stream(22), small_world.num_classes)
        changed = sum(x != y for a, b in zip(scenes, out) for x, y in zip(a.labels, b.labels))
        assert changed == len(manifest)
        assert abs(changed / total - rate) <= 0.02
        # Replacement class is uniform over the other K-1 classes.
        offsets = np.bincount([(m["new"] - m["original"]) % small_world.num_classes for m in manifest], minlength=6)
        assert offsets[0] == 0 and offsets[1:].min() > 0.15 * len(manifest)


def test_fuzz_smoke():
    stats = fuzzing.run(5000, seed=1)
    assert stats["crashes"] == []
    assert stats["ok"] > 0 and stats["rejected"] > 0
