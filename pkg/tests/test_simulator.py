import json
import math
import re
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geograph.errors import SchemaError
from geograph.geometry import haversine_m
from geograph.geoloc import project_detection
from geograph.simulator import (
    SimConfig,
    generate_corpus,
    generate_scene,
    read_scenes,
    record_to_scene,
    scene_rng,
    scene_to_record,
    scenes_equal,
    write_scenes,
)


def test_same_seed_same_scene():
    a = generate_corpus(SimConfig(seed=3, n_scenes=5))
    b = generate_corpus(SimConfig(seed=3, n_scenes=5))
    assert scenes_equal(a, b)
    assert not scenes_equal(a, generate_corpus(SimConfig(seed=4, n_scenes=5)))


def test_scenes_are_independent_of_corpus_size():
    small = generate_corpus(SimConfig(seed=3, n_scenes=2))
    large = generate_corpus(SimConfig(seed=3, n_scenes=6))
    assert scenes_equal(small, large[:2])
    alone = generate_scene(SimConfig(seed=3), scene_rng(3, 4), scene_id=4)
    assert scenes_equal([alone], [large[4]])


def test_noise_free_closure():
    for scene in generate_corpus(SimConfig(seed=8, n_scenes=20).noise_free()):
        by_object = {}
        for d in scene.detections:
            assert d.gt_object_id is not None
            assert haversine_m(project_detection(d), scene.truth[d.gt_object_id]) < 0.01
            by_object.setdefault(d.gt_object_id, []).append(d.feature)
        for feats in by_object.values():
            assert all(np.array_equal(f, feats[0]) for f in feats)
        assert len(scene.detections) == len(scene.objects) * 4


def test_mean_detections_per_object():
    cfg = SimConfig(seed=0, n_scenes=100)
    counts = []
    for scene in generate_corpus(cfg):
        for obj in scene.objects:
            counts.append(sum(d.gt_object_id == obj.object_id for d in scene.detections))
    p = 1 - cfg.missed_detection_rate
    expected = cfg.views_per_scene * p
    se = math.sqrt(cfg.views_per_scene * p * (1 - p) / len(counts))
    assert abs(np.mean(counts) - expected) < 3 * se


def test_false_positive_rate():
    cfg = SimConfig(seed=1, n_scenes=200)
    fp = objects = 0
    for scene in generate_corpus(cfg):
        fp += sum(d.gt_object_id is None for d in scene.detections)
        objects += len(scene.objects) * cfg.views_per_scene
    rate = fp / objects
    se = math.sqrt(cfg.false_positive_rate * (1 - cfg.false_positive_rate) / objects)
    assert abs(rate - cfg.false_positive_rate) < 3 * se


def test_scene_invariants():
    cfg = SimConfig(seed=2, n_scenes=30)
    for scene in generate_corpus(cfg):
        lo, hi = cfg.objects_per_scene_range
        assert lo <= len(scene.objects) <= hi
        assert len(scene.cameras) == len(scene.true_cameras) == cfg.views_per_scene
        for d in scene.detections:
            assert 0 <= d.bbox.x_min < d.bbox.x_max <= cfg.image_w
            assert d.bbox.y_max > cfg.image_h / 2
            assert d.camera is scene.cameras[d.view_id]
            assert np.linalg.norm(d.feature) == pytest.approx(1.0)
            assert 0 <= d.score <= 1


def test_reported_cameras_are_perturbed():
    scene = generate_corpus(SimConfig(seed=2, n_scenes=1, pose_noise_sigma_m=1.0))[0]
    gaps = [haversine_m(a.position, b.position) for a, b in zip(scene.cameras, scene.true_cameras)]
    assert all(g > 0 for g in gaps) and max(gaps) < 10


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(feature_noise_sigma=-1)
    with pytest.raises(ValueError):
        SimConfig(missed_detection_rate=1.0)
    with pytest.raises(ValueError):
        SimConfig(objects_per_scene_range=(3, 2))
    with pytest.raises(ValueError):
        SimConfig(n_scenes=-1)


def test_round_trip(tmp_path):
    scenes = generate_corpus(SimConfig(seed=5, n_scenes=20))
    path = tmp_path / "c.jsonl"
    write_scenes(scenes, path, {"seed": 5})
    back = read_scenes(path)
    assert scenes_equal(scenes, back)
    for a, b in zip(scenes, back):
        for da, db in zip(a.detections, b.detections):
            assert da.camera == db.camera
            assert np.array_equal(da.feature, db.feature)
            assert da.bbox == db.bbox
        assert a.truth == b.truth


def test_empty_corpus_round_trip(tmp_path):
    path = tmp_path / "e.jsonl"
    write_scenes([], path)
    assert path.read_text() == "" and read_scenes(path) == []


def test_large_round_trip_is_fast(tmp_path):
    scenes = generate_corpus(SimConfig(seed=6, n_scenes=1000))
    path = tmp_path / "big.jsonl"
    start = time.perf_counter()
    write_scenes(scenes, path)
    back = read_scenes(path)
    assert time.perf_counter() - start < 5.0
    assert len(back) == 1000


def corrupt(tmp_path, mutate):
    rec = scene_to_record(generate_corpus(SimConfig(seed=1, n_scenes=1))[0])
    mutate(rec)
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    return path


@pytest.mark.parametrize("mutate, field", [
    (lambda r: r.pop("scene_id"), "scene_id"),
    (lambda r: r["detections"][0].pop("bbox"), "detections[0].bbox"),
    (lambda r: r["detections"][1].pop("gt_object_id"), "detections[1].gt_object_id"),
    (lambda r: r["cameras"][0].pop("heading_deg"), "cameras[0].heading_deg"),
    (lambda r: r["objects"][0].update(lat_deg="north"), "objects[0].lat_deg"),
    (lambda r: r["detections"][0].update(view=99), "detections[0].view"),
    (lambda r: r["detections"][0].update(score=1.5), "detections[0].score"),
    (lambda r: r.update(version="other/9"), "version"),
])
def test_schema_errors_name_the_field(tmp_path, mutate, field):
    with pytest.raises(SchemaError, match=re.escape(f"line 1: field '{field}'")):
        read_scenes(corrupt(tmp_path, mutate))


def test_invalid_json_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(SchemaError, match="line 1"):
        read_scenes(path)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.floats(0, 1))
def test_generation_never_fails(seed, views, noise):
    cfg = SimConfig(seed=seed, n_scenes=1, views_per_scene=views, feature_noise_sigma=noise)
    scene = generate_corpus(cfg)[0]
    assert len(scene.cameras) == views
    assert scenes_equal([scene], [record_round_trip(scene)])


def record_round_trip(scene):
    return record_to_scene(json.loads(json.dumps(scene_to_record(scene))))
