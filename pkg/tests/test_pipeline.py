import json

import numpy as np
import pytest

from conftest import make_detection
from geograph.checkpoint import load_checkpoint, save_checkpoint
from geograph.errors import SchemaError
from geograph.geoloc import init_refine_net
from geograph.gnn import EdgeScorer, GnnModel, GraphConvLayer, TrainConfig, init_model
from geograph.graph import POSE_BLOCK_DIM
from geograph.optim import Adam
from geograph.pipeline import (
    GraphOptions,
    InferenceOptions,
    evaluate_results,
    infer_scene,
    prepare_training_scene,
    select_detections,
    train,
)
from geograph.simulator import SimConfig, generate_corpus

D = 32


def oracle_model(feature_dim=D, margin=1.0, gain=20.0):
    """One-layer model scoring sigmoid(gain * (margin - L1 distance between descriptors))."""
    in_dim = feature_dim + POSE_BLOCK_DIM
    eye = np.eye(in_dim)
    layer = GraphConvLayer(np.vstack([eye, -eye]), np.zeros((2 * in_dim, in_dim)), np.zeros(2 * in_dim))
    w = np.zeros(4 * in_dim)
    w[2 * in_dim:2 * in_dim + feature_dim] = -gain
    w[3 * in_dim:3 * in_dim + feature_dim] = -gain
    return GnnModel([layer], EdgeScorer(w, np.array([gain * margin])), dropout_p=0.0)


def test_select_detections_filters_then_suppresses():
    d = [make_detection(box=(0, 600, 10, 700), score=0.9, view=1),
         make_detection(box=(1, 600, 11, 700), score=0.8, view=1),
         make_detection(box=(1, 600, 11, 700), score=0.8, view=0),
         make_detection(box=(500, 600, 510, 700), score=0.2, view=0)]
    out = select_detections(d, InferenceOptions(min_score=0.3, nms_iou=0.5))
    assert out == [d[2], d[0]]


def test_perfect_model_closure():
    scenes = generate_corpus(SimConfig(seed=12, n_scenes=15).noise_free())
    model, net = oracle_model(), init_refine_net(zero=True)
    results = [infer_scene(s, model, net) for s in scenes]
    report, rows = evaluate_results(results, scenes)
    assert report["reid"]["f1"] == 1.0 and report["reid"]["pairwise_f1"] == 1.0
    assert report["geo"]["mae_m"] < 0.01
    assert report["geo"]["unmatched_truths"] == 0
    assert len(rows) == 15


def test_empty_scene_yields_no_components():
    scene = generate_corpus(SimConfig(seed=1, n_scenes=1).noise_free())[0]
    scene.detections = []
    res = infer_scene(scene, oracle_model(), None)
    assert res.graph is None and res.components == []
    report, rows = evaluate_results([res], [scene])
    assert rows[0]["n_detections"] == 0
    assert report["geo"]["unmatched_truths"] == len(scene.objects)


def test_prepare_training_scene_samples():
    scene = generate_corpus(SimConfig(seed=3, n_scenes=1))[0]
    ts = prepare_training_scene(scene)
    n_true = sum(d.gt_object_id is not None for d in scene.detections)
    assert ts.raw_offsets.shape == ts.true_offsets.shape == (n_true, 2)
    assert ts.graph.num_nodes == len(scene.detections)


def small_run(seed=0, epochs=2):
    scenes = generate_corpus(SimConfig(seed=1, n_scenes=10).noise_free())
    model = init_model(D + POSE_BLOCK_DIM, 16, seed=seed)
    net = init_refine_net(seed)
    log, opt = train(model, net, scenes, TrainConfig(epochs=epochs, seed=seed))
    return model, net, log, opt


def test_training_smoke_and_determinism():
    _, _, log_a, _ = small_run()
    _, _, log_b, _ = small_run()
    assert log_a == log_b
    assert [r["epoch"] for r in log_a] == [1, 2]
    assert all(np.isfinite(r["total_loss"]) for r in log_a)
    assert log_a[-1]["steps"] == 20


def test_max_steps_stops_early():
    scenes = generate_corpus(SimConfig(seed=1, n_scenes=10).noise_free())
    model, net = init_model(D + POSE_BLOCK_DIM, 8), init_refine_net()
    log, opt = train(model, net, scenes, TrainConfig(epochs=5), max_steps=13)
    assert log[-1]["steps"] == 13 and opt.t == 13


def test_feature_noise_degrades_f1():
    f1 = []
    for sigma in (0.05, 0.25, 0.6):
        train_set = generate_corpus(SimConfig(seed=30, n_scenes=40, feature_noise_sigma=sigma))
        test_set = generate_corpus(SimConfig(seed=31, n_scenes=40, feature_noise_sigma=sigma))
        model, net = init_model(D + POSE_BLOCK_DIM, 32, seed=0), init_refine_net(0)
        train(model, net, train_set, TrainConfig(epochs=5, seed=0))
        results = [infer_scene(s, model, net) for s in test_set]
        f1.append(evaluate_results(results, test_set)[0]["reid"]["pairwise_f1"])
    assert f1[0] > f1[1] > f1[2]


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model, net, _, opt = small_run(epochs=1)
    path = tmp_path / "m.json"
    save_checkpoint(path, model, net, opt, {"pose_scale_m": 7.0}, {"seed": 0})
    ck = load_checkpoint(path)
    for name, p in {**model.parameters(), **net.parameters()}.items():
        q = {**ck.model.parameters(), **ck.refine_net.parameters()}[name]
        assert p.shape == q.shape and np.array_equal(p, q), name
    assert ck.model.pairing == model.pairing and ck.model.aggregation == model.aggregation
    assert ck.optimizer_state["t"] == opt.t
    for k in opt.m:
        assert np.array_equal(ck.optimizer_state["m"][k], opt.m[k])
        assert np.array_equal(ck.optimizer_state["v"][k], opt.v[k])
    assert ck.graph_options == {"pose_scale_m": 7.0} and ck.meta == {"seed": 0}
    GraphOptions(**ck.graph_options)


def test_restored_optimizer_continues_identically(tmp_path):
    model, net, _, opt = small_run(epochs=1)
    save_checkpoint(tmp_path / "m.json", model, net, opt)
    ck = load_checkpoint(tmp_path / "m.json")
    opt2 = Adam({**ck.model.parameters(), **ck.refine_net.parameters()}, lr=ck.optimizer_state["lr"])
    opt2.load_state_dict(ck.optimizer_state)
    scenes = generate_corpus(SimConfig(seed=9, n_scenes=3).noise_free())
    cfg = TrainConfig(epochs=1, seed=5)
    log_a, _ = train(model, net, scenes, cfg, optimizer=opt)
    log_b, _ = train(ck.model, ck.refine_net, scenes, cfg, optimizer=opt2)
    assert log_a == log_b


def test_checkpoint_schema_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{}")
    with pytest.raises(SchemaError):
        load_checkpoint(path)
    path.write_text("not json")
    with pytest.raises(SchemaError):
        load_checkpoint(path)
    model, net, _, _ = small_run(epochs=1)
    save_checkpoint(path, model, net)
    doc = json.loads(path.read_text())
    del doc["tensors"]["scorer.w"]
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match="scorer.w"):
        load_checkpoint(path)
