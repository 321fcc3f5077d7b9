import math

import numpy as np
import pytest

from conftest import make_camera, make_detection
from geograph.errors import NoValidViews
from geograph.geometry import GeoPoint, enu_offset, enu_to_pixel, geo_to_enu, haversine_m, offset_geo
from geograph.geoloc import (
    RefineConfig,
    enu_centroid,
    init_refine_net,
    localize_object,
    project_detection,
    refine,
    refine_loss_and_grads,
    refine_offsets,
    train_refine,
)
from geograph.simulator import SimConfig, generate_corpus
from oracles import central_difference, relative_error
from test_geometry import GOLDEN_X, GOLDEN_Y


def detection_at(cam, obj, view=0, score=0.9, width=2048, height=1024):
    px = enu_to_pixel(geo_to_enu(obj, cam), cam, width, height)
    return make_detection(box=(px.x - 10, px.y - 40, px.x + 10, px.y), camera=cam, view=view, score=score)


def test_box_at_45_degrees_lands_north():
    cam = make_camera(5.0, 5.0, heading=0.0, height=2.5)
    d = make_detection(box=(1014, 700, 1034, 768), camera=cam)
    e, n = enu_offset(project_detection(d), cam.position)
    assert n == pytest.approx(2.5, abs=1e-9) and e == pytest.approx(0.0, abs=1e-9)


def test_golden_pixel_projects_back():
    cam = make_camera(0.0, 0.0, heading=0.0, height=2.5)
    d = make_detection(box=(GOLDEN_X - 5, GOLDEN_Y - 20, GOLDEN_X + 5, GOLDEN_Y), camera=cam)
    e, n = enu_offset(project_detection(d), cam.position)
    assert e == pytest.approx(10.0, abs=1e-6) and n == pytest.approx(10.0, abs=1e-6)


def test_noise_free_simulated_detections_project_exactly():
    for scene in generate_corpus(SimConfig(seed=4, n_scenes=10).noise_free()):
        for d in scene.detections:
            assert haversine_m(project_detection(d), scene.truth[d.gt_object_id]) < 0.01


def test_zero_net_is_identity():
    net = init_refine_net(zero=True)
    cam = make_camera(30.0, 10.0)
    raw = offset_geo(cam.position, 4.0, -7.0)
    assert haversine_m(refine(net, raw, cam), raw) < 1e-9
    net = init_refine_net(seed=3)
    offs = np.array([[1.0, 2.0], [-5.0, 9.0]])
    np.testing.assert_array_equal(refine_offsets(net, offs), offs)


def test_refine_gradients_on_three_samples():
    rng = np.random.default_rng(2)
    net = init_refine_net(seed=1)
    for p in net.parameters().values():
        p += rng.normal(0, 0.2, p.shape)
    offs = rng.uniform(-15, 15, (3, 2))
    targets = offs + rng.normal(0, 1, (3, 2))
    _, grads = refine_loss_and_grads(net, offs, targets)
    numeric = central_difference(lambda: refine_loss_and_grads(net, offs, targets)[0], net.parameters())
    for name in grads:
        assert relative_error(grads[name], numeric[name]) < 1e-4, name


def test_exact_samples_give_zero_loss():
    offs = np.random.default_rng(0).uniform(-10, 10, (5, 2))
    net = init_refine_net(seed=0)
    loss, grads = refine_loss_and_grads(net, offs, offs)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads.values())


def bias_samples(n_scenes, seed, bias_north=1.0):
    """(raw, camera, truth) triples where every raw projection sits 1 m north of the truth."""
    samples = []
    for scene in generate_corpus(SimConfig(seed=seed, n_scenes=n_scenes).noise_free()):
        for d in scene.detections:
            truth = scene.truth[d.gt_object_id]
            raw = offset_geo(project_detection(d), 0.0, bias_north)
            samples.append((raw, d.camera, truth))
    return samples


def test_learns_systematic_bias():
    train = bias_samples(30, seed=1)
    net = init_refine_net(seed=0)
    history = train_refine(net, train, RefineConfig(learning_rate=1e-2, epochs=400))
    assert history[-1] < 0.01 * history[0]
    held_out = bias_samples(10, seed=2)
    residuals, corrections = [], []
    for raw, cam, truth in held_out:
        out = refine(net, raw, cam)
        residuals.append(haversine_m(out, truth))
        e, n = enu_offset(out, raw)
        corrections.append((e, n))
    corrections = np.array(corrections)
    assert np.mean(corrections[:, 1]) == pytest.approx(-1.0, abs=0.1)
    assert max(residuals) < 0.2
    # no wild extrapolation on in-distribution input
    assert np.max(np.hypot(corrections[:, 0], corrections[:, 1])) < 2.0


def test_single_view_component():
    cam = make_camera(10.0, 10.0, heading=1.0)
    obj = offset_geo(cam.position, 6.0, 3.0)
    d = [detection_at(cam, obj)]
    net = init_refine_net(seed=0)
    est = localize_object({0}, d, net)
    assert len(est.per_view_estimates) == 1
    assert est.final == est.per_view_estimates[0]
    assert haversine_m(est.final, obj) < 0.01


def test_symmetric_estimates_average_to_truth():
    truth = GeoPoint.from_degrees(40.0, -70.0)
    pts = [offset_geo(truth, 2.0, -1.0), offset_geo(truth, -2.0, 1.0)]
    assert haversine_m(enu_centroid(pts), truth) < 1e-6


def test_best_detection_per_view_is_used():
    cam = make_camera(0.0, 0.0)
    obj = offset_geo(cam.position, 5.0, 5.0)
    far = offset_geo(cam.position, 9.0, -4.0)
    d = [detection_at(cam, obj, score=0.9), detection_at(cam, far, score=0.5)]
    est = localize_object({0, 1}, d)
    assert est.detection_refs == [0]
    assert haversine_m(est.final, obj) < 0.01


def test_all_views_above_horizon():
    d = [make_detection(box=(100, 200, 140, 400))]
    with pytest.raises(NoValidViews):
        localize_object({0}, d)
    with pytest.raises(ValueError):
        localize_object(set(), d)


def noisy_views(rng, n_views, sigma):
    """Per-view estimates scattered around a truth point with isotropic sigma."""
    truth = GeoPoint.from_degrees(rng.uniform(-50, 50), rng.uniform(-170, 170))
    pts = [offset_geo(truth, *rng.normal(0, sigma, 2)) for _ in range(n_views)]
    return truth, pts


def test_four_views_beat_one_view():
    rng = np.random.default_rng(123)
    wins = 0
    for _ in range(100):
        truth, pts = noisy_views(rng, 4, 1.0)
        wins += haversine_m(enu_centroid(pts), truth) < haversine_m(pts[0], truth)
    assert wins >= 80


def test_centroid_is_permutation_invariant():
    rng = np.random.default_rng(5)
    _, pts = noisy_views(rng, 5, 3.0)
    a = enu_centroid(pts)
    b = enu_centroid(pts[::-1])
    assert haversine_m(a, b) < 1e-6
    assert math.isfinite(a.lat)
