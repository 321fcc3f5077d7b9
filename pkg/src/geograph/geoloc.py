"""Geo-localization: box projection, learned refinement and multi-view averaging."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .detection import Detection
from .errors import HorizonRay, NoValidViews
from .geometry import CameraPose, GeoPoint, PixelPoint, enu_offset, offset_geo, pixel_to_geo
from .optim import Adam

REFINE_HIDDEN = 16
# inputs are divided by this before the first layer
REFINE_INPUT_SCALE_M = 10.0


@dataclass(eq=False)
class RefineNet:
    """Two-layer ReLU perceptron mapping (east, north, distance) to a metric correction."""

    w1: np.ndarray  # [h, 3]
    b1: np.ndarray  # [h]
    w2: np.ndarray  # [2, h]
    b2: np.ndarray  # [2]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"refine.w1": self.w1, "refine.b1": self.b1, "refine.w2": self.w2, "refine.b2": self.b2}


@dataclass
class RefineConfig:
    learning_rate: float = 1e-2
    epochs: int = 500
    seed: int = 0


@dataclass
class ObjectEstimate:
    object_component: set[int]
    per_view_estimates: list[GeoPoint]
    final: GeoPoint
    detection_refs: list[int] = field(default_factory=list)


def init_refine_net(seed: int = 0, hidden: int = REFINE_HIDDEN, zero: bool = False) -> RefineNet:
    """Random first layer with a zero output layer, so the initial correction is zero.

    ``zero=True`` zeroes everything; such a net can only ever learn a
    constant offset because no hidden unit is active.
    """
    rng = np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (3 + hidden))
    w1 = np.zeros((hidden, 3)) if zero else rng.uniform(-limit, limit, size=(hidden, 3))
    return RefineNet(w1=w1, b1=np.zeros(hidden), w2=np.zeros((2, hidden)), b2=np.zeros(2))


def project_detection(d: Detection) -> GeoPoint:
    """Ground position under the bottom-center of the detection box."""
    x, y = d.bbox.bottom_center
    return pixel_to_geo(PixelPoint(x, y), d.camera, d.image_width, d.image_height)


def _inputs(offsets: np.ndarray) -> np.ndarray:
    offsets = np.atleast_2d(offsets)
    dist = np.hypot(offsets[:, 0], offsets[:, 1])
    return np.column_stack([offsets, dist]) / REFINE_INPUT_SCALE_M


def refine_offsets(net: RefineNet, offsets: np.ndarray) -> np.ndarray:
    """Refined ``[N, 2]`` east/north offsets (meters, camera-relative)."""
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    hidden = np.maximum(_inputs(offsets) @ net.w1.T + net.b1, 0.0)
    return offsets + hidden @ net.w2.T + net.b2


def refine(net: RefineNet, raw: GeoPoint, camera: CameraPose) -> GeoPoint:
    e, n = enu_offset(raw, camera.position)
    out = refine_offsets(net, np.array([[e, n]]))[0]
    return offset_geo(camera.position, out[0], out[1])


def refine_loss_and_grads(net: RefineNet, offsets: np.ndarray, targets: np.ndarray):
    """Mean squared error (m^2, summed over east/north) and its parameter gradients."""
    offsets = np.atleast_2d(offsets)
    targets = np.atleast_2d(targets)
    x = _inputs(offsets)
    pre = x @ net.w1.T + net.b1
    hidden = np.maximum(pre, 0.0)
    resid = offsets + hidden @ net.w2.T + net.b2 - targets
    m = len(offsets)
    loss = float(np.sum(resid**2) / m)
    d_out = 2.0 * resid / m
    d_pre = (d_out @ net.w2) * (pre > 0)
    grads = {
        "refine.w2": d_out.T @ hidden,
        "refine.b2": d_out.sum(axis=0),
        "refine.w1": d_pre.T @ x,
        "refine.b1": d_pre.sum(axis=0),
    }
    return loss, grads


def refine_samples_to_offsets(samples: Iterable[tuple[GeoPoint, CameraPose, GeoPoint]]):
    """Camera-relative raw and true offsets for ``(raw, camera, truth)`` triples."""
    raw_off, true_off = [], []
    for raw, cam, truth in samples:
        raw_off.append(enu_offset(raw, cam.position))
        true_off.append(enu_offset(truth, cam.position))
    return np.array(raw_off, dtype=float).reshape(-1, 2), np.array(true_off, dtype=float).reshape(-1, 2)


def train_refine(net: RefineNet, samples: Sequence[tuple[GeoPoint, CameraPose, GeoPoint]],
                 cfg: Optional[RefineConfig] = None) -> list[float]:
    """Full-batch Adam on the MSE between refined and true positions.

    Updates ``net`` in place and returns the per-epoch loss history (loss
    before each step).
    """
    cfg = cfg or RefineConfig()
    if not samples:
        raise ValueError("train_refine needs at least one sample")
    raw_off, true_off = refine_samples_to_offsets(samples)
    opt = Adam(net.parameters(), lr=cfg.learning_rate)
    history = []
    for _ in range(cfg.epochs):
        loss, grads = refine_loss_and_grads(net, raw_off, true_off)
        history.append(loss)
        opt.step(grads)
    history.append(refine_loss_and_grads(net, raw_off, true_off)[0])
    return history


def enu_centroid(points: Sequence[GeoPoint]) -> GeoPoint:
    """Average of points on the tangent plane at the first point."""
    origin = points[0]
    e = np.array([enu_offset(p, origin)[0] for p in points])
    n = np.array([enu_offset(p, origin)[1] for p in points])
    return offset_geo(origin, e.mean(), n.mean())


def localize_object(component: Iterable[int], detections: Sequence[Detection],
                    net: Optional[RefineNet] = None) -> ObjectEstimate:
    """Refine each view's projection of the object, then average the views.

    When several detections of one view fall in the component, only the
    highest-scoring one is used (lower index on ties). Detections whose box
    bottom sits at or above the horizon are skipped.
    """
    members = sorted(component)
    if not members:
        raise ValueError("component is empty")
    best: dict[int, int] = {}
    for idx in members:
        view = detections[idx].view_id
        if view not in best or detections[idx].score > detections[best[view]].score:
            best[view] = idx
    estimates, used = [], []
    for view in sorted(best):
        d = detections[best[view]]
        try:
            raw = project_detection(d)
        except HorizonRay:
            continue
        estimates.append(refine(net, raw, d.camera) if net is not None else raw)
        used.append(best[view])
    if not estimates:
        raise NoValidViews(f"no detection in component {members} projects onto the ground")
    return ObjectEstimate(set(members), estimates, enu_centroid(estimates), used)
