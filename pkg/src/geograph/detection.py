"""Detector-side plumbing: boxes, detections, IoU, NMS and the two detector losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import CameraPose

PROB_EPS = 1e-7


class _Unlabeled:
    def __repr__(self):
        return "UNLABELED"

    def __reduce__(self):
        return "UNLABELED"


# Default label for detections with no ground truth at all, as opposed to
# ``None`` which marks a known background detection.
UNLABELED = _Unlabeled()


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def bottom_center(self) -> tuple[float, float]:
        return 0.5 * (self.x_min + self.x_max), self.y_max

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max])


@dataclass(frozen=True, eq=False)
class Detection:
    """One object observation in one panorama."""

    bbox: BoundingBox
    score: float
    feature: np.ndarray
    camera: CameraPose
    image_width: int
    image_height: int
    view_id: int
    gt_object_id: Optional[int] | _Unlabeled = UNLABELED


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes: np.ndarray) -> np.ndarray:
    """Pairwise IoU for an ``[N, 4]`` array of ``(x_min, y_min, x_max, y_max)`` rows."""
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    x1 = np.maximum(boxes[:, None, 0], boxes[None, :, 0])
    y1 = np.maximum(boxes[:, None, 1], boxes[None, :, 1])
    x2 = np.minimum(boxes[:, None, 2], boxes[None, :, 2])
    y2 = np.minimum(boxes[:, None, 3], boxes[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    return inter / (areas[:, None] + areas[None, :] - inter)


def nms_indices(boxes: np.ndarray, scores: Sequence[float], iou_threshold: float) -> list[int]:
    """Greedy NMS on raw arrays. Equal scores are broken by lower index."""
    scores = np.asarray(scores, dtype=float)
    order = list(np.argsort(-scores, kind="stable"))
    overlaps = iou_matrix(boxes)
    keep: list[int] = []
    while order:
        best = order.pop(0)
        keep.append(int(best))
        order = [i for i in order if overlaps[best, i] <= iou_threshold]
    return keep


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression over detections of a single view."""
    if not detections:
        return []
    boxes = np.stack([d.bbox.as_array() for d in detections])
    keep = nms_indices(boxes, [d.score for d in detections], iou_threshold)
    return [detections[i] for i in keep]


def score_filter(detections: Sequence[Detection], min_score: float) -> list[Detection]:
    return [d for d in detections if d.score >= min_score]


def _focal_terms(p, y, alpha):
    p = np.clip(np.asarray(p, dtype=float), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y)
    p_t = np.where(y == 1, p, 1.0 - p)
    alpha_t = np.where(y == 1, alpha, 1.0 - alpha)
    return p_t, alpha_t


def focal_loss(p, y, alpha: float = 0.25, gamma: float = 2.0):
    """Focal loss ``-alpha_t (1 - p_t)^gamma log(p_t)``; elementwise over arrays."""
    p_t, alpha_t = _focal_terms(p, y, alpha)
    loss = -alpha_t * (1.0 - p_t) ** gamma * np.log(p_t)
    return loss if np.ndim(loss) else float(loss)


def focal_loss_grad(p, y, alpha: float = 0.25, gamma: float = 2.0):
    """Derivative of :func:`focal_loss` with respect to ``p``.

    Zero where ``p`` was clamped, matching the clamp's own derivative.
    """
    p_arr = np.asarray(p, dtype=float)
    p_t, alpha_t = _focal_terms(p_arr, y, alpha)
    q = 1.0 - p_t
    if gamma == 0:
        dl_dpt = -alpha_t / p_t
    else:
        dl_dpt = -alpha_t * (q**gamma / p_t - gamma * q ** (gamma - 1) * np.log(p_t))
    sign = np.where(np.asarray(y) == 1, 1.0, -1.0)
    inside = (p_arr > PROB_EPS) & (p_arr < 1.0 - PROB_EPS)
    grad = np.where(inside, sign * dl_dpt, 0.0)
    return grad if np.ndim(grad) else float(grad)


def smooth_l1(pred, target, beta: float = 1.0):
    d = np.abs(np.asarray(pred, dtype=float) - target)
    loss = np.where(d < beta, 0.5 * d**2 / beta, d - 0.5 * beta)
    return loss if np.ndim(loss) else float(loss)


def smooth_l1_grad(pred, target, beta: float = 1.0):
    d = np.asarray(pred, dtype=float) - target
    grad = np.where(np.abs(d) < beta, d / beta, np.sign(d))
    return grad if np.ndim(grad) else float(grad)
