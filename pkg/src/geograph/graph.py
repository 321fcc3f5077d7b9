"""Scene graphs over multi-view detections.

Every detection becomes a node whose embedding is its appearance descriptor,
rescaled by sqrt(D) so a unit-norm descriptor has unit RMS entries, followed
by a 10-value pose-and-box block:

    north offset, east offset          camera position relative to the
                                       centroid of the scene's cameras,
                                       divided by ``pose_scale_m``
    sin(heading), cos(heading)
    box center x / W, box bottom y / H
    box width / W, box height / H
    ground north, ground east          where the box bottom-centre ray meets
                                       flat ground, same frame and scale

The last pair is a fixed function of the pose and box values. A small GNN
cannot discover that trigonometric composition from a few thousand scenes,
so it is handed over precomputed. Rays at or above the horizon, or landing
beyond ``MAX_GROUND_RANGE_M``, are clamped to that range along their bearing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _scipy_components

from .detection import UNLABELED, Detection
from .errors import DimensionMismatch, EmptyScene, MissingLabels, MissingScores
from .geometry import EARTH_RADIUS_M, pixel_bearing, pixel_ground_distance

POSE_BLOCK_DIM = 10
DEFAULT_POSE_SCALE_M = 7.0
MAX_GROUND_RANGE_M = 100.0


@dataclass(frozen=True, eq=False)
class Node:
    node_id: int
    detection_ref: int
    embedding: np.ndarray


@dataclass(frozen=True, eq=False)
class SceneGraph:
    nodes: list[Node]
    edges: list[tuple[int, int]]
    edge_scores: Optional[np.ndarray] = None

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def features(self) -> np.ndarray:
        return np.stack([n.embedding for n in self.nodes])

    @property
    def edge_index(self) -> np.ndarray:
        """Edges as an ``[E, 2]`` integer array."""
        return np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    def with_scores(self, scores) -> "SceneGraph":
        scores = np.asarray(scores, dtype=float)
        if scores.shape != (len(self.edges),):
            raise DimensionMismatch(f"expected {len(self.edges)} edge scores, got {scores.shape}")
        return SceneGraph(self.nodes, self.edges, scores)


@dataclass(frozen=True)
class GtGraph:
    num_nodes: int
    positive_edges: frozenset = field(default_factory=frozenset)
    object_ids: tuple = ()

    def labels(self, edges: Sequence[tuple[int, int]]) -> np.ndarray:
        return np.array([1 if (min(i, j), max(i, j)) in self.positive_edges else 0 for i, j in edges])


def pose_block(detections: Sequence[Detection], pose_scale_m: float = DEFAULT_POSE_SCALE_M) -> np.ndarray:
    """The ``[N, 10]`` pose-and-box block for a scene's detections."""
    lats = np.array([d.camera.position.lat for d in detections])
    lngs = np.array([d.camera.position.lng for d in detections])
    views = {}
    for d, lat, lng in zip(detections, lats, lngs):
        views.setdefault(d.view_id, (lat, lng))
    centroid = np.mean(np.array(list(views.values())), axis=0)
    # wrap so scenes straddling the antimeridian stay local
    dlng = np.angle(np.exp(1j * (lngs - centroid[1])))
    north = (lats - centroid[0]) * EARTH_RADIUS_M
    east = dlng * EARTH_RADIUS_M * np.cos(centroid[0])
    block = np.empty((len(detections), POSE_BLOCK_DIM))
    block[:, 0] = north / pose_scale_m
    block[:, 1] = east / pose_scale_m
    for k, d in enumerate(detections):
        b, w, h = d.bbox, d.image_width, d.image_height
        cx, bottom = b.bottom_center
        block[k, 2] = np.sin(d.camera.heading)
        block[k, 3] = np.cos(d.camera.heading)
        block[k, 4:8] = (cx / w, bottom / h, (b.x_max - b.x_min) / w, (b.y_max - b.y_min) / h)
        bearing = pixel_bearing(cx, d.camera, w)
        rng = ground_range(bottom, d.camera, h)
        block[k, 8] = north[k] + rng * np.cos(bearing)
        block[k, 9] = east[k] + rng * np.sin(bearing)
    block[:, 8:] /= pose_scale_m
    return block


def ground_range(y, camera, height) -> float:
    """Ground distance for image row ``y``, clamped to ``MAX_GROUND_RANGE_M``."""
    if y <= height / 2:
        return MAX_GROUND_RANGE_M
    return float(min(pixel_ground_distance(y, camera, height), MAX_GROUND_RANGE_M))


def build_scene_graph(
    detections: Sequence[Detection],
    pose_scale_m: float = DEFAULT_POSE_SCALE_M,
    include_pose: bool = True,
    descriptor_scale: Optional[float] = None,
) -> SceneGraph:
    """Fully connected graph, one node per detection, including same-view pairs.

    With ``include_pose=False`` the pose-and-box block is zeroed but kept, so
    models trained either way share input dimensions. ``descriptor_scale``
    defaults to ``sqrt(D)``.
    """
    if not detections:
        raise EmptyScene("cannot build a graph without detections")
    dims = {np.shape(d.feature) for d in detections}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise DimensionMismatch(f"feature shapes differ within scene: {sorted(dims)}")
    feats = np.stack([np.asarray(d.feature, dtype=float) for d in detections])
    feats = feats * (np.sqrt(feats.shape[1]) if descriptor_scale is None else descriptor_scale)
    block = pose_block(detections, pose_scale_m)
    if not include_pose:
        block = np.zeros_like(block)
    emb = np.hstack([feats, block])
    nodes = [Node(i, i, emb[i]) for i in range(len(detections))]
    return SceneGraph(nodes, list(combinations(range(len(detections)), 2)))


def build_gt_graph(detections: Sequence[Detection], training: bool = True) -> GtGraph:
    """Ground-truth graph: an edge exactly between detections of the same object.

    Background detections carry ``gt_object_id=None`` and stay isolated. In
    training mode an ``UNLABELED`` detection raises ``MissingLabels``;
    otherwise it is treated as background.
    """
    ids = []
    for k, d in enumerate(detections):
        if d.gt_object_id is UNLABELED:
            if training:
                raise MissingLabels(f"detection {k} has no gt_object_id")
            ids.append(None)
        else:
            ids.append(d.gt_object_id)
    positive = frozenset(
        (i, j) for i, j in combinations(range(len(ids)), 2) if ids[i] is not None and ids[i] == ids[j]
    )
    return GtGraph(len(ids), positive, tuple(ids))


def threshold_edges(graph: SceneGraph, threshold: float) -> SceneGraph:
    """Keep edges scoring at or above ``threshold``."""
    if graph.edge_scores is None:
        raise MissingScores("graph has no edge scores")
    keep = np.flatnonzero(graph.edge_scores >= threshold)
    return SceneGraph(graph.nodes, [graph.edges[k] for k in keep], graph.edge_scores[keep])


def connected_components(graph: SceneGraph) -> list[set[int]]:
    """Partition nodes into components, ordered by each component's smallest node."""
    n = graph.num_nodes
    if n == 0:
        return []
    ei = graph.edge_index
    adj = coo_matrix((np.ones(len(ei)), (ei[:, 0], ei[:, 1])), shape=(n, n))
    _, labels = _scipy_components(adj, directed=False)
    groups: dict[int, set[int]] = {}
    for node, label in enumerate(labels):
        groups.setdefault(int(label), set()).add(node)
    return sorted(groups.values(), key=min)
