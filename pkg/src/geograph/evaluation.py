"""Re-identification and geo-localization metrics."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .detection import UNLABELED, Detection
from .errors import NodeSetMismatch
from .geometry import GeoPoint, haversine_m
from .graph import GtGraph, SceneGraph


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


@dataclass
class ReidReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float
    average_precision: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GeoReport:
    per_object_errors: list[float]
    mae: float
    unmatched_estimates: int = 0
    unmatched_truths: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _strict_counts(edges: Sequence[tuple[int, int]], ids: Sequence, positives: frozenset):
    """TP/FP/FN where a TP must also be free of predicted edges to other objects.

    Background nodes (id ``None``) count as a different object from everything.
    ``tp + fn`` always equals the number of positive edges.
    """
    impure = set()
    for i, j in edges:
        if ids[i] is None or ids[i] != ids[j]:
            impure.update((i, j))
    tp = fp = 0
    for i, j in edges:
        key = (min(i, j), max(i, j))
        if key in positives and i not in impure and j not in impure:
            tp += 1
        else:
            fp += 1
    # a demoted positive edge is both a false positive and a missed positive
    return tp, fp, len(positives) - tp


def _sweep_average_precision(graph: SceneGraph, gt: GtGraph) -> float:
    """Step-interpolated area under the strict precision/recall curve.

    The threshold sweeps over every distinct edge score, high to low. Under
    the purity rule recall can fall as edges are added, so only recall above
    the best seen so far earns area.
    """
    n_pos = len(gt.positive_edges)
    if n_pos == 0:
        return 0.0
    scores = graph.edge_scores if graph.edge_scores is not None else np.ones(len(graph.edges))
    ap, best_recall = 0.0, 0.0
    for t in np.unique(scores)[::-1]:
        kept = [e for e, s in zip(graph.edges, scores) if s >= t]
        tp, fp, _ = _strict_counts(kept, gt.object_ids, gt.positive_edges)
        recall = tp / n_pos
        if recall > best_recall:
            ap += (recall - best_recall) * _ratio(tp, tp + fp)
            best_recall = recall
    return float(ap)


def reid_edge_metrics(graph: SceneGraph, gt: GtGraph, threshold: Optional[float] = None) -> ReidReport:
    """Edge-level re-ID counts with the cluster-purity rule, plus swept AP.

    ``graph`` is either already thresholded (``threshold=None``: every edge
    counts as predicted) or fully scored, in which case edges scoring at or
    above ``threshold`` are the prediction. AP always sweeps the scores the
    graph carries.
    """
    if graph.num_nodes != gt.num_nodes:
        raise NodeSetMismatch(f"graph has {graph.num_nodes} nodes, ground truth {gt.num_nodes}")
    edges = graph.edges
    if threshold is not None and graph.edge_scores is not None:
        edges = [e for e, s in zip(graph.edges, graph.edge_scores) if s >= threshold]
    tp, fp, fn = _strict_counts(edges, gt.object_ids, gt.positive_edges)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return ReidReport(tp, fp, fn, precision, recall, _ratio(2 * precision * recall, precision + recall),
                      _sweep_average_precision(graph, gt))


def pairwise_f1(scores: Sequence[tuple[float, int]], threshold: float = 0.5) -> float:
    """Plain binary F1 over scored pairs."""
    if len(scores) == 0:
        raise ValueError("pairwise_f1 needs at least one pair")
    p = np.array([s for s, _ in scores], dtype=float)
    y = np.array([g for _, g in scores], dtype=int)
    pred = p >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return _ratio(2 * tp, 2 * tp + fp + fn)


def geo_mae(estimates: Sequence, truth: Mapping[int, GeoPoint], matching: Mapping[int, int]) -> GeoReport:
    """Mean Haversine error over matched estimates.

    ``matching`` maps an index into ``estimates`` to an object id in ``truth``.
    Each estimate needs a ``final`` GeoPoint. Errors are listed in ascending
    object id order so the report does not depend on estimate order.
    """
    pairs = sorted((obj, idx) for idx, obj in matching.items())
    errors = [float(haversine_m(estimates[idx].final, truth[obj])) for obj, idx in pairs]
    mae = float(np.mean(errors)) if errors else 0.0
    return GeoReport(errors, mae, len(estimates) - len(pairs), len(truth) - len({o for o, _ in pairs}))


def match_components_to_objects(components: Sequence[set[int]], detections: Sequence[Detection]) -> dict[int, int]:
    """Assign each predicted component to at most one ground-truth object.

    A component takes the object id most of its detections carry (lower id on
    ties) unless background detections strictly outnumber it. When several
    components claim one object, the larger wins, then the one with the
    smaller lowest node id. Returns ``{component index: object id}``.
    """
    claims: dict[int, list[tuple[int, int, int]]] = {}
    for c, comp in enumerate(components):
        counts = Counter()
        background = 0
        for idx in comp:
            gid = detections[idx].gt_object_id
            if gid is None or gid is UNLABELED:
                background += 1
            else:
                counts[gid] += 1
        if not counts:
            continue
        best_count = max(counts.values())
        if background > best_count:
            continue
        obj = min(g for g, n in counts.items() if n == best_count)
        claims.setdefault(obj, []).append((-len(comp), min(comp), c))
    return {sorted(cands)[0][2]: obj for obj, cands in sorted(claims.items())}
