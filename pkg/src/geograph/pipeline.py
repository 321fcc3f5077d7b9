"""End-to-end training loop and the inference procedure over simulated scenes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .detection import Detection, nms, score_filter
from .errors import HorizonRay, NoValidViews
from .evaluation import (
    geo_mae,
    match_components_to_objects,
    pairwise_f1,
    reid_edge_metrics,
)
from .geoloc import (
    ObjectEstimate,
    RefineNet,
    localize_object,
    project_detection,
    refine_loss_and_grads,
)
from .geometry import enu_offset
from .gnn import GnnModel, TrainConfig, edge_loss_and_grads, make_optimizer, model_forward
from .graph import (
    DEFAULT_POSE_SCALE_M,
    GtGraph,
    SceneGraph,
    build_gt_graph,
    build_scene_graph,
    connected_components,
    threshold_edges,
)
from .optim import Adam
from .simulator import Scene


@dataclass(frozen=True)
class GraphOptions:
    pose_scale_m: float = DEFAULT_POSE_SCALE_M
    include_pose: bool = True
    descriptor_scale: Optional[float] = None


@dataclass(frozen=True)
class InferenceOptions:
    min_score: float = 0.3
    nms_iou: float = 0.5
    edge_threshold: float = 0.5


@dataclass
class TrainingScene:
    graph: SceneGraph
    gt: GtGraph
    raw_offsets: np.ndarray   # [M, 2] camera-relative projected positions
    true_offsets: np.ndarray  # [M, 2] camera-relative true positions


def prepare_training_scene(scene: Scene, options: GraphOptions = GraphOptions()) -> Optional[TrainingScene]:
    """Graph, ground truth and refinement samples for one scene; ``None`` if it has no detections."""
    if not scene.detections:
        return None
    graph = build_scene_graph(scene.detections, options.pose_scale_m, options.include_pose,
                              options.descriptor_scale)
    gt = build_gt_graph(scene.detections)
    raw, true = [], []
    for d in scene.detections:
        if d.gt_object_id is None:
            continue
        try:
            g = project_detection(d)
        except HorizonRay:
            continue
        raw.append(enu_offset(g, d.camera.position))
        true.append(enu_offset(scene.truth[d.gt_object_id], d.camera.position))
    return TrainingScene(graph, gt, np.array(raw, dtype=float).reshape(-1, 2), np.array(true, dtype=float).reshape(-1, 2))


def train(model: GnnModel, net: RefineNet, scenes: Sequence[Scene], cfg: TrainConfig,
          options: GraphOptions = GraphOptions(), optimizer: Optional[Adam] = None,
          max_steps: Optional[int] = None) -> tuple[list[dict], Adam]:
    """Jointly train the edge classifier and the refinement net, one scene per step.

    The loss of a step is ``focal edge loss + refine_weight * refinement MSE``.
    Scenes are reshuffled every epoch from ``cfg.seed``. Returns one log row
    per epoch and the optimizer (whose state belongs in the checkpoint).
    """
    prepared = [p for p in (prepare_training_scene(s, options) for s in scenes) if p is not None]
    if optimizer is None:
        optimizer = make_optimizer(model, cfg.learning_rate, extra=net.parameters())
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(prepared))
        edge_losses, refine_losses, correct, total = [], [], 0, 0
        for k in order:
            if max_steps is not None and step >= max_steps:
                break
            ts = prepared[k]
            loss, grads, scores = edge_loss_and_grads(model, ts.graph, ts.gt, cfg.alpha, cfg.gamma,
                                                      train=True, rng=rng)
            if len(ts.raw_offsets):
                r_loss, r_grads = refine_loss_and_grads(net, ts.raw_offsets, ts.true_offsets)
                for name, g in r_grads.items():
                    grads[name] = cfg.refine_weight * g
            else:
                r_loss = 0.0
                grads.update({name: np.zeros_like(p) for name, p in net.parameters().items()})
            optimizer.step(grads)
            step += 1
            edge_losses.append(loss)
            refine_losses.append(r_loss)
            labels = ts.gt.labels(ts.graph.edges)
            correct += int(np.sum((scores >= cfg.edge_threshold) == (labels == 1)))
            total += len(labels)
        if not edge_losses:
            break
        e_loss, r_loss = float(np.mean(edge_losses)), float(np.mean(refine_losses))
        log.append({
            "epoch": epoch + 1,
            "steps": step,
            "edge_loss": e_loss,
            "refine_loss": r_loss,
            "total_loss": e_loss + cfg.refine_weight * r_loss,
            "edge_accuracy": correct / total if total else 1.0,
        })
    return log, optimizer


@dataclass
class SceneResult:
    scene_id: int
    detections: list[Detection]
    graph: Optional[SceneGraph]                 # scored, before thresholding
    components: list[set[int]] = field(default_factory=list)
    estimates: list[Optional[ObjectEstimate]] = field(default_factory=list)


def select_detections(detections: Sequence[Detection], options: InferenceOptions) -> list[Detection]:
    """Score threshold, then NMS within each view; views in ascending order."""
    kept = score_filter(detections, options.min_score)
    by_view: dict[int, list[Detection]] = {}
    for d in kept:
        by_view.setdefault(d.view_id, []).append(d)
    out: list[Detection] = []
    for view in sorted(by_view):
        out.extend(nms(by_view[view], options.nms_iou))
    return out


def infer_scene(scene: Scene, model: GnnModel, net: Optional[RefineNet],
                options: InferenceOptions = InferenceOptions(),
                graph_options: GraphOptions = GraphOptions()) -> SceneResult:
    dets = select_detections(scene.detections, options)
    if not dets:
        return SceneResult(scene.scene_id, dets, None)
    graph = build_scene_graph(dets, graph_options.pose_scale_m, graph_options.include_pose,
                              graph_options.descriptor_scale)
    _, scores = model_forward(model, graph, mode="eval")
    scored = graph.with_scores(scores)
    components = connected_components(threshold_edges(scored, options.edge_threshold))
    estimates: list[Optional[ObjectEstimate]] = []
    for comp in components:
        try:
            estimates.append(localize_object(comp, dets, net))
        except NoValidViews:
            estimates.append(None)
    return SceneResult(scene.scene_id, dets, scored, components, estimates)


def evaluate_results(results: Sequence[SceneResult], scenes: Sequence[Scene],
                     edge_threshold: float = 0.5) -> tuple[dict, list[dict]]:
    """Pooled metrics plus one row per scene.

    ``reid`` pools strict edge counts over scenes; its ``mean_average_precision``
    averages per-scene swept AP over scenes that have any positive edge.
    ``pairwise_f1`` pools every scored pair. Geo errors pool all matched objects.
    """
    tp = fp = fn = 0
    aps, pairs, errors, rows = [], [], [], []
    unmatched_est = unmatched_truth = 0
    for res, scene in zip(results, scenes):
        row = {"scene_id": scene.scene_id, "n_detections": len(res.detections),
               "n_components": len(res.components)}
        if res.graph is None:
            row.update(tp=0, fp=0, fn=0, average_precision=0.0, pairwise_f1=0.0, geo_mae=0.0,
                       n_matched=0)
            unmatched_truth += len(scene.objects)
            rows.append(row)
            continue
        gt = build_gt_graph(res.detections)
        rep = reid_edge_metrics(res.graph, gt, threshold=edge_threshold)
        tp, fp, fn = tp + rep.true_positives, fp + rep.false_positives, fn + rep.false_negatives
        if gt.positive_edges:
            aps.append(rep.average_precision)
        scene_pairs = list(zip(res.graph.edge_scores.tolist(), gt.labels(res.graph.edges).tolist()))
        pairs.extend(scene_pairs)
        matching = match_components_to_objects(res.components, res.detections)
        matching = {c: o for c, o in matching.items() if res.estimates[c] is not None}
        geo = geo_mae(res.estimates, scene.truth, matching)
        errors.extend(geo.per_object_errors)
        unmatched_est += sum(1 for c, e in enumerate(res.estimates) if e is not None and c not in matching)
        unmatched_truth += geo.unmatched_truths
        row.update(tp=rep.true_positives, fp=rep.false_positives, fn=rep.false_negatives,
                   average_precision=rep.average_precision,
                   pairwise_f1=pairwise_f1(scene_pairs, edge_threshold) if scene_pairs else 0.0,
                   geo_mae=geo.mae, n_matched=len(matching))
        rows.append(row)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    report = {
        "reid": {
            "true_positives": tp,
            "false_positives": fp,
            "false_negatives": fn,
            "precision": precision,
            "recall": recall,
            "f1": 2 * precision * recall / (precision + recall) if precision + recall else 0.0,
            "mean_average_precision": float(np.mean(aps)) if aps else 0.0,
            "pairwise_f1": pairwise_f1(pairs, edge_threshold) if pairs else 0.0,
            "edge_accuracy": float(np.mean([(s >= edge_threshold) == (y == 1) for s, y in pairs])) if pairs else 0.0,
        },
        "geo": {
            "mae_m": float(np.mean(errors)) if errors else 0.0,
            "n_matched": len(errors),
            "unmatched_estimates": unmatched_est,
            "unmatched_truths": unmatched_truth,
        },
    }
    return report, rows
