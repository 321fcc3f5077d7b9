"""Synthetic multi-view street scenes with known ground truth.

A scene is a handful of ground-level objects scattered in a disc around a
random anchor, photographed by panoramic cameras spaced along a straight
path through the disc. Each object has a latent unit-norm descriptor; its
detections carry noisy copies of that descriptor, so ``feature_noise_sigma``
sweeps re-identification from trivial to hopeless.

Per-scene randomness comes from ``SeedSequence([seed, scene_index])``, so
scenes can be generated independently and in any order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .detection import BoundingBox, Detection
from .errors import SchemaError
from .geometry import (
    CameraPose,
    GeoPoint,
    enu_offset,
    enu_to_pixel,
    geo_to_enu,
    offset_geo,
    wrap_heading,
    wrap_longitude,
)

SCENE_FORMAT_VERSION = "geograph-scene/1"


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n_scenes: int = 100
    views_per_scene: int = 4
    objects_per_scene_range: tuple[int, int] = (2, 5)
    area_extent_m: float = 20.0          # radius of the object disc
    camera_spacing_m: float = 8.0        # distance between consecutive cameras on the path
    camera_height_m: float = 2.5
    feature_dim: int = 32
    feature_noise_sigma: float = 0.3
    pose_noise_sigma_m: float = 0.5
    heading_noise_sigma_rad: float = 0.01
    bbox_noise_px: float = 2.0
    false_positive_rate: float = 0.1
    missed_detection_rate: float = 0.1
    image_w: int = 2048
    image_h: int = 1024
    bbox_scale_px_m: float = 1000.0      # box height in px is this divided by distance in m
    bbox_aspect: float = 0.5             # width / height
    min_object_distance_m: float = 3.0   # to any camera

    def __post_init__(self):
        lo, hi = self.objects_per_scene_range
        for name in ("feature_noise_sigma", "pose_noise_sigma_m", "heading_noise_sigma_rad", "bbox_noise_px"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("false_positive_rate", "missed_detection_rate"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not 1 <= lo <= hi:
            raise ValueError("objects_per_scene_range must satisfy 1 <= lo <= hi")
        if self.n_scenes < 0:
            raise ValueError("n_scenes must be non-negative")
        if self.views_per_scene < 1:
            raise ValueError("views_per_scene must be at least 1")
        if self.camera_height_m <= 0:
            raise ValueError("camera_height_m must be positive")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if self.area_extent_m <= 0:
            raise ValueError("area_extent_m must be positive")

    def noise_free(self) -> "SimConfig":
        return replace(self, feature_noise_sigma=0.0, pose_noise_sigma_m=0.0, heading_noise_sigma_rad=0.0,
                       bbox_noise_px=0.0, false_positive_rate=0.0, missed_detection_rate=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objects_per_scene_range"] = list(self.objects_per_scene_range)
        return d


@dataclass(frozen=True)
class SceneObject:
    object_id: int
    position: GeoPoint


@dataclass(eq=False)
class Scene:
    scene_id: int
    objects: list[SceneObject]
    cameras: list[CameraPose]  # reported poses, what the pipeline sees
    true_cameras: list[CameraPose]
    detections: list[Detection]
    image_w: int = 2048
    image_h: int = 1024
    truth: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.truth = {o.object_id: o.position for o in self.objects}


def _canonical(value: float, wrap) -> float:
    """Nudge an angle to a value that survives a degrees round trip bit-exactly."""
    v = float(wrap(value))
    for _ in range(8):
        nxt = float(wrap(np.radians(np.degrees(v))))
        if nxt == v:
            return v
        v = nxt
    return v


def _canonical_point(p: GeoPoint) -> GeoPoint:
    return GeoPoint(_canonical(p.lat, lambda x: x), _canonical(p.lng, wrap_longitude))


def _canonical_camera(position: GeoPoint, heading: float, height: float) -> CameraPose:
    return CameraPose(_canonical_point(position), _canonical(heading, wrap_heading), float(height))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _box_from_bottom_center(cx: float, by: float, h: float, aspect: float, width: int) -> BoundingBox:
    # narrow the box near the panorama seam instead of wrapping it
    w = min(aspect * h, 2 * cx, 2 * (width - cx))
    return BoundingBox(cx - w / 2, by - h, cx + w / 2, by)


def scene_rng(seed: int, scene_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, scene_index]))


def generate_scene(cfg: SimConfig, rng: np.random.Generator, scene_id: int = 0) -> Scene:
    W, H = cfg.image_w, cfg.image_h
    anchor = GeoPoint(np.radians(rng.uniform(-60.0, 60.0)), np.radians(rng.uniform(-180.0, 180.0)))
    path_dir = rng.uniform(0.0, 2 * np.pi)

    true_cams = []
    for k in range(cfg.views_per_scene):
        s = (k - (cfg.views_per_scene - 1) / 2) * cfg.camera_spacing_m
        pos = offset_geo(anchor, s * np.sin(path_dir), s * np.cos(path_dir))
        true_cams.append(_canonical_camera(pos, path_dir, cfg.camera_height_m))

    lo, hi = cfg.objects_per_scene_range
    n_objects = int(rng.integers(lo, hi + 1))
    seam_px = 8.0
    objects: list[SceneObject] = []
    attempts = 0
    while len(objects) < n_objects:
        attempts += 1
        if attempts > 10_000:
            raise RuntimeError("could not place objects; enlarge area_extent_m")
        r = cfg.area_extent_m * np.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2 * np.pi)
        cand = _canonical_point(offset_geo(anchor, r * np.sin(theta), r * np.cos(theta)))
        ok = True
        for cam in true_cams:
            e, n = enu_offset(cand, cam.position)
            if np.hypot(e, n) < cfg.min_object_distance_m:
                ok = False
                break
            x = enu_to_pixel(geo_to_enu(cand, cam), cam, W, H).x
            if x < seam_px or x > W - seam_px:
                ok = False
                break
        for other in objects:
            e, n = enu_offset(cand, other.position)
            if np.hypot(e, n) < 1.0:
                ok = False
        if ok:
            objects.append(SceneObject(len(objects), cand))
    latents = [_unit(rng.normal(size=cfg.feature_dim)) for _ in objects]

    reported = []
    for cam in true_cams:
        de, dn = rng.normal(0.0, cfg.pose_noise_sigma_m, size=2) if cfg.pose_noise_sigma_m > 0 else (0.0, 0.0)
        dh = rng.normal(0.0, cfg.heading_noise_sigma_rad) if cfg.heading_noise_sigma_rad > 0 else 0.0
        reported.append(_canonical_camera(offset_geo(cam.position, de, dn), cam.heading + dh, cam.height))

    detections: list[Detection] = []
    for view, cam in enumerate(true_cams):
        for obj, latent in zip(objects, latents):
            if cfg.missed_detection_rate > 0 and rng.uniform() < cfg.missed_detection_rate:
                continue
            v = geo_to_enu(obj.position, cam)
            px = enu_to_pixel(v, cam, W, H)
            z = np.hypot(v.e, v.n)
            cx, by = px.x, px.y
            if cfg.bbox_noise_px > 0:
                cx = float(np.clip(cx + rng.normal(0.0, cfg.bbox_noise_px), 1.0, W - 1.0))
                by = float(np.clip(by + rng.normal(0.0, cfg.bbox_noise_px), H / 2 + 1.0, H))
            h = float(np.clip(cfg.bbox_scale_px_m / z, 4.0, by - 1.0))
            feat = latent
            if cfg.feature_noise_sigma > 0:
                feat = _unit(latent + rng.normal(0.0, cfg.feature_noise_sigma, size=cfg.feature_dim))
            detections.append(Detection(
                bbox=_box_from_bottom_center(cx, by, h, cfg.bbox_aspect, W),
                score=float(rng.uniform(0.5, 1.0)),
                feature=feat.copy(),
                camera=reported[view],
                image_width=W,
                image_height=H,
                view_id=view,
                gt_object_id=obj.object_id,
            ))
        n_fp = int(rng.binomial(len(objects), cfg.false_positive_rate)) if cfg.false_positive_rate > 0 else 0
        for _ in range(n_fp):
            cx = float(rng.uniform(seam_px, W - seam_px))
            by = float(rng.uniform(0.55 * H, 0.95 * H))
            h = float(rng.uniform(20.0, 150.0))
            detections.append(Detection(
                bbox=_box_from_bottom_center(cx, by, h, cfg.bbox_aspect, W),
                score=float(rng.uniform(0.05, 0.7)),
                feature=_unit(rng.normal(size=cfg.feature_dim)),
                camera=reported[view],
                image_width=W,
                image_height=H,
                view_id=view,
                gt_object_id=None,
            ))
    return Scene(scene_id, objects, reported, true_cams, detections, W, H)


def generate_corpus(cfg: SimConfig) -> list[Scene]:
    return [generate_scene(cfg, scene_rng(cfg.seed, i), scene_id=i) for i in range(cfg.n_scenes)]


# --- line-delimited JSON corpus ------------------------------------------------


def _camera_record(cam: CameraPose) -> dict:
    return {
        "lat_deg": float(np.degrees(cam.position.lat)),
        "lng_deg": float(np.degrees(cam.position.lng)),
        "heading_deg": float(np.degrees(cam.heading)),
        "height_m": float(cam.height),
    }


def scene_to_record(scene: Scene) -> dict:
    return {
        "version": SCENE_FORMAT_VERSION,
        "scene_id": scene.scene_id,
        "image_w": scene.image_w,
        "image_h": scene.image_h,
        "objects": [
            {"id": o.object_id, "lat_deg": float(np.degrees(o.position.lat)),
             "lng_deg": float(np.degrees(o.position.lng))}
            for o in scene.objects
        ],
        "cameras": [_camera_record(c) for c in scene.cameras],
        "true_cameras": [_camera_record(c) for c in scene.true_cameras],
        "detections": [
            {
                "view": d.view_id,
                "bbox": [float(d.bbox.x_min), float(d.bbox.y_min), float(d.bbox.x_max), float(d.bbox.y_max)],
                "score": float(d.score),
                "feature": [float(f) for f in d.feature],
                "gt_object_id": d.gt_object_id,
            }
            for d in scene.detections
        ],
    }


def write_scenes(scenes: Iterable[Scene], path, provenance: Optional[dict] = None) -> None:
    """One JSON record per line; ``provenance`` is stored on every record and ignored on read."""
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            rec = scene_to_record(scene)
            if provenance:
                rec["provenance"] = provenance
            fh.write(json.dumps(rec, separators=(",", ":")))
            fh.write("\n")


class _Fields:
    """Field access that reports the line and dotted path of anything missing."""

    def __init__(self, lineno: int):
        self.lineno = lineno

    def fail(self, where: str, msg: str):
        raise SchemaError(f"line {self.lineno}: field '{where}': {msg}")

    def get(self, rec, key, where, kind):
        path = f"{where}.{key}" if where else key
        if not isinstance(rec, dict):
            self.fail(where or "<root>", "expected an object")
        if key not in rec:
            self.fail(path, "missing required field")
        value = rec[key]
        if kind == "number":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.fail(path, f"expected a number, got {type(value).__name__}")
            return float(value)
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                self.fail(path, f"expected an integer, got {type(value).__name__}")
            return value
        if kind == "list":
            if not isinstance(value, list):
                self.fail(path, f"expected a list, got {type(value).__name__}")
            return value
        return value


def _read_camera(f: _Fields, rec, where) -> CameraPose:
    height = f.get(rec, "height_m", where, "number")
    if height <= 0:
        f.fail(f"{where}.height_m", "must be positive")
    pos = GeoPoint(float(np.radians(f.get(rec, "lat_deg", where, "number"))),
                   wrap_longitude(np.radians(f.get(rec, "lng_deg", where, "number"))))
    return CameraPose(pos, float(np.radians(f.get(rec, "heading_deg", where, "number"))), height)


def record_to_scene(rec: dict, lineno: int = 1) -> Scene:
    f = _Fields(lineno)
    version = f.get(rec, "version", "", "str")
    if version != SCENE_FORMAT_VERSION:
        f.fail("version", f"unsupported version {version!r}, expected {SCENE_FORMAT_VERSION!r}")
    scene_id = f.get(rec, "scene_id", "", "int")
    W = f.get(rec, "image_w", "", "int")
    H = f.get(rec, "image_h", "", "int")
    objects = []
    for k, o in enumerate(f.get(rec, "objects", "", "list")):
        w = f"objects[{k}]"
        oid = f.get(o, "id", w, "int")
        objects.append(SceneObject(oid, GeoPoint(
            float(np.radians(f.get(o, "lat_deg", w, "number"))),
            wrap_longitude(np.radians(f.get(o, "lng_deg", w, "number"))))))
    cameras = [_read_camera(f, c, f"cameras[{k}]") for k, c in enumerate(f.get(rec, "cameras", "", "list"))]
    true_raw = rec.get("true_cameras", None)
    true_cams = cameras if true_raw is None else [
        _read_camera(f, c, f"true_cameras[{k}]") for k, c in enumerate(f.get(rec, "true_cameras", "", "list"))]
    known_ids = {o.object_id for o in objects}
    detections = []
    dim = None
    for k, d in enumerate(f.get(rec, "detections", "", "list")):
        w = f"detections[{k}]"
        view = f.get(d, "view", w, "int")
        if not 0 <= view < len(cameras):
            f.fail(f"{w}.view", f"view {view} has no camera")
        bbox = f.get(d, "bbox", w, "list")
        if len(bbox) != 4 or not all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in bbox):
            f.fail(f"{w}.bbox", "expected four numbers")
        try:
            box = BoundingBox(*map(float, bbox))
        except ValueError as exc:
            f.fail(f"{w}.bbox", str(exc))
        score = f.get(d, "score", w, "number")
        if not 0 <= score <= 1:
            f.fail(f"{w}.score", "must lie in [0, 1]")
        feature = f.get(d, "feature", w, "list")
        if dim is None:
            dim = len(feature)
        elif len(feature) != dim:
            f.fail(f"{w}.feature", f"dimension {len(feature)} differs from {dim}")
        if "gt_object_id" not in d:
            f.fail(f"{w}.gt_object_id", "missing required field (use null for background)")
        gid = d["gt_object_id"]
        if gid is not None and (isinstance(gid, bool) or not isinstance(gid, int) or gid not in known_ids):
            f.fail(f"{w}.gt_object_id", f"{gid!r} does not name a scene object")
        detections.append(Detection(box, score, np.array(feature, dtype=float), cameras[view], W, H, view, gid))
    return Scene(scene_id, objects, cameras, true_cams, detections, W, H)


def read_scenes(path) -> list[Scene]:
    scenes = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            scenes.append(record_to_scene(rec, lineno))
    return scenes


def scenes_equal(a: Sequence[Scene], b: Sequence[Scene]) -> bool:
    """Exact structural equality of two scene lists (via their serialized records)."""
    return len(a) == len(b) and all(scene_to_record(x) == scene_to_record(y) for x, y in zip(a, b))
