"""Command line: ``geograph {simulate,train,eval,locate}``.

Settings come from built-in defaults, then an optional flat JSON file given
with ``--config``, then explicit flags. Every output embeds the seed and a
digest of the effective settings (file paths excluded).

Exit codes: 0 ok, 2 configuration error, 3 bad input data, 4 missing file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import SchemaError
from .geoloc import init_refine_net
from .gnn import TrainConfig, init_model
from .graph import POSE_BLOCK_DIM
from .pipeline import GraphOptions, InferenceOptions, evaluate_results, infer_scene, train
from .simulator import SimConfig, generate_corpus, read_scenes, write_scenes

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_MISSING = 0, 2, 3, 4

# name -> (type, default); the config file uses exactly these keys
SETTINGS: dict[str, tuple[type, object]] = {
    "seed": (int, 0),
    "scenes": (int, 100),
    "views_per_scene": (int, 4),
    "objects_min": (int, 2),
    "objects_max": (int, 5),
    "area_extent_m": (float, 20.0),
    "camera_spacing_m": (float, 8.0),
    "camera_height_m": (float, 2.5),
    "feature_dim": (int, 32),
    "feature_noise": (float, 0.3),
    "pose_noise_sigma_m": (float, 0.5),
    "heading_noise_sigma_rad": (float, 0.01),
    "bbox_noise_px": (float, 2.0),
    "false_positive_rate": (float, 0.1),
    "missed_detection_rate": (float, 0.1),
    "image_w": (int, 2048),
    "image_h": (int, 1024),
    "epochs": (int, 10),
    "lr": (float, 1e-3),
    "dropout": (float, 0.2),
    "hidden_dim": (int, 64),
    "alpha": (float, 0.25),
    "gamma": (float, 2.0),
    "refine_weight": (float, 1.0),
    "edge_threshold": (float, 0.5),
    "min_score": (float, 0.3),
    "nms_iou": (float, 0.5),
    "pose_scale_m": (float, 7.0),
    "include_pose": (bool, True),
    "out": (str, None),
    "checkpoint": (str, None),
    "corpus": (str, None),
}
PATH_KEYS = ("out", "checkpoint", "corpus")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _coerce(key: str, value):
    kind = SETTINGS[key][0]
    if value is None and key in PATH_KEYS:
        return None
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(value, str):
        return value
    raise CliError(EXIT_CONFIG, f"config field '{key}' must be of type {kind.__name__}, got {value!r}")


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = {k: default for k, (_, default) in SETTINGS.items()}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(EXIT_MISSING, f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config file is not valid JSON: {exc.msg}") from exc
        if not isinstance(loaded, dict):
            raise CliError(EXIT_CONFIG, "config file must hold a flat JSON object")
        for key, value in loaded.items():
            if key not in SETTINGS:
                raise CliError(EXIT_CONFIG, f"unknown config field '{key}'")
            settings[key] = _coerce(key, value)
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = _coerce(key, value)
    return settings


def config_digest(settings: dict) -> str:
    payload = {k: v for k, v in sorted(settings.items()) if k not in PATH_KEYS}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def sim_config(settings: dict) -> SimConfig:
    try:
        return SimConfig(
            seed=settings["seed"],
            n_scenes=settings["scenes"],
            views_per_scene=settings["views_per_scene"],
            objects_per_scene_range=(settings["objects_min"], settings["objects_max"]),
            area_extent_m=settings["area_extent_m"],
            camera_spacing_m=settings["camera_spacing_m"],
            camera_height_m=settings["camera_height_m"],
            feature_dim=settings["feature_dim"],
            feature_noise_sigma=settings["feature_noise"],
            pose_noise_sigma_m=settings["pose_noise_sigma_m"],
            heading_noise_sigma_rad=settings["heading_noise_sigma_rad"],
            bbox_noise_px=settings["bbox_noise_px"],
            false_positive_rate=settings["false_positive_rate"],
            missed_detection_rate=settings["missed_detection_rate"],
            image_w=settings["image_w"],
            image_h=settings["image_h"],
        )
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid simulation config: {exc}") from exc


def _check_range(settings: dict, key: str, lo: float, hi: float, hi_open: bool = False):
    v = settings[key]
    if v < lo or v > hi or (hi_open and v == hi):
        raise CliError(EXIT_CONFIG, f"config field '{key}' out of range: {v}")


def _require(settings: dict, key: str) -> str:
    if not settings[key]:
        raise CliError(EXIT_CONFIG, f"missing required setting '{key}' (flag --{key})")
    return settings[key]


def _input_file(settings: dict, key: str) -> Path:
    path = Path(_require(settings, key))
    if not path.exists():
        raise CliError(EXIT_MISSING, f"{key} file not found: {path}")
    return path


def _read_corpus(path: Path):
    try:
        return read_scenes(path)
    except SchemaError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(EXIT_INPUT, f"cannot read corpus {path}: {exc}") from exc


def _load_checkpoint(path: Path):
    try:
        return load_checkpoint(path)
    except SchemaError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}") from exc


def cmd_simulate(settings: dict) -> int:
    cfg = sim_config(settings)
    out = _require(settings, "out")
    scenes = generate_corpus(cfg)
    write_scenes(scenes, out, {"seed": cfg.seed, "config_digest": config_digest(settings)})
    n_obj = sum(len(s.objects) for s in scenes)
    n_det = sum(len(s.detections) for s in scenes)
    print(f"scenes={len(scenes)} objects={n_obj} detections={n_det} "
          f"seed={cfg.seed} config_digest={config_digest(settings)}")
    return EXIT_OK


def cmd_train(settings: dict) -> int:
    corpus = _input_file(settings, "corpus")
    out = settings["out"] or settings["checkpoint"]
    if not out:
        raise CliError(EXIT_CONFIG, "missing required setting 'out' (flag -o/--out)")
    _check_range(settings, "dropout", 0.0, 1.0, hi_open=True)
    _check_range(settings, "edge_threshold", 0.0, 1.0)
    if settings["lr"] < 0 or settings["epochs"] < 0 or settings["hidden_dim"] < 1:
        raise CliError(EXIT_CONFIG, "lr and epochs must be non-negative and hidden_dim positive")
    scenes = _read_corpus(corpus)
    dims = {len(d.feature) for s in scenes for d in s.detections}
    if len(dims) > 1:
        raise CliError(EXIT_INPUT, f"corpus mixes feature dimensions {sorted(dims)}")
    feature_dim = dims.pop() if dims else settings["feature_dim"]
    seed = settings["seed"]
    digest = config_digest(settings)
    cfg = TrainConfig(learning_rate=settings["lr"], epochs=settings["epochs"], alpha=settings["alpha"],
                      gamma=settings["gamma"], seed=seed, edge_threshold=settings["edge_threshold"],
                      refine_weight=settings["refine_weight"])
    graph_options = GraphOptions(pose_scale_m=settings["pose_scale_m"], include_pose=settings["include_pose"])
    model = init_model(feature_dim + POSE_BLOCK_DIM, settings["hidden_dim"], seed=seed,
                       dropout_p=settings["dropout"])
    net = init_refine_net(seed)
    log, optimizer = train(model, net, scenes, cfg, graph_options)
    save_checkpoint(out, model, net, optimizer, asdict(graph_options),
                    meta={"seed": seed, "config_digest": digest, "settings": _public(settings)})
    buf = io.StringIO()
    fields = ["epoch", "steps", "edge_loss", "refine_loss", "total_loss", "edge_accuracy", "seed", "config_digest"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in log:
        writer.writerow({**row, "seed": seed, "config_digest": digest})
    Path(str(out) + ".train.csv").write_text(buf.getvalue(), encoding="utf-8")
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _public(settings: dict) -> dict:
    return {k: v for k, v in settings.items() if k not in PATH_KEYS}


def _run_inference(settings: dict):
    ckpt = _load_checkpoint(_input_file(settings, "checkpoint"))
    scenes = _read_corpus(_input_file(settings, "corpus"))
    _check_range(settings, "edge_threshold", 0.0, 1.0)
    options = InferenceOptions(settings["min_score"], settings["nms_iou"], settings["edge_threshold"])
    graph_options = GraphOptions(**ckpt.graph_options)
    for s in scenes:
        for d in s.detections:
            if len(d.feature) + POSE_BLOCK_DIM != ckpt.model.in_dim:
                raise CliError(EXIT_INPUT, f"scene {s.scene_id}: feature dimension {len(d.feature)} "
                                           f"does not match the checkpoint")
    results = [infer_scene(s, ckpt.model, ckpt.refine_net, options, graph_options) for s in scenes]
    return scenes, results, ckpt


def cmd_eval(settings: dict) -> int:
    out = _require(settings, "out")
    scenes, results, ckpt = _run_inference(settings)
    report, rows = evaluate_results(results, scenes, settings["edge_threshold"])
    report["n_scenes"] = len(scenes)
    report["config_digest"] = config_digest(settings)
    report["seed"] = settings["seed"]
    report["checkpoint_digest"] = ckpt.meta.get("config_digest")
    Path(out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    csv_path = Path(out).with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fields = ["scene_id", "n_detections", "n_components", "tp", "fp", "fn", "average_precision",
                  "pairwise_f1", "geo_mae", "n_matched"]
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    reid, geo = report["reid"], report["geo"]
    print(f"pairwise_f1={reid['pairwise_f1']:.4f} reid_f1={reid['f1']:.4f} "
          f"mAP={reid['mean_average_precision']:.4f} geo_mae_m={geo['mae_m']:.4f} "
          f"config_digest={report['config_digest']}")
    return EXIT_OK


def locate_rows(scenes, results) -> list[str]:
    rows = []
    for scene, res in zip(scenes, results):
        for comp, est in zip(res.components, res.estimates):
            if est is None:
                continue
            per_view = ";".join(f"{np.degrees(p.lat):.7f}:{np.degrees(p.lng):.7f}" for p in est.per_view_estimates)
            nodes = ",".join(str(i) for i in sorted(comp))
            rows.append(f"{scene.scene_id}\t{nodes}\t{per_view}\t"
                        f"{np.degrees(est.final.lat):.7f}\t{np.degrees(est.final.lng):.7f}")
    return rows


def cmd_locate(settings: dict) -> int:
    scenes, results, _ = _run_inference(settings)
    lines = ["# scene_id\tnodes\tper_view_lat:lng\tlat_deg\tlng_deg"
             f"\tseed={settings['seed']} config_digest={config_digest(settings)}"]
    lines += locate_rows(scenes, results)
    text = "\n".join(lines) + "\n"
    if settings["out"]:
        Path(settings["out"]).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "locate": cmd_locate}


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes"):
        return True
    if lowered in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geograph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat JSON settings file; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--scenes", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--dropout", type=float)
        p.add_argument("--edge-threshold", dest="edge_threshold", type=float)
        p.add_argument("--feature-noise", dest="feature_noise", type=float)
        p.add_argument("--min-score", dest="min_score", type=float)
        p.add_argument("--nms-iou", dest="nms_iou", type=float)
        p.add_argument("--include-pose", dest="include_pose", type=_bool)
        p.add_argument("-o", "--out")
        p.add_argument("--checkpoint")
        p.add_argument("--corpus")
    return parser




def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](settings)
    except CliError as exc:
        print(f"geograph {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
