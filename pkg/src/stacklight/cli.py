"""Command-line entry point: dataset generation, training, monitoring runs,
evaluation and the robustness sweep.

One binary with five subcommands (synth, train, run, eval, sweep). Options
come from an optional JSON config file plus flags; flags win. All randomness
funnels through --seed, and re-running any subcommand with identical inputs
and seed produces byte-identical artifacts under --out.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import deque
from pathlib import Path

import numpy as np

from . import classify, detect, evaluation, imaging, synth, tracker
from .imaging import BoundingBox, Image, crop, read_image
from .labels import CLASS_NAMES, LightCombination, parse_label
from .perturb import SweepGrid, default_sweep_grid


def _write_json(path: Path, obj) -> None:
    path.write_text(
        json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _load_config(path: str | None, allowed: set[str], command: str) -> dict:
    if not path:
        return {}
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise SystemExit(f"error: config file must hold a JSON object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise SystemExit(
            f"error: unknown config key(s) for {command}: {', '.join(sorted(unknown))}"
        )
    return obj


def _resolve(config: dict, args: argparse.Namespace, key: str, default):
    """Flag value if given, else config value, else default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _out_dir(args) -> Path:
    if not args.out:
        raise SystemExit("error: --out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- synth ---------------------------------------------------------------------

_SYNTH_KEYS = {
    "seed", "frames", "towers", "frame_width", "frame_height", "mix",
    "occluder_events_per_1k",
}


def cmd_synth(args) -> int:
    config = _load_config(args.config, _SYNTH_KEYS, "synth")
    out = _out_dir(args)
    gen = synth.GenerationConfig(
        n_frames=int(_resolve(config, args, "frames", 100)),
        seed=int(_resolve(config, args, "seed", 0)),
        n_towers=int(_resolve(config, args, "towers", 5)),
        frame_w=int(_resolve(config, args, "frame_width", 1248)),
        frame_h=int(_resolve(config, args, "frame_height", 832)),
        mix=str(_resolve(config, args, "mix", "slcd")),
        occluder_events_per_1k=float(
            _resolve(config, args, "occluder_events_per_1k", 4.0)
        ),
    )
    entries = synth.generate_dataset(gen, out)
    _write_json(
        out / "generation.json",
        {
            "n_frames": gen.n_frames,
            "seed": gen.seed,
            "n_towers": gen.n_towers,
            "frame_w": gen.frame_w,
            "frame_h": gen.frame_h,
            "mix": gen.mix,
            "occluder_events_per_1k": gen.occluder_events_per_1k,
        },
    )
    print(f"wrote {len(entries)} frames and manifest.jsonl to {out}")
    return 0


# --- shared dataset plumbing ------------------------------------------------------


def _crop_entries(manifest_entries: list[dict], include_ambiguous: bool) -> list[dict]:
    """Flatten a frame manifest into per-crop entries with stable source ids."""
    out = []
    for entry in manifest_entries:
        stem = Path(entry["frame"]).stem
        for t in entry["towers"]:
            if t.get("occluded"):
                continue
            if t.get("ambiguous") and not include_ambiguous:
                continue
            out.append(
                {
                    "frame": entry["frame"],
                    "box": t["box"],
                    "label": t["label"],
                    "fade": t.get("fade", 1.0),
                    "source": f"{stem}:{t['id']}",
                }
            )
        for i, box in enumerate(entry.get("others", [])):
            out.append(
                {
                    "frame": entry["frame"],
                    "box": box,
                    "label": "Other",
                    "fade": 1.0,
                    "source": f"{stem}:other{i}",
                }
            )
    return out


def _materialize(crop_entry_lists, dataset_dir: Path, seed: int) -> list[list[synth.CropExample]]:
    """Load frames once and cut the requested crops (tower crops get margins)."""
    frame_cache: dict[str, Image] = {}

    def _frame(rel: str) -> Image:
        if rel not in frame_cache:
            frame_cache[rel] = read_image(dataset_dir / rel)
        return frame_cache[rel]

    out = []
    for entries in crop_entry_lists:
        examples = []
        for e in entries:
            frame = _frame(e["frame"])
            box = BoundingBox.from_list(e["box"])
            if e["label"] == "Other":
                img = crop(frame, box)
            else:
                rng = np.random.default_rng([seed, 7, _stable_hash(e["source"])])
                img = synth.crop_light(frame, box, rng)
            examples.append(
                synth.CropExample(
                    image=img,
                    label=parse_label(e["label"]),
                    fade=float(e["fade"]),
                    source=e["source"],
                )
            )
        out.append(examples)
    return out


def _stable_hash(text: str) -> int:
    h = 2166136261
    for ch in text.encode("utf-8"):
        h = ((h ^ ch) * 16777619) % (1 << 32)
    return h


# --- train ---------------------------------------------------------------------

_TRAIN_KEYS = {
    "seed", "data", "optimizer", "epochs", "batch_size", "lr", "momentum",
    "l2", "include_ambiguous", "ratios",
}


def cmd_train(args) -> int:
    config = _load_config(args.config, _TRAIN_KEYS, "train")
    out = _out_dir(args)
    data_dir = Path(_resolve(config, args, "data", None) or "")
    if not data_dir.name:
        raise SystemExit("error: train needs --data pointing at a generated dataset")
    seed = int(_resolve(config, args, "seed", 0))
    entries = synth.read_manifest(data_dir / "manifest.jsonl")
    crops = _crop_entries(entries, bool(config.get("include_ambiguous", False)))
    ratios = tuple(config.get("ratios", (0.6, 0.2, 0.2)))
    train_e, val_e, test_e = evaluation.split_dataset(crops, ratios, seed)
    split_ids = [sorted(e["source"] for e in part) for part in (train_e, val_e, test_e)]
    if set(split_ids[0]) & set(split_ids[1]) or set(split_ids[0]) & set(split_ids[2]):
        raise SystemExit("error: refusing overlapping train/validation/test splits")
    train_x, val_x = _materialize([train_e, val_e], data_dir, seed)
    cfg = classify.TrainConfig(
        optimizer=str(_resolve(config, args, "optimizer", "sgdm")),
        lr=_resolve(config, args, "lr", None),
        momentum=float(_resolve(config, args, "momentum", 0.9)),
        epochs=int(_resolve(config, args, "epochs", 30)),
        batch_size=int(_resolve(config, args, "batch_size", 64)),
        seed=seed,
        l2=float(_resolve(config, args, "l2", 1e-4)),
    )
    model, history = classify.train(train_x, cfg, val_examples=val_x)
    classify.save_model(model, out / "model.json")
    _write_text(out / "history.csv", classify.history_to_csv(history))
    _write_json(
        out / "split.json",
        {"train": split_ids[0], "validation": split_ids[1], "test": split_ids[2]},
    )
    final = history[-1]
    print(
        f"trained {cfg.optimizer} for {cfg.epochs} epochs: "
        f"train_loss={final['train_loss']:.4f} val_acc={final.get('val_acc', float('nan')):.4f}"
    )
    return 0


# --- run -----------------------------------------------------------------------

_RUN_KEYS = {
    "seed", "frames", "model", "fps", "detection_interval_s", "smoothing_window",
    "occlusion_iou", "uncertain_threshold", "detector_params",
}


def cmd_run(args) -> int:
    config = _load_config(args.config, _RUN_KEYS, "run")
    out = _out_dir(args)
    frames_dir = Path(_resolve(config, args, "frames", None) or "")
    if not frames_dir.name:
        raise SystemExit("error: run needs --frames pointing at a frame directory")
    model_path = _resolve(config, args, "model", None)
    if not model_path:
        raise SystemExit("error: run needs --model")
    model = classify.load_model(model_path)
    tcfg = tracker.TrackerConfig(
        detection_interval_s=float(_resolve(config, args, "detection_interval_s", 0.2)),
        fps=float(_resolve(config, args, "fps", 22.0)),
        smoothing_window=int(_resolve(config, args, "smoothing_window", 5)),
        occlusion_iou=float(_resolve(config, args, "occlusion_iou", 0.5)),
    )
    threshold = float(_resolve(config, args, "uncertain_threshold", 0.6))
    params = detect.SpotlightParams.from_json(config.get("detector_params", {}))
    detector = detect.SpotlightDetector(params)

    frame_paths = sorted(frames_dir.glob("*.png")) + sorted(frames_dir.glob("*.ppm"))
    machine = tracker.MachineTracker(tcfg)
    windows: dict[str, deque] = {}
    if frame_paths:
        first = read_image(frame_paths[0])
        initial = detect.detect_frame(first, detector)
        boxes = sorted((d.box for d in initial), key=lambda b: b.x)
        machine.register({f"machine_{i}": b for i, b in enumerate(boxes)})
        windows = {m: deque(maxlen=tcfg.smoothing_window) for m in machine.boxes}
    for k, path in enumerate(frame_paths):
        frame = read_image(path) if k else first
        timestamp = k / tcfg.fps
        labels = {}
        for m, box in machine.boxes.items():
            label, scores = classify.predict(model, crop(frame, box))
            windows[m].append(scores)
            smoothed = classify.temporal_smooth(list(windows[m]), threshold)
            labels[m] = smoothed.label
        detections = (
            detect.detect_frame(frame, detector) if machine.detection_due(timestamp) else None
        )
        machine.step(k, timestamp, labels, detections)
    report = machine.report()
    _write_json(out / "report.json", report.to_json_obj())
    _write_text(out / "report.csv", report.to_csv_text())
    _write_text(out / "events.jsonl", tracker.events_to_jsonl(machine.ledger))
    print(
        f"tracked {len(machine.boxes)} machine(s) over {len(frame_paths)} frames "
        f"({report.elapsed_seconds:.2f} s)"
    )
    return 0


# --- eval ----------------------------------------------------------------------

_EVAL_KEYS = {
    "seed", "kind", "data", "model", "iou_threshold", "recall_min", "fp_rate_max",
    "accuracy_min", "ratios", "detector_params",
}


def _scale_box(box: BoundingBox, sx: float, sy: float) -> BoundingBox:
    x = int(round(box.x * sx))
    y = int(round(box.y * sy))
    w = max(1, int(round(box.w * sx)))
    h = max(1, int(round(box.h * sy)))
    return BoundingBox(x, y, w, h)


def cmd_eval(args) -> int:
    config = _load_config(args.config, _EVAL_KEYS, "eval")
    out = _out_dir(args)
    kind = str(_resolve(config, args, "kind", "detection"))
    data_dir = Path(_resolve(config, args, "data", None) or "")
    if not data_dir.name:
        raise SystemExit("error: eval needs --data pointing at a generated dataset")
    seed = int(_resolve(config, args, "seed", 0))
    entries = synth.read_manifest(data_dir / "manifest.jsonl")
    failures: list[str] = []

    if kind == "detection":
        iou_threshold = float(_resolve(config, args, "iou_threshold", 0.5))
        params = detect.SpotlightParams.from_json(config.get("detector_params", {}))
        detector = detect.SpotlightDetector(params)
        grid = detect.TileGrid()
        overall = evaluation.DetectionMetrics()
        boundary = evaluation.DetectionMetrics()
        interior = evaluation.DetectionMetrics()
        for entry in entries:
            frame = read_image(data_dir / entry["frame"])
            sx = grid.working_w / frame.width
            sy = grid.working_h / frame.height
            gt, ignore = evaluation.frame_ground_truth(entry)
            gt = [_scale_box(b, sx, sy) for b in gt]
            ignore = [_scale_box(b, sx, sy) for b in ignore]
            dets = detect.detect_frame(frame, detector)
            metrics = evaluation.match_detections(gt, dets, iou_threshold, ignore)
            overall = overall + metrics
            gt_b = [b for b in gt if evaluation.straddles_tile_boundary(b, grid)]
            gt_i = [b for b in gt if not evaluation.straddles_tile_boundary(b, grid)]
            if gt_b:
                boundary = boundary + evaluation.match_detections(
                    gt_b, dets, iou_threshold, ignore + gt_i
                )
            if gt_i:
                interior = interior + evaluation.match_detections(
                    gt_i, dets, iou_threshold, ignore + gt_b
                )
        payload = {
            "overall": overall.to_json_obj(),
            "boundary_ground_truth": boundary.to_json_obj(),
            "interior_ground_truth": interior.to_json_obj(),
        }
        _write_json(out / "detection_metrics.json", payload)
        _write_text(
            out / "detection_metrics.csv",
            "metric,value\n"
            + "".join(f"{k},{v!r}\n" for k, v in overall.to_json_obj().items()),
        )
        print(
            f"detection: recall={overall.recall:.4f} fp/det={overall.fp_per_detection:.5f} "
            f"(tp={overall.true_positives} fn={overall.false_negatives} fp={overall.false_positives})"
        )
        if args.check:
            recall_min = float(_resolve(config, args, "recall_min", 0.99))
            fp_max = float(_resolve(config, args, "fp_rate_max", 0.002))
            if overall.recall < recall_min:
                failures.append(f"recall {overall.recall:.4f} < {recall_min}")
            if overall.fp_per_detection > fp_max:
                failures.append(
                    f"fp/detection {overall.fp_per_detection:.5f} > {fp_max}"
                )
    elif kind == "classification":
        model_path = _resolve(config, args, "model", None)
        if not model_path:
            raise SystemExit("error: classification eval needs --model")
        model = classify.load_model(model_path)
        ratios = tuple(config.get("ratios", (0.6, 0.2, 0.2)))
        crops = _crop_entries(entries, include_ambiguous=False)
        train_e, _, test_e = evaluation.split_dataset(crops, ratios, seed)
        (test_x,) = _materialize([test_e], data_dir, seed)
        matrix = evaluation.evaluate_classifier(
            model, test_x, train_sources={e["source"] for e in train_e}
        )
        _write_json(out / "confusion.json", matrix.to_json_obj())
        _write_text(out / "confusion.csv", matrix.to_csv_text())
        print(f"classification: accuracy={matrix.accuracy:.4f} on {matrix.total} crops")
        if args.check:
            accuracy_min = float(_resolve(config, args, "accuracy_min", 0.99))
            if matrix.accuracy < accuracy_min:
                failures.append(f"accuracy {matrix.accuracy:.4f} < {accuracy_min}")
    else:
        raise SystemExit(f"error: unknown eval kind {kind!r} (detection or classification)")

    if failures:
        for f in failures:
            print(f"CHECK FAILED: {f}", file=sys.stderr)
        return 1
    return 0


# --- sweep ---------------------------------------------------------------------

_SWEEP_KEYS = {"seed", "data", "model", "max_crops", "ratios"}


def cmd_sweep(args) -> int:
    config = _load_config(args.config, _SWEEP_KEYS, "sweep")
    out = _out_dir(args)
    data_dir = Path(_resolve(config, args, "data", None) or "")
    if not data_dir.name:
        raise SystemExit("error: sweep needs --data pointing at a generated dataset")
    model_path = _resolve(config, args, "model", None)
    if not model_path:
        raise SystemExit("error: sweep needs --model")
    model = classify.load_model(model_path)
    seed = int(_resolve(config, args, "seed", 0))
    entries = synth.read_manifest(data_dir / "manifest.jsonl")
    crops = _crop_entries(entries, include_ambiguous=False)
    ratios = tuple(config.get("ratios", (0.6, 0.2, 0.2)))
    _, _, test_e = evaluation.split_dataset(crops, ratios, seed)
    max_crops = _resolve(config, args, "max_crops", None)
    if max_crops is not None and len(test_e) > int(max_crops):
        rng = np.random.default_rng([seed, 11])
        keep = rng.choice(len(test_e), size=int(max_crops), replace=False)
        test_e = [test_e[i] for i in sorted(keep)]
    (test_x,) = _materialize([test_e], data_dir, seed)
    result = evaluation.run_sweep(model, test_x, default_sweep_grid())
    _write_text(out / "sweep.csv", result.to_csv_text())
    _write_json(out / "sweep.json", result.to_json_obj())
    print(f"sweep: {len(result.cells)} cells on {len(test_x)} crops")
    if args.check:
        ok, problems = evaluation.check_sweep_shape(result)
        if not ok:
            for p in problems:
                print(f"CHECK FAILED: {p}", file=sys.stderr)
            return 1
    return 0


# --- argument parsing -------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stacklight",
        description="Signal-light tower monitoring: synthetic data, training, "
        "tracking runs, evaluation and robustness sweeps.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master random seed (default 0)")
    common.add_argument("--config", type=str, default=None, help="JSON config file; flags override it")
    common.add_argument("--out", type=str, default=None, help="output directory (required)")
    common.add_argument(
        "--check",
        action="store_true",
        help="exit nonzero when an evaluation threshold is violated",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--frames", type=int, default=None, help="number of frames (default 100)")
    p.add_argument("--towers", type=int, default=None, help="towers per scene (default 5)")
    p.add_argument("--frame-width", dest="frame_width", type=int, default=None)
    p.add_argument("--frame-height", dest="frame_height", type=int, default=None)
    p.add_argument("--mix", type=str, default=None, choices=("slcd", "avs"),
                   help="target label mixture (default slcd)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train the classifier on a dataset")
    p.add_argument("--data", type=str, default=None, help="dataset directory from `synth`")
    p.add_argument("--optimizer", type=str, default=None, choices=("sgdm", "adam"))
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--l2", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", parents=[common], help="track machine states over a frame directory")
    p.add_argument("--frames", type=str, default=None, help="directory of numbered frames")
    p.add_argument("--model", type=str, default=None, help="trained model file")
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--detection-interval-s", dest="detection_interval_s", type=float, default=None)
    p.add_argument("--smoothing-window", dest="smoothing_window", type=int, default=None)
    p.add_argument("--occlusion-iou", dest="occlusion_iou", type=float, default=None)
    p.add_argument("--uncertain-threshold", dest="uncertain_threshold", type=float, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", parents=[common], help="evaluate detection or classification")
    p.add_argument("--kind", type=str, default=None, choices=("detection", "classification"))
    p.add_argument("--data", type=str, default=None, help="dataset directory from `synth`")
    p.add_argument("--model", type=str, default=None, help="model file (classification)")
    p.add_argument("--iou-threshold", dest="iou_threshold", type=float, default=None)
    p.add_argument("--recall-min", dest="recall_min", type=float, default=None)
    p.add_argument("--fp-rate-max", dest="fp_rate_max", type=float, default=None)
    p.add_argument("--accuracy-min", dest="accuracy_min", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="run the size-by-degradation sweep")
    p.add_argument("--data", type=str, default=None, help="dataset directory from `synth`")
    p.add_argument("--model", type=str, default=None, help="trained model file")
    p.add_argument("--max-crops", dest="max_crops", type=int, default=None,
                   help="cap the number of test crops (seeded subsample)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
