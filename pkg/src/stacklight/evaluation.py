"""Experiment harness: detection TP/FN/FP accounting, stratified dataset
splitting, class rebalancing by jittered re-cropping, classifier evaluation
with confusion matrices, and the size-by-degradation robustness sweep.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .classify import SoftmaxModel, featurize, forward_batch
from .detect import Detection, TileGrid
from .imaging import BoundingBox, Image, iou, resize_bicubic
from .labels import CLASS_NAMES, LightCombination
from .perturb import SweepGrid, apply, spec_label
from .synth import CropExample


@dataclass(frozen=True)
class DetectionMetrics:
    """Greedy one-to-one matching counts. TP + FN always equals |ground truth|."""

    true_positives: int = 0
    false_negatives: int = 0
    false_positives: int = 0
    n_ignored: int = 0

    @property
    def recall(self) -> float:
        total = self.true_positives + self.false_negatives
        return self.true_positives / total if total else 1.0

    @property
    def fp_per_detection(self) -> float:
        counted = self.true_positives + self.false_positives
        return self.false_positives / counted if counted else 0.0

    def __add__(self, other: "DetectionMetrics") -> "DetectionMetrics":
        return DetectionMetrics(
            self.true_positives + other.true_positives,
            self.false_negatives + other.false_negatives,
            self.false_positives + other.false_positives,
            self.n_ignored + other.n_ignored,
        )

    def to_json_obj(self) -> dict:
        return {
            "true_positives": self.true_positives,
            "false_negatives": self.false_negatives,
            "false_positives": self.false_positives,
            "ignored_detections": self.n_ignored,
            "recall": self.recall,
            "fp_per_detection": self.fp_per_detection,
        }


def greedy_matches(
    gt_boxes: list[BoundingBox],
    detections: list[Detection],
    iou_threshold: float = 0.5,
) -> list[tuple[int, int]]:
    """(detection index, gt index) pairs from score-ordered greedy matching."""
    order = sorted(
        range(len(detections)), key=lambda i: (-detections[i].score, detections[i].box)
    )
    taken = [False] * len(gt_boxes)
    pairs = []
    for di in order:
        best_iou, best_gi = 0.0, -1
        for gi, gt in enumerate(gt_boxes):
            if taken[gi]:
                continue
            value = iou(detections[di].box, gt)
            if value >= iou_threshold and value > best_iou:
                best_iou, best_gi = value, gi
        if best_gi >= 0:
            taken[best_gi] = True
            pairs.append((di, best_gi))
    return pairs


def match_detections(
    gt_boxes,
    detections: list[Detection],
    iou_threshold: float = 0.5,
    ignore_boxes=(),
) -> DetectionMetrics:
    """Score detections against ground truth at an IoU threshold.

    Unmatched ground truth counts as a false negative; an unmatched detection
    counts as a false positive unless it covers an ignore box (e.g. an
    occluded tower), in which case it is discarded from the accounting.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("IoU threshold must be in (0, 1]")
    gt_boxes = list(gt_boxes)
    pairs = greedy_matches(gt_boxes, detections, iou_threshold)
    matched_dets = {di for di, _ in pairs}
    tp = len(pairs)
    fn = len(gt_boxes) - tp
    fp = 0
    ignored = 0
    for di, det in enumerate(detections):
        if di in matched_dets:
            continue
        if any(iou(det.box, ib) >= iou_threshold for ib in ignore_boxes):
            ignored += 1
        else:
            fp += 1
    return DetectionMetrics(tp, fn, fp, ignored)


def straddles_tile_boundary(box: BoundingBox, grid: TileGrid = TileGrid()) -> bool:
    """True when a working-frame box crosses a tile edge (split-detection risk)."""
    for k in range(grid.tile, grid.working_w, grid.tile):
        if box.x < k < box.x2:
            return True
    for k in range(grid.tile, grid.working_h, grid.tile):
        if box.y < k < box.y2:
            return True
    return False


def frame_ground_truth(entry: dict) -> tuple[list[BoundingBox], list[BoundingBox]]:
    """(gt boxes, ignore boxes) for one manifest entry: occluded towers are
    excluded from ground truth but still shield matching detections."""
    gt, ignore = [], []
    for t in entry["towers"]:
        box = BoundingBox.from_list(t["box"])
        (ignore if t.get("occluded") else gt).append(box)
    return gt, ignore


# --- dataset splitting and rebalancing ----------------------------------------


def split_indices(
    labels, ratios=(0.6, 0.2, 0.2), seed: int = 0
) -> tuple[list[int], ...]:
    """Stratified index split; each class lands within one item of the exact
    per-split proportion. Deterministic in (labels, ratios, seed)."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    labels = list(labels)
    by_class: dict = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(lab, []).append(i)
    rng = np.random.default_rng([seed, 17])
    splits: tuple[list[int], ...] = tuple([] for _ in ratios)
    for lab in sorted(by_class, key=str):
        idx = by_class[lab]
        order = rng.permutation(len(idx))
        shuffled = [idx[i] for i in order]
        n = len(shuffled)
        exact = [n * r for r in ratios]
        base = [int(np.floor(e)) for e in exact]
        remainder = n - sum(base)
        fractional = sorted(
            range(len(ratios)), key=lambda j: (-(exact[j] - base[j]), j)
        )
        for j in fractional[:remainder]:
            base[j] += 1
        start = 0
        for j, count in enumerate(base):
            splits[j].extend(shuffled[start : start + count])
            start += count
    return tuple(sorted(s) for s in splits)


def split_dataset(items, ratios=(0.6, 0.2, 0.2), seed: int = 0, label_of=None):
    """Split any labeled sequence; labels come from item.label or item["label"]."""
    if label_of is None:
        label_of = lambda item: (
            item["label"] if isinstance(item, dict) else getattr(item, "label")
        )
    labels = [str(label_of(item)) for item in items]
    parts = split_indices(labels, ratios, seed)
    return tuple([items[i] for i in part] for part in parts)


def sample_offset(rng: np.random.Generator) -> tuple[int, int]:
    """Independent uniform re-crop offset on the 11x11 grid [-5, 5]^2."""
    return int(rng.integers(-5, 6)), int(rng.integers(-5, 6))


def rebalance(
    crop_entries: list[dict],
    target_class: str,
    frame_w: int,
    frame_h: int,
    seed: int = 0,
    tolerance: float = 0.05,
) -> list[dict]:
    """Augment an under-represented class by re-cropping with jittered boxes.

    Source entries of the target class are duplicated with per-axis offsets
    drawn uniformly from [-5, +5] pixels (clamped inside the frame) until the
    class count is within `tolerance` of the largest class. Entries are dicts
    with at least frame/box/label keys; copies carry an "offset" field.
    """
    counts: dict[str, int] = {}
    for e in crop_entries:
        counts[e["label"]] = counts.get(e["label"], 0) + 1
    if target_class not in counts:
        raise ValueError(f"no entries of class {target_class!r} to rebalance")
    largest = max(counts.values())
    goal = int(np.ceil((1.0 - tolerance) * largest))
    out = list(crop_entries)
    sources = [e for e in crop_entries if e["label"] == target_class]
    rng = np.random.default_rng([seed, 23])
    count = counts[target_class]
    i = 0
    while count < goal:
        src = sources[i % len(sources)]
        i += 1
        dx, dy = sample_offset(rng)
        box = BoundingBox.from_list(src["box"])
        x = min(max(0, box.x + dx), frame_w - box.w)
        y = min(max(0, box.y + dy), frame_h - box.h)
        dup = dict(src)
        dup["box"] = [x, y, box.w, box.h]
        dup["offset"] = [dx, dy]
        out.append(dup)
        count += 1
    return out


# --- classification metrics ----------------------------------------------------


@dataclass
class ConfusionMatrix:
    """Rows are true labels, columns predictions, in fixed class order."""

    class_names: tuple[str, ...] = CLASS_NAMES
    counts: np.ndarray = None

    def __post_init__(self):
        n = len(self.class_names)
        if self.counts is None:
            self.counts = np.zeros((n, n), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (n, n):
                raise ValueError(f"counts must be {n}x{n}, got {self.counts.shape}")

    def add(self, true_idx: int, pred_idx: int) -> None:
        self.counts[true_idx, pred_idx] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def per_class_recall(self) -> dict[str, float]:
        out = {}
        for i, name in enumerate(self.class_names):
            row = self.counts[i].sum()
            out[name] = float(self.counts[i, i] / row) if row else 0.0
        return out

    def to_json_obj(self) -> dict:
        return {
            "class_order": list(self.class_names),
            "counts": self.counts.tolist(),
            "accuracy": self.accuracy,
            "per_class_recall": self.per_class_recall(),
        }

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["true\\pred"] + list(self.class_names))
        for i, name in enumerate(self.class_names):
            writer.writerow([name] + [int(v) for v in self.counts[i]])
        return buf.getvalue()


def predict_examples(model: SoftmaxModel, examples: list[CropExample]) -> np.ndarray:
    """Predicted class indices for a list of crops (batched for speed)."""
    if model.feature_config is None:
        raise ValueError("model has no feature config; it cannot classify crops")
    feats = np.stack([featurize(e.image, model.feature_config) for e in examples])
    return forward_batch(model, feats).argmax(axis=1)


def evaluate_classifier(
    model: SoftmaxModel,
    test_examples: list[CropExample],
    train_sources: set[str] | None = None,
) -> ConfusionMatrix:
    """Confusion matrix of the model on labeled crops.

    When `train_sources` is given, any test crop whose source identity appears
    in it aborts the evaluation: train/test splits must be disjoint.
    """
    if train_sources is not None:
        overlap = {e.source for e in test_examples if e.source} & train_sources
        if overlap:
            raise ValueError(
                f"test split overlaps training split on {len(overlap)} item(s), "
                f"e.g. {sorted(overlap)[0]!r}"
            )
    matrix = ConfusionMatrix(model.class_names)
    if not test_examples:
        return matrix
    preds = predict_examples(model, test_examples)
    for example, pred in zip(test_examples, preds):
        matrix.add(model.class_names.index(example.label.value), int(pred))
    return matrix


# --- robustness sweep -----------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    width: int
    height: int
    degradation: str
    param: str
    accuracy: float
    n: int


@dataclass(frozen=True)
class SweepResult:
    cells: tuple[SweepCell, ...]

    def accuracy_at(self, size: tuple[int, int], degradation: str) -> float:
        for cell in self.cells:
            if (cell.width, cell.height) == size and cell.degradation == degradation:
                return cell.accuracy
        raise KeyError(f"no sweep cell for size {size} and degradation {degradation!r}")

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["size", "degradation", "param", "accuracy", "n"])
        for c in self.cells:
            writer.writerow(
                [f"{c.width}x{c.height}", c.degradation, c.param, repr(c.accuracy), c.n]
            )
        return buf.getvalue()

    def to_json_obj(self) -> list[dict]:
        return [
            {
                "width": c.width,
                "height": c.height,
                "degradation": c.degradation,
                "param": c.param,
                "accuracy": c.accuracy,
                "n": c.n,
            }
            for c in self.cells
        ]


def _degradation_columns(spec) -> tuple[str, str]:
    from . import perturb as P

    if isinstance(spec, P.Compose) and not spec.steps:
        return "clean", ""
    if isinstance(spec, P.DefocusBlur):
        return "defocus", f"{spec.sigma:g}"
    if isinstance(spec, P.MotionBlur):
        return "motion", f"{spec.strength_px:g}"
    if isinstance(spec, P.Gamma):
        return "gamma", f"{spec.gamma:g}"
    return spec_label(spec), ""


def run_sweep(
    model: SoftmaxModel,
    test_examples: list[CropExample],
    grid: SweepGrid = SweepGrid(),
) -> SweepResult:
    """Accuracy for every (size, degradation) cell of the grid.

    Each test crop is first resized to the cell's size (simulating distance
    to the camera) and then degraded; classification always goes through the
    standard 227x227 preparation.
    """
    if not test_examples:
        raise ValueError("sweep needs a non-empty test set")
    true_idx = np.array(
        [model.class_names.index(e.label.value) for e in test_examples]
    )
    cells = []
    for w, h in grid.sizes:
        resized = [resize_bicubic(e.image, w, h) for e in test_examples]
        for spec in grid.degradations:
            degraded = [apply(spec, img) for img in resized]
            feats = np.stack([featurize(img, model.feature_config) for img in degraded])
            preds = forward_batch(model, feats).argmax(axis=1)
            accuracy = float((preds == true_idx).mean())
            name, param = _degradation_columns(spec)
            key = name if name == "clean" else f"{name}_{param}"
            cells.append(SweepCell(w, h, key, param, accuracy, len(test_examples)))
    return SweepResult(tuple(cells))


def check_sweep_shape(result: SweepResult) -> tuple[bool, list[str]]:
    """Qualitative shape checks on the default grid.

    Verifies the expected degradation ordering: a large clean-accuracy drop at
    the smallest size, severe defocus below moderate defocus at every size,
    moderate gamma close to clean and severe gamma well below clean at the
    largest size.
    """
    problems = []
    sizes = sorted({(c.width, c.height) for c in result.cells}, key=lambda s: -(s[0] * s[1]))
    largest, smallest = sizes[0], sizes[-1]
    clean_large = result.accuracy_at(largest, "clean")
    clean_small = result.accuracy_at(smallest, "clean")
    if clean_large - clean_small < 0.30:
        problems.append(
            f"clean accuracy at {smallest} only {clean_large - clean_small:.3f} "
            "below the largest size (need >= 0.30)"
        )
    for size in sizes:
        moderate = result.accuracy_at(size, "defocus_1.5")
        severe = result.accuracy_at(size, "defocus_3")
        if not severe < moderate:
            problems.append(
                f"severe defocus not below moderate at {size}: {severe:.3f} vs {moderate:.3f}"
            )
    for g in ("0.5", "1.5"):
        acc = result.accuracy_at(largest, f"gamma_{g}")
        if abs(clean_large - acc) > 0.02:
            problems.append(
                f"moderate gamma {g} at {largest} differs from clean by "
                f"{abs(clean_large - acc):.3f} (allowed 0.02)"
            )
    for g in ("0.25", "2.5"):
        acc = result.accuracy_at(largest, f"gamma_{g}")
        if clean_large - acc < 0.10:
            problems.append(
                f"severe gamma {g} at {largest} only {clean_large - acc:.3f} below clean"
            )
    return not problems, problems


def clean_size_monotonicity(result: SweepResult) -> tuple[bool, list[str]]:
    """Clean accuracy should not increase as size shrinks (one <=1pp inversion allowed)."""
    sizes = sorted({(c.width, c.height) for c in result.cells}, key=lambda s: -(s[0] * s[1]))
    accs = [result.accuracy_at(s, "clean") for s in sizes]
    inversions = [
        (sizes[i], sizes[i + 1], accs[i + 1] - accs[i])
        for i in range(len(accs) - 1)
        if accs[i + 1] > accs[i]
    ]
    big = [f"{a}->{b}: +{d:.4f}" for a, b, d in inversions if d > 0.01]
    ok = len(inversions) <= 1 and not big
    notes = [f"{a}->{b}: +{d:.4f}" for a, b, d in inversions]
    return ok, notes
