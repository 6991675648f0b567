"""Light-combination classifier: crop normalization, color-histogram features,
a softmax model trained with SGDM or Adam, temporal smoothing and score
thresholding.

Crops are stretched (anisotropically) to 227x227, split into horizontal
bands, and summarized by per-band HSV histograms; a linear softmax over
those features separates the ten classes. Training is fully deterministic:
the per-epoch shuffle is a pure function of (seed, epoch).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import RGB, Image, resize_bicubic, rgb_to_hsv
from .labels import CLASS_NAMES, LightCombination, parse_label

PREPARED_SIZE = 227

MODEL_FORMAT_VERSION = 1


def prepare_crop(img: Image) -> Image:
    """Stretch a crop straight to 227x227; aspect ratio is deliberately lost."""
    if img.colorspace != RGB:
        raise ValueError(f"prepare_crop expects an RGB crop, got {img.colorspace}")
    return resize_bicubic(img, PREPARED_SIZE, PREPARED_SIZE)


@dataclass(frozen=True)
class FeatureConfig:
    """Band/bin layout of the hand-crafted color features (default length 75)."""

    bands: int = 3
    hue_bins: int = 8
    sat_bins: int = 8
    val_bins: int = 8

    def __post_init__(self):
        if min(self.bands, self.hue_bins, self.sat_bins, self.val_bins) < 1:
            raise ValueError("bands and bin counts must be >= 1")

    @property
    def length(self) -> int:
        return self.bands * (self.hue_bins + self.sat_bins + self.val_bins) + self.bands


def _band_rows(height: int, bands: int) -> list[tuple[int, int]]:
    edges = [round(i * height / bands) for i in range(bands + 1)]
    return [(edges[i], edges[i + 1]) for i in range(bands)]


def _hist(values: np.ndarray, bins: int, weights: np.ndarray | None = None) -> np.ndarray:
    idx = np.minimum((values * bins).astype(np.int64), bins - 1)
    if weights is None:
        counts = np.bincount(idx, minlength=bins).astype(np.float64)
        total = values.size
    else:
        counts = np.bincount(idx, weights=weights, minlength=bins)
        total = weights.sum()
    if total <= 1e-12:
        # no weight anywhere (e.g. an all-black band): fall back to raw counts
        counts = np.bincount(idx, minlength=bins).astype(np.float64)
        total = values.size
    return counts / total


def extract_features(prepared: Image, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Per-band hue/saturation/value histograms plus per-band mean brightness.

    The hue histogram is weighted by saturation*value so the gray background
    contributes mass only to the saturation and value histograms.
    """
    if prepared.width != PREPARED_SIZE or prepared.height != PREPARED_SIZE:
        raise ValueError(
            f"expected a {PREPARED_SIZE}x{PREPARED_SIZE} crop, got "
            f"{prepared.width}x{prepared.height}"
        )
    hsv = rgb_to_hsv(prepared)
    parts = []
    means = []
    for y0, y1 in _band_rows(prepared.height, config.bands):
        h = hsv.pixels[y0:y1, :, 0].ravel()
        s = hsv.pixels[y0:y1, :, 1].ravel()
        v = hsv.pixels[y0:y1, :, 2].ravel()
        parts.append(_hist(h, config.hue_bins, weights=s * v))
        parts.append(_hist(s, config.sat_bins))
        parts.append(_hist(v, config.val_bins))
        means.append(v.mean())
    return np.concatenate(parts + [np.asarray(means)])


def featurize(crop: Image, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """prepare_crop + extract_features in one step (accepts any RGB crop)."""
    return extract_features(prepare_crop(crop), config)


@dataclass
class SoftmaxModel:
    """Linear softmax classifier. feature_config is None for models trained on
    raw feature matrices (e.g. toy problems); crop prediction requires it."""

    weights: np.ndarray  # (n_classes, feature_length)
    bias: np.ndarray  # (n_classes,)
    class_names: tuple[str, ...] = CLASS_NAMES
    feature_config: FeatureConfig | None = field(default_factory=FeatureConfig)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        n = len(self.class_names)
        if self.weights.ndim != 2 or self.weights.shape[0] != n:
            raise ValueError(f"weights must be ({n}, D), got {self.weights.shape}")
        if self.feature_config is not None and self.weights.shape[1] != self.feature_config.length:
            raise ValueError(
                f"weights width {self.weights.shape[1]} does not match feature "
                f"config length {self.feature_config.length}"
            )
        if self.bias.shape != (n,):
            raise ValueError(f"bias must have length {n}, got {self.bias.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("model parameters must be finite")

    @property
    def feature_length(self) -> int:
        return self.weights.shape[1]

    @staticmethod
    def zeros(
        class_names: tuple[str, ...] = CLASS_NAMES,
        feature_length: int | None = None,
        feature_config: FeatureConfig | None = None,
    ) -> "SoftmaxModel":
        if feature_length is None:
            feature_config = feature_config or FeatureConfig()
            feature_length = feature_config.length
        return SoftmaxModel(
            np.zeros((len(class_names), feature_length)),
            np.zeros(len(class_names)),
            class_names,
            feature_config,
        )


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(model: SoftmaxModel, features: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector (max-subtracted softmax)."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape != (model.feature_length,):
        raise ValueError(
            f"feature vector must have length {model.feature_length}, got {f.shape}"
        )
    return _softmax_rows((model.weights @ f + model.bias)[np.newaxis, :])[0]


def forward_batch(model: SoftmaxModel, features: np.ndarray) -> np.ndarray:
    """Row-wise class probabilities for a feature matrix (N, feature_length)."""
    return _softmax_rows(features @ model.weights.T + model.bias)


def loss_and_gradient(
    model: SoftmaxModel, features: np.ndarray, labels: np.ndarray, l2: float = 0.0
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Mean cross-entropy plus (l2/2)*||W||^2, with analytic gradients."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64).ravel()
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    if x.shape[0] != y.shape[0]:
        raise ValueError("features and labels disagree on batch size")
    n = x.shape[0]
    probs = forward_batch(model, x)
    eps = np.finfo(np.float64).tiny
    loss = float(-np.log(np.maximum(probs[np.arange(n), y], eps)).mean())
    loss += 0.5 * l2 * float(np.sum(model.weights**2))
    delta = probs
    delta[np.arange(n), y] -= 1.0
    grad_w = delta.T @ x / n + l2 * model.weights
    grad_b = delta.mean(axis=0)
    return loss, (grad_w, grad_b)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule. lr=None picks the per-optimizer default
    (0.05 for sgdm, 0.001 for adam)."""

    optimizer: str = "sgdm"
    lr: float | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    l2: float = 1e-4

    def __post_init__(self):
        if self.optimizer not in ("sgdm", "adam"):
            raise ValueError(f"optimizer must be sgdm or adam, got {self.optimizer!r}")
        if self.lr is None:
            object.__setattr__(self, "lr", 0.05 if self.optimizer == "sgdm" else 0.001)
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must be in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


class _Sgdm:
    def __init__(self, cfg: TrainConfig, shapes):
        self.cfg = cfg
        self.velocity = [np.zeros(s) for s in shapes]

    def update(self, params, grads):
        for i, (p, g) in enumerate(zip(params, grads)):
            self.velocity[i] = self.cfg.momentum * self.velocity[i] - self.cfg.lr * g
            p += self.velocity[i]


class _Adam:
    def __init__(self, cfg: TrainConfig, shapes):
        self.cfg = cfg
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def update(self, params, grads):
        cfg = self.cfg
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = cfg.beta1 * self.m[i] + (1 - cfg.beta1) * g
            self.v[i] = cfg.beta2 * self.v[i] + (1 - cfg.beta2) * g**2
            m_hat = self.m[i] / (1 - cfg.beta1**self.t)
            v_hat = self.v[i] / (1 - cfg.beta2**self.t)
            p -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def train_softmax(
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    class_names: tuple[str, ...] = CLASS_NAMES,
    feature_config: FeatureConfig | None = None,
    val_features: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
) -> tuple[SoftmaxModel, list[dict]]:
    """Minibatch training on a precomputed feature matrix.

    Every class must be present in the training labels. History rows carry
    per-epoch mean train loss and, when a validation set is given, accuracy.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be (N, D) with one label per row")
    present = set(np.unique(y).tolist())
    for idx, name in enumerate(class_names):
        if idx not in present:
            raise ValueError(f"training split has no examples of class {name!r}")
    if feature_config is not None and feature_config.length != x.shape[1]:
        raise ValueError(
            f"feature matrix width {x.shape[1]} does not match config length "
            f"{feature_config.length}"
        )
    model = SoftmaxModel.zeros(class_names, x.shape[1], feature_config)
    opt_cls = _Sgdm if config.optimizer == "sgdm" else _Adam
    optimizer = opt_cls(config, [model.weights.shape, model.bias.shape])
    n = x.shape[0]
    history: list[dict] = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, (gw, gb) = loss_and_gradient(model, x[batch], y[batch], config.l2)
            optimizer.update([model.weights, model.bias], [gw, gb])
            losses.append(loss)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val_features is not None and val_labels is not None:
            pred = forward_batch(model, np.asarray(val_features)).argmax(axis=1)
            row["val_acc"] = float((pred == np.asarray(val_labels)).mean())
        history.append(row)
    return model, history


def train(
    examples,
    config: TrainConfig,
    val_examples=None,
    feature_config: FeatureConfig = FeatureConfig(),
) -> tuple[SoftmaxModel, list[dict]]:
    """Train from labeled crops (objects with .image and .label)."""
    x = np.stack([featurize(e.image, feature_config) for e in examples])
    y = np.array([CLASS_NAMES.index(e.label.value) for e in examples])
    xv = yv = None
    if val_examples:
        xv = np.stack([featurize(e.image, feature_config) for e in val_examples])
        yv = np.array([CLASS_NAMES.index(e.label.value) for e in val_examples])
    return train_softmax(
        x, y, config, CLASS_NAMES, feature_config, val_features=xv, val_labels=yv
    )


def predict(model: SoftmaxModel, crop: Image) -> tuple[LightCombination, np.ndarray]:
    """Classify one crop; ties resolve to the earliest class in order."""
    if model.feature_config is None:
        raise ValueError("model has no feature config; it cannot classify crops")
    scores = forward(model, featurize(crop, model.feature_config))
    return parse_label(model.class_names[int(scores.argmax())]), scores


@dataclass(frozen=True)
class SmoothedLabel:
    label: LightCombination
    confidence: float
    uncertain: bool


def temporal_smooth(
    window_scores, threshold: float = 0.6, class_names: tuple[str, ...] = CLASS_NAMES
) -> SmoothedLabel:
    """Average score vectors over a window, then argmax with thresholding.

    The uncertain flag is raised when the top mean score falls below the
    threshold (flagging fading lights and other borderline windows).
    """
    window = np.atleast_2d(np.asarray(window_scores, dtype=np.float64))
    if window.size == 0:
        raise ValueError("smoothing window must be non-empty")
    mean = window.mean(axis=0)
    idx = int(mean.argmax())
    confidence = float(mean[idx])
    return SmoothedLabel(parse_label(class_names[idx]), confidence, confidence < threshold)


# --- persistence ---------------------------------------------------------------


def model_to_json(model: SoftmaxModel) -> dict:
    cfg = None
    if model.feature_config is not None:
        cfg = {
            "bands": model.feature_config.bands,
            "hue_bins": model.feature_config.hue_bins,
            "sat_bins": model.feature_config.sat_bins,
            "val_bins": model.feature_config.val_bins,
        }
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "class_order": list(model.class_names),
        "feature_config": cfg,
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
    }


def model_from_json(obj: dict) -> SoftmaxModel:
    if obj.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {obj.get('format_version')!r}")
    cfg = FeatureConfig(**obj["feature_config"]) if obj.get("feature_config") else None
    return SoftmaxModel(
        np.asarray(obj["weights"]),
        np.asarray(obj["bias"]),
        tuple(obj["class_order"]),
        cfg,
    )


def save_model(model: SoftmaxModel, path) -> None:
    Path(path).write_text(
        json.dumps(model_to_json(model), sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )


def load_model(path) -> SoftmaxModel:
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def history_to_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    has_val = any("val_acc" in row for row in history)
    header = ["epoch", "train_loss"] + (["val_acc"] if has_val else [])
    writer.writerow(header)
    for row in history:
        out = [row["epoch"], repr(row["train_loss"])]
        if has_val:
            out.append(repr(row["val_acc"]) if "val_acc" in row else "")
        writer.writerow(out)
    return buf.getvalue()
