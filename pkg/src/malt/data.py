"""Datasets, synthetic generators, file ingestion and gradient-descent training."""

import csv
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, NumericalAbort
from .linalg import SeededRng, SubspaceBasis, frozen
from .models import TwoLayerNet

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs (r x d) with integer class labels in [0, num_classes)."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ConfigError("dataset inputs must be a non-empty r x d array")
        if y.shape != (X.shape[0],):
            raise ConfigError("need exactly one label per input")
        if not np.all(np.isfinite(X)):
            raise ConfigError("dataset inputs have non-finite entries")
        if np.any(y < 0) or np.any(y >= self.num_classes):
            raise ConfigError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "inputs", frozen(X))
        labels = y.astype(np.int64)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    @property
    def signed_labels(self):
        """Binary labels mapped to -1/+1 (class 0 -> -1)."""
        if self.num_classes != 2:
            raise ConfigError("signed labels need a binary dataset")
        return 2.0 * self.labels - 1.0


@dataclass(frozen=True)
class SubspaceDatasetSpec:
    ambient_dim: int
    data_dim: int
    num_points: int
    seed: int = 0

    def validate(self):
        if not 1 <= self.data_dim < self.ambient_dim:
            raise ConfigError("data_dim must be < ambient_dim")
        if self.num_points < 2:
            raise ConfigError("num_points must be >= 2")


def gen_subspace_dataset(spec):
    """Binary dataset on a random p-dimensional subspace of R^d.

    Coefficients in the subspace are standard normal; labels are the side of a
    random hyperplane through the origin inside the subspace.
    """
    spec.validate()
    rng = SeededRng(spec.seed)
    basis = SubspaceBasis.random(spec.ambient_dim, spec.data_dim, rng)
    for _ in range(100):
        coeffs = rng.generator.standard_normal((spec.num_points, spec.data_dim))
        normal = rng.generator.standard_normal(spec.data_dim)
        labels = (coeffs @ normal > 0).astype(np.int64)
        if 0 < labels.sum() < spec.num_points:
            return Dataset(coeffs @ basis.vectors, labels, 2), basis
    raise ConfigError("could not draw a dataset containing both labels after 100 attempts")


def gen_cluster_dataset(dim, num_classes, num_points, seed=0, spread=0.15):
    """Gaussian class clusters inside the unit box, clipped to [0, 1]."""
    if dim < 1 or num_classes < 2 or num_points < 1:
        raise ConfigError("need dim >= 1, num_classes >= 2, num_points >= 1")
    rng = SeededRng(seed)
    centers = rng.generator.uniform(0.2, 0.8, size=(num_classes, dim))
    labels = np.arange(num_points) % num_classes
    rng.generator.shuffle(labels)
    X = centers[labels] + spread * rng.generator.standard_normal((num_points, dim))
    return Dataset(np.clip(X, 0.0, 1.0), labels, num_classes)


# --- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "ce"
    learning_rate: float = 0.1
    steps: int = 100
    first_layer_only: bool = False
    seed: int = 0

    def validate(self):
        if self.loss not in ("mse", "bce", "ce"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")


def loss_and_output_grad(loss, logits, data):
    """Mean loss over the batch and its gradient w.r.t. the logits."""
    r, k = logits.shape
    if k == 1:
        y = data.signed_labels
        out = logits[:, 0]
        if loss == "mse":
            diff = out - y
            return 0.5 * np.mean(diff**2), (diff / r)[:, None]
        if loss == "bce":
            margin = y * out
            value = np.mean(np.logaddexp(0.0, -margin))
            return value, (-y * _sigmoid(-margin) / r)[:, None]
        raise ConfigError("scalar-output models train with mse or bce")
    onehot = np.eye(k)[data.labels]
    if loss == "mse":
        diff = logits - onehot
        return 0.5 * np.mean(np.sum(diff**2, axis=1)), diff / r
    if loss == "bce" and k != 2:
        raise ConfigError("bce needs a binary problem")
    # bce on two logits is the softmax cross-entropy
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    value = np.mean(logz - shifted[np.arange(r), data.labels])
    probs = np.exp(shifted - logz[:, None])
    return value, (probs - onehot) / r


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def train(model, data, cfg):
    """Full-batch gradient descent; returns ``(trained_model, loss_trace)``.

    ``loss_trace[t]`` is the loss before step ``t``; the last entry is the loss
    of the returned model, so the trace has ``steps + 1`` entries.
    """
    cfg.validate()
    if data.dim != model.input_dim:
        raise ConfigError(f"model expects {model.input_dim} inputs, data has {data.dim}")
    first_only = cfg.first_layer_only or isinstance(model, TwoLayerNet)
    if isinstance(model, TwoLayerNet) and not cfg.first_layer_only:
        raise ConfigError("TwoLayerNet trains its first layer only; set first_layer_only")
    X = data.inputs
    trace = []
    for step in range(cfg.steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            value, G = loss_and_output_grad(cfg.loss, model.logits_batch(X), data)
        if not np.isfinite(value):
            raise NumericalAbort(f"non-finite loss at step {step}")
        trace.append(float(value))
        if step == cfg.steps:
            break
        grads = model.param_grads(X, G, first_layer_only=first_only)
        params = model.parameters()
        model = model.with_parameters(
            **{name: params[name] - cfg.learning_rate * g for name, g in grads.items()}
        )
    return model, trace


def write_loss_trace(trace, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(trace):
            fh.write(f"{i},{v:.17g}\n")


# --- CSV -------------------------------------------------------------------


def write_csv(data, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(["label"] + [f"f{j}" for j in range(data.dim)]) + "\n")
        for x, y in zip(data.inputs, data.labels):
            fh.write(",".join([str(int(y))] + [f"{v:.17g}" for v in x]) + "\n")


def load_csv(path, feature_range=None, num_classes=None):
    """Read ``label,f0,f1,...`` rows.

    ``feature_range=(lo, hi)`` rescales features affinely into [0, 1]; without
    it values are taken as-is. ``num_classes`` defaults to max(label) + 1 (at
    least 2).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError("empty file", "header")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "label":
        raise FormatError("first column must be 'label' followed by features", "header")
    X, y = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} columns, got {len(row)}", f"row {r}")
        try:
            label = int(row[0])
        except ValueError:
            raise FormatError(f"non-integer label {row[0]!r}", f"row {r}, column label") from None
        feats = []
        for name, cell in zip(header[1:], row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise FormatError(f"non-numeric value {cell!r}", f"row {r}, column {name}") from None
            if not np.isfinite(v):
                raise FormatError(f"non-finite value {cell!r}", f"row {r}, column {name}")
            feats.append(v)
        X.append(feats)
        y.append(label)
    if not X:
        raise FormatError("no data rows", "rows")
    y = np.array(y)
    k = num_classes if num_classes is not None else max(2, int(y.max()) + 1)
    if y.min() < 0 or y.max() >= k:
        bad = int(np.flatnonzero((y < 0) | (y >= k))[0]) + 2
        raise FormatError(f"label out of range [0, {k})", f"row {bad}, column label")
    X = np.array(X, dtype=np.float64)
    if feature_range is not None:
        lo, hi = feature_range
        X = (X - lo) / (hi - lo)
    return Dataset(X, y, k)


# --- IDX -------------------------------------------------------------------


def _open(path, mode):
    return gzip.open(path, mode) if str(path).endswith(".gz") else open(path, mode)


def load_idx(images_path, labels_path, num_classes=None):
    """Read an IDX3 ubyte image file and its IDX1 label file; pixels scaled to [0, 1]."""
    with _open(images_path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise FormatError("truncated header", "images")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad magic number 0x{magic:08x} (expected 0x{IDX_IMAGES_MAGIC:08x})", "images")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if pixels.size != n * rows * cols:
        raise FormatError(f"expected {n * rows * cols} pixels, found {pixels.size}", "images")
    with _open(labels_path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError("truncated header", "labels")
    magic, n_labels = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad magic number 0x{magic:08x} (expected 0x{IDX_LABELS_MAGIC:08x})", "labels")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    if n_labels != n or labels.size != n:
        raise FormatError(f"{labels.size} labels for {n} images", "labels")
    k = num_classes if num_classes is not None else max(2, int(labels.max()) + 1)
    if labels.max() >= k:
        raise FormatError(f"label out of range [0, {k})", "labels")
    X = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    return Dataset(X, labels, k)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images (n x rows x cols) and labels as an IDX3/IDX1 pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with _open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with _open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(labels.tobytes())
