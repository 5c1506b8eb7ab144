"""Linear softmax classifier used to measure how learnable obfuscated data remains."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import LabeledDataset
from .errors import ConfigError, DomainError, FormatError
from .imageio import atomic_write

CLF1_MAGIC = b"CLF1"
CLF1_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.05
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be non-negative, got {self.l2}")


@dataclass(frozen=True)
class LinearClassifier:
    weights: np.ndarray  # (C, D)
    bias: np.ndarray  # (C,)

    @property
    def classes(self) -> int:
        return self.weights.shape[0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weights.shape[1]:
            raise DomainError(f"expected {self.weights.shape[1]} features, got {x.shape[-1]}")
        return x @ self.weights.T + self.bias


def _features(images) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    return images.reshape(len(images), -1)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(clf: LinearClassifier, x: np.ndarray, y: np.ndarray, l2: float = 0.0) -> float:
    z = clf.logits(x)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean() + 0.5 * l2 * np.sum(clf.weights**2))


def train_classifier(
    train: LabeledDataset,
    val: LabeledDataset,
    cfg: TrainConfig = TrainConfig(),
    history: list | None = None,
) -> LinearClassifier:
    """Mini-batch SGD on L2-regularized softmax cross-entropy.

    Parameters start at zero and the training set is reshuffled every epoch
    from ``cfg.seed``. Returns the parameters of the epoch with the best
    validation accuracy (earliest on ties). If ``history`` is a list, one dict
    per epoch (epoch 0 = initial state) with the full-training-set loss and
    validation accuracy is appended to it.
    """
    if train.shape != val.shape:
        raise DomainError(f"train images {train.shape} vs validation images {val.shape}")
    if len(np.unique(train.labels)) < 2:
        raise ConfigError("training set must contain at least two classes")
    x, y = _features(train.images), train.labels
    xv, yv = _features(val.images), val.labels
    n_classes = int(max(y.max(), yv.max() if len(yv) else 0)) + 1
    w = np.zeros((n_classes, x.shape[1]))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[y]
    rng = np.random.default_rng(cfg.seed)

    def val_accuracy(clf):
        if len(yv) == 0:
            return 0.0
        return float(np.mean(np.argmax(clf.logits(xv), axis=1) == yv))

    def record(epoch, clf, acc):
        if history is not None:
            history.append({"epoch": epoch, "loss": cross_entropy(clf, x, y, cfg.l2), "val_accuracy": acc})

    best = LinearClassifier(w.copy(), b.copy())
    best_acc = val_accuracy(best)
    record(0, best, best_acc)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(y))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = x[idx]
            grad = (_softmax(xb @ w.T + b) - onehot[idx]) / len(idx)
            w -= cfg.learning_rate * (grad.T @ xb + cfg.l2 * w)
            b -= cfg.learning_rate * grad.sum(axis=0)
        current = LinearClassifier(w.copy(), b.copy())
        acc = val_accuracy(current)
        record(epoch, current, acc)
        if acc > best_acc:
            best, best_acc = current, acc
    return best


def predict(clf: LinearClassifier, image: np.ndarray) -> int:
    """Arg-max class; ties go to the lowest class id."""
    return int(np.argmax(clf.logits(np.asarray(image, dtype=np.float64).ravel())))


def evaluate(clf: LinearClassifier, test: LabeledDataset) -> tuple[float, np.ndarray]:
    """Accuracy and a (C, C) confusion matrix indexed [true, predicted]."""
    pred = np.argmax(clf.logits(_features(test.images)), axis=1) if len(test) else np.zeros(0, int)
    confusion = np.zeros((clf.classes, clf.classes), dtype=np.int64)
    np.add.at(confusion, (test.labels, pred), 1)
    acc = float(np.mean(pred == test.labels)) if len(test) else float("nan")
    return acc, confusion


def encode_classifier(clf: LinearClassifier) -> bytes:
    c, d = clf.weights.shape
    return (
        CLF1_HEADER.pack(CLF1_MAGIC, c, d)
        + np.ascontiguousarray(clf.weights, dtype="<f8").tobytes()
        + np.asarray(clf.bias, dtype="<f8").tobytes()
    )


def decode_classifier(data: bytes) -> LinearClassifier:
    if len(data) < CLF1_HEADER.size:
        raise FormatError("file shorter than the CLF1 header", len(data))
    magic, c, d = CLF1_HEADER.unpack_from(data, 0)
    if magic != CLF1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CLF1_MAGIC!r}", 0)
    if len(data) != CLF1_HEADER.size + 8 * (c * d + c):
        raise FormatError(f"payload size does not match C={c}, D={d}", CLF1_HEADER.size)
    values = np.frombuffer(data, dtype="<f8", offset=CLF1_HEADER.size).astype(np.float64)
    return LinearClassifier(values[: c * d].reshape(c, d), values[c * d :])


def save_classifier(clf: LinearClassifier, path) -> None:
    payload = encode_classifier(clf)
    with atomic_write(path) as fh:
        fh.write(payload)


def load_classifier(path) -> LinearClassifier:
    return decode_classifier(Path(path).read_bytes())
