"""Final-layer multinomial softmax classifier over image embeddings."""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

OPTIMIZERS = ("GD", "Adam")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
_MAGIC = b"SCMD"


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    optimizer: str = "GD"
    learning_rate: float = 0.01
    momentum: float = 0.0
    batch_size: int = 512
    epochs: int = 3000
    seed: int = 0
    augmentations: tuple[str, ...] = ()
    l2: float = 0.0
    # use ``momentum`` as Adam's beta1 instead of ignoring it
    adam_momentum_override: bool = False

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if set(self.augmentations) - {"flip_lr"}:
            raise ValueError("only flip_lr augmentation is supported")
        object.__setattr__(self, "augmentations", tuple(sorted(set(self.augmentations))))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentations"] = list(self.augmentations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["augmentations"] = tuple(d.get("augmentations", ()))
        return cls(**d)


@dataclass
class SoftmaxModel:
    W: np.ndarray
    b: np.ndarray
    class_order: list[str]
    config: ModelConfig | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        K = len(self.class_order)
        if self.W.ndim != 2 or self.W.shape[0] != K or self.b.shape != (K,):
            raise ValueError("W must be K x D and b of length K")
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise ValueError("non-finite model parameters")

    @classmethod
    def zeros(cls, class_order: Sequence[str], dim: int, config: ModelConfig | None = None):
        K = len(class_order)
        return cls(np.zeros((K, dim)), np.zeros(K), list(class_order), config)

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def save(self, path: str | Path) -> None:
        """JSON header followed by little-endian float32 W (row-major) then b."""
        header = json.dumps({
            "class_order": self.class_order,
            "D": self.dim,
            "K": len(self.class_order),
            "config": self.config.to_dict() if self.config else None,
        }, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC + struct.pack("<I", len(header)) + header)
            fh.write(self.W.astype("<f4").tobytes())
            fh.write(self.b.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "SoftmaxModel":
        raw = Path(path).read_bytes()
        if raw[:4] != _MAGIC:
            raise ValueError(f"{path}: not a model file")
        (n,) = struct.unpack("<I", raw[4:8])
        header = json.loads(raw[8:8 + n])
        K, D = header["K"], header["D"]
        body = np.frombuffer(raw[8 + n:], dtype="<f4").astype(np.float64)
        if body.size != K * D + K:
            raise ValueError(f"{path}: truncated weights")
        cfg = ModelConfig.from_dict(header["config"]) if header["config"] else None
        return cls(body[:K * D].reshape(K, D), body[K * D:], header["class_order"], cfg)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Mean cross-entropy of ``softmax(X W^T + b)`` against integer labels ``y``
    and its gradients with respect to ``W`` and ``b``."""
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    z = X @ W.T + b
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), y]))
    P = np.exp(z - logsum[:, None])
    P[np.arange(n), y] -= 1.0
    P /= n
    gW = P.T @ X
    gb = P.sum(axis=0)
    if l2:
        loss += 0.5 * l2 * float(np.sum(W * W))
        gW = gW + l2 * W
    return loss, gW, gb


def step_gd(theta, grad, velocity, lr: float, momentum: float = 0.0):
    """Heavy-ball update: v <- momentum*v - lr*g; theta <- theta + v."""
    velocity = momentum * velocity - lr * grad
    return theta + velocity, velocity


def step_adam(theta, grad, m, v, t: int, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
    """Bias-corrected Adam step; ``t`` counts from 1."""
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


@dataclass
class LabeledSet:
    """Embedding matrix with string labels, canonically ordered by (image_id, tag)."""

    image_ids: list[str]
    X: np.ndarray
    labels: list[str]
    tags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(len(self.image_ids), -1)
        if not self.tags:
            self.tags = ["none"] * len(self.image_ids)
        if not (len(self.labels) == len(self.tags) == len(self.image_ids)):
            raise ValueError("image_ids, labels and tags must align")

    def __len__(self) -> int:
        return len(self.image_ids)

    def sorted(self) -> "LabeledSet":
        order = sorted(range(len(self)), key=lambda k: (self.image_ids[k], self.tags[k]))
        return LabeledSet(
            [self.image_ids[k] for k in order], self.X[order],
            [self.labels[k] for k in order], [self.tags[k] for k in order],
        )

    def concat(self, other: "LabeledSet") -> "LabeledSet":
        return LabeledSet(
            self.image_ids + other.image_ids, np.vstack([self.X, other.X]),
            self.labels + other.labels, self.tags + other.tags,
        )


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_acc", "val_acc", "loss"])
            for row in zip(self.epoch, self.train_acc, self.val_acc, self.loss):
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def _accuracy(W, b, X, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(X @ W.T + b, axis=1) == y))


def train(config: ModelConfig, train_set: LabeledSet, val_set: LabeledSet | None = None,
          class_order: Sequence[str] | None = None, record_every: int = 1):
    """Zero-initialized mini-batch training; returns ``(final model, history)``.

    The epoch shuffle depends only on ``(config.seed, epoch)`` applied to the
    training rows sorted by image_id, so input row order does not matter.
    """
    data = train_set.sorted()
    classes = list(class_order) if class_order is not None else sorted(set(data.labels))
    if len(classes) < 2:
        raise ValueError("training needs at least two classes")
    index = {c: k for k, c in enumerate(classes)}
    try:
        y = np.array([index[l] for l in data.labels], dtype=np.intp)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} not in class order") from None
    X = data.X
    n, D = X.shape
    if n == 0:
        raise ValueError("empty training set")
    if val_set is not None and len(val_set):
        Xv = val_set.X
        if Xv.shape[1] != D:
            raise ValueError("validation dimension differs from training dimension")
        yv = np.array([index.get(l, -1) for l in val_set.labels], dtype=np.intp)
    else:
        Xv, yv = np.zeros((0, D)), np.zeros(0, dtype=np.intp)

    W = np.zeros((len(classes), D))
    b = np.zeros(len(classes))
    vW, vb = np.zeros_like(W), np.zeros_like(b)
    mW, mb = np.zeros_like(W), np.zeros_like(b)
    bs = min(config.batch_size, n)
    beta1 = config.momentum if (config.optimizer == "Adam" and config.adam_momentum_override) else ADAM_BETA1
    t = 0
    hist = TrainHistory()
    for epoch in range(config.epochs):
        perm = np.random.default_rng([config.seed, epoch]).permutation(n)
        losses = []
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            # overflow is reported through TrainingDiverged below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gW, gb = loss_and_grad(W, b, X[idx], y[idx], config.l2)
            if not (np.isfinite(loss) and np.isfinite(gW).all()):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} (optimizer={config.optimizer}, "
                    f"lr={config.learning_rate:g}); the learning rate is probably too high"
                )
            losses.append(loss * len(idx))
            if config.optimizer == "GD":
                W, vW = step_gd(W, gW, vW, config.learning_rate, config.momentum)
                b, vb = step_gd(b, gb, vb, config.learning_rate, config.momentum)
            else:
                t += 1
                W, mW, vW = step_adam(W, gW, mW, vW, t, config.learning_rate, beta1=beta1)
                b, mb, vb = step_adam(b, gb, mb, vb, t, config.learning_rate, beta1=beta1)
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        if (epoch + 1) % record_every == 0 or epoch == config.epochs - 1:
            hist.epoch.append(epoch)
            hist.loss.append(sum(losses) / n)
            hist.train_acc.append(_accuracy(W, b, X, y))
            hist.val_acc.append(_accuracy(W, b, Xv, yv))
    return SoftmaxModel(W, b, classes, config), hist


@dataclass(frozen=True)
class Prediction:
    image_id: str
    probs: np.ndarray
    argmax_label: str


def predict_proba(model: SoftmaxModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64).reshape(-1, model.dim)
    return softmax(X @ model.W.T + model.b)


def predict(model: SoftmaxModel, image_ids: Sequence[str], X: np.ndarray) -> list[Prediction]:
    P = predict_proba(model, X)
    # np.argmax returns the first maximum: ties go to the lowest class index
    top = np.argmax(P, axis=1)
    return [Prediction(i, P[k], model.class_order[top[k]]) for k, i in enumerate(image_ids)]
