"""Linear softmax classifier on flattened pixels: the desk-scale evaluator."""

from dataclasses import dataclass

import numpy as np

from randaug.errors import DegenerateDataset, DimensionMismatch, NonFiniteLoss
from randaug.imgcore import DeterministicRng
from randaug.policy import augment_image

# Inputs stay in [0, 1]; the model subtracts a fixed per-feature center
# (the unaugmented training mean) so the shared background does not align
# with the bias direction. Same model class as an uncentered linear softmax
# with a reparameterized bias, but far better conditioned for SGD.
INPUT_CENTER = 0.5


@dataclass
class Dataset:
    """Uniformly sized images with integer labels.

    Attributes:
        images: ``(n, H, W, 3)`` uint8 array.
        labels: ``(n,)`` int array with values in ``[0, num_classes)``.
        num_classes: number of classes C.
        split: ``"train"`` or ``"val"``.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise DimensionMismatch(f"images must be (n, H, W, 3), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DimensionMismatch(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels outside [0, num_classes)")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, indices, split=None):
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, split or self.split)


def features(images):
    """Flatten ``(n, H, W, 3)`` pixels (uint8 or float in [0, 1]) to ``(n, D)``."""
    x = np.asarray(images)
    if x.dtype == np.uint8:
        x = x.astype(np.float64) / 255.0
    return x.reshape(len(x), -1)


@dataclass
class TinyClassifier:
    """Linear softmax model ``logits = (x - center) @ weights + bias``.

    ``center`` is fixed, not trained; it defaults to 0.5 for every feature.
    """

    weights: np.ndarray  # (D, C)
    bias: np.ndarray  # (C,)
    center: np.ndarray = None  # (D,)

    def __post_init__(self):
        if self.center is None:
            self.center = np.full(self.weights.shape[0], INPUT_CENTER)
        self.center = np.asarray(self.center, dtype=np.float64)

    @classmethod
    def zeros(cls, dim, num_classes, center=None):
        return cls(np.zeros((dim, num_classes)), np.zeros(num_classes), center)

    @property
    def dim(self):
        return self.weights.shape[0]

    @property
    def num_classes(self):
        return self.weights.shape[1]

    def logits(self, x):
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"model expects {self.dim} features, got {x.shape[1]}")
        return (x - self.center) @ self.weights + self.bias

    def to_vector(self):
        return np.concatenate([self.weights.ravel(), self.bias])

    @classmethod
    def from_vector(cls, vec, dim, num_classes, center=None):
        """Inverse of ``to_vector``; ``center`` is not part of the vector."""
        vec = np.asarray(vec, dtype=np.float64)
        weights = vec[: dim * num_classes].reshape(dim, num_classes).copy()
        return cls(weights, vec[dim * num_classes :].copy(), center)

    def copy(self):
        return TinyClassifier(self.weights.copy(), self.bias.copy(), self.center.copy())


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = len(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    if not np.isfinite(loss):
        raise NonFiniteLoss("cross-entropy is not finite")
    probs = softmax(logits)
    probs[np.arange(n), labels] -= 1.0
    return loss, probs / n


def loss_and_grads(model, x, labels):
    """Returns ``(loss, d_weights, d_bias, d_x)`` for mean cross-entropy."""
    loss, d_logits = cross_entropy(model.logits(x), labels)
    return loss, (x - model.center).T @ d_logits, d_logits.sum(axis=0), d_logits @ model.weights.T


def train_classifier(train, cfg, epochs, lr, seed, batch_size=32):
    """Minibatch SGD on cross-entropy from a zero initialisation.

    The model's input center is the mean of the unaugmented training pixels.

    Each image is augmented with ``cfg`` (skipped when ``cfg`` is None) using
    the global batch counter as the schedule step and its dataset index as
    the image index, so the run is a pure function of its arguments.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    if len(np.unique(train.labels)) < 2:
        raise DegenerateDataset("training set needs at least two classes")
    n = len(train)
    model = TinyClassifier.zeros(
        int(np.prod(train.image_shape)), train.num_classes, features(train.images).mean(axis=0)
    )
    shuffler = DeterministicRng(seed).split("shuffle").numpy_generator()
    batches_per_epoch = -(-n // batch_size)
    total_steps = epochs * batches_per_epoch
    step = 0
    for _ in range(epochs):
        order = shuffler.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            if cfg is None:
                batch = train.images[idx]
            else:
                batch = np.stack(
                    [augment_image(train.images[i], cfg, step, total_steps, int(i)) for i in idx]
                )
            _, gw, gb, _ = loss_and_grads(model, features(batch), train.labels[idx])
            model.weights -= lr * gw
            model.bias -= lr * gb
            step += 1
    return model


def evaluate_accuracy(model, data):
    """Fraction of argmax-correct predictions (ties go to the lowest class)."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = np.argmax(model.logits(features(data.images)), axis=1)
    return float(np.mean(pred == data.labels))


class ClassifierEvaluator:
    """``evaluator(cfg, seed)``: train on ``train`` with ``cfg``, score on ``val``.

    Picklable, so it can be fanned out to worker processes.
    """

    def __init__(self, train, val, epochs=30, lr=0.1, batch_size=32):
        self.train = train
        self.val = val
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size

    def __call__(self, cfg, seed):
        cfg = cfg.replace(seed=seed)
        model = train_classifier(self.train, cfg, self.epochs, self.lr, seed, self.batch_size)
        return evaluate_accuracy(model, self.val)
