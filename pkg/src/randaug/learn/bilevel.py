"""Bilevel refinement of the selection logits via a single virtual SGD step.

The outer objective is the validation loss at weights adapted to the
augmented training loss. Unrolling one step ``w' = w - xi * dL_train/dw``
adds a mixed second-derivative term which is estimated with a symmetric
finite difference over the weights.

Gradient providers ("problems") expose three methods on flat weight vectors:
``train_grad_w(w, alpha)``, ``train_grad_alpha(w, alpha)`` and
``val_grad_w(w, alpha)``. ``MixtureProblem`` wires them to the classifier
on relaxed-augmented batches; tests plug in closed-form toy problems.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from randaug.errors import NonFiniteLoss
from randaug.imgcore import DeterministicRng
from randaug.learn.classifier import TinyClassifier, features, train_classifier
from randaug.learn.mixture import REAL_OPS, AugmentedBatch, alpha_probabilities
from randaug.transforms import ALL_KINDS

_V_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class BilevelConfig:
    """Step sizes for the bilevel update.

    Attributes:
        xi: virtual learning rate (>= 0).
        epsilon: finite-difference radius, divided by ``||v||`` before use.
        alpha_lr: step size of the logit update.
    """

    xi: float = 0.1
    epsilon: float = 0.01
    alpha_lr: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.xi) and self.xi >= 0):
            raise ValueError(f"xi must be finite and >= 0, got {self.xi}")
        if not (np.isfinite(self.epsilon) and 0 < self.epsilon <= 0.1):
            raise ValueError(f"epsilon must be in (0, 0.1], got {self.epsilon}")
        if not np.isfinite(self.alpha_lr):
            raise ValueError("alpha_lr must be finite")


class MixtureProblem:
    """Classifier losses on relaxed-augmented train and validation batches."""

    def __init__(self, train_batch, val_batch, dim, num_classes, center=None):
        self.train_batch = train_batch
        self.val_batch = val_batch
        self.dim = dim
        self.num_classes = num_classes
        self.center = center

    @classmethod
    def from_datasets(cls, train, val, level, n, ops=REAL_OPS, center=None):
        tb = AugmentedBatch(train.images, train.labels, level, n, ops)
        vb = AugmentedBatch(val.images, val.labels, level, n, ops)
        return cls(tb, vb, int(np.prod(train.image_shape)), train.num_classes, center)

    def model(self, w):
        return TinyClassifier.from_vector(w, self.dim, self.num_classes, self.center)

    def _grads(self, batch, w, alpha):
        loss, gw, gb, ga = batch.loss_and_grads(self.model(w), alpha)
        if not np.isfinite(loss):
            raise NonFiniteLoss("loss is not finite")
        return loss, np.concatenate([gw.ravel(), gb]), ga

    def train_grad_w(self, w, alpha):
        return self._grads(self.train_batch, w, alpha)[1]

    def train_grad_alpha(self, w, alpha):
        return self._grads(self.train_batch, w, alpha)[2]

    def val_grad_w(self, w, alpha):
        return self._grads(self.val_batch, w, alpha)[1]

    def val_grad_alpha(self, w, alpha):
        return self._grads(self.val_batch, w, alpha)[2]

    def train_loss(self, w, alpha):
        return self._grads(self.train_batch, w, alpha)[0]

    def val_loss(self, w, alpha):
        return self._grads(self.val_batch, w, alpha)[0]


def virtual_step(problem, w, alpha, xi):
    """``w' = w - xi * dL_train(w, alpha)/dw``; exactly ``w`` when xi is 0."""
    if xi < 0:
        raise ValueError(f"xi must be >= 0, got {xi}")
    w = np.asarray(w, dtype=np.float64)
    if xi == 0:
        return w.copy()
    return w - xi * problem.train_grad_w(w, alpha)


def second_order_term(problem, w, alpha, cfg):
    """``xi * (d^2 L_train / d alpha d w) . v`` with ``v = dL_val(w')/dw'``.

    The mixed product is a central difference of the alpha-gradient of the
    training loss along ``v``::

        (g(w + e v) - g(w - e v)) / (2 e),   e = cfg.epsilon / ||v||

    Returns zeros (shape of ``alpha``) when ``||v|| < 1e-12``.
    """
    w = np.asarray(w, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    w_prime = virtual_step(problem, w, alpha, cfg.xi)
    v = np.asarray(problem.val_grad_w(w_prime, alpha), dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if not np.isfinite(norm):
        raise NonFiniteLoss("validation gradient is not finite")
    if norm < _V_NORM_FLOOR:
        return np.zeros_like(alpha)
    eps = cfg.epsilon / norm
    g_plus = problem.train_grad_alpha(w + eps * v, alpha)
    g_minus = problem.train_grad_alpha(w - eps * v, alpha)
    out = cfg.xi * (np.asarray(g_plus) - np.asarray(g_minus)) / (2.0 * eps)
    if not np.all(np.isfinite(out)):
        raise NonFiniteLoss("second-order estimate is not finite")
    return out


@dataclass
class DensityTrace:
    """Per-step record of a density-matching run."""

    num_slots: int
    steps: list = field(default_factory=list)  # (step, train_loss, val_loss, probs)
    metadata: dict = field(default_factory=dict)

    def record(self, step, train_loss, val_loss, probs):
        self.steps.append((step, float(train_loss), float(val_loss), np.array(probs)))

    def header(self):
        cols = ["step", "train_loss", "val_loss"]
        for j in range(self.num_slots):
            cols.extend(f"{kind.value}@{j + 1}" for kind in ALL_KINDS)
        return cols

    def to_csv(self):
        """Columns: step, train_loss, val_loss, then ``kind@slot`` (1-based)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        for step, tl, vl, probs in self.steps:
            row = [step, f"{tl:.6f}", f"{vl:.6f}"]
            row.extend(f"{p:.6f}" for p in probs.T.ravel())
            writer.writerow(row)
        return buf.getvalue()


def _minibatch(data, rng, batch_size):
    if batch_size >= len(data):
        return np.arange(len(data))
    return np.sort(rng.choice(len(data), size=batch_size, replace=False))


def train_density(
    alpha0,
    train,
    val,
    steps,
    cfg,
    use_second_order=False,
    level=5.0,
    model=None,
    model_lr=0.5,
    batch_size=32,
    seed=0,
):
    """Alternate one classifier SGD step with one logit step.

    Both steps see relaxed-augmented batches. The logit step is
    ``alpha -= alpha_lr * (first_order - second_order)`` where the first-order
    term is the validation-loss gradient at the current weights and the
    second-order term is only included when ``use_second_order`` is set.

    Args:
        alpha0: initial ``(K, N)`` logits.
        train, val: ``Dataset`` objects with equal image shapes.
        steps: number of alternations (>= 1).
        cfg: ``BilevelConfig``.
        level: magnitude used by every transform in the relaxation.
        model: starting ``TinyClassifier`` (zeros when omitted).
        model_lr: SGD step size of the classifier.
        batch_size: minibatch size for both splits.
        seed: controls the minibatch draws.

    Returns:
        ``(alpha, DensityTrace)``.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    alpha = np.array(alpha0, dtype=np.float64)
    n_slots = alpha.shape[1]
    dim = int(np.prod(train.image_shape))
    if model is None:
        model = TinyClassifier.zeros(dim, train.num_classes, features(train.images).mean(axis=0))
    w = model.to_vector()
    # chains are alpha-independent: compute them once per split
    full = MixtureProblem.from_datasets(train, val, level, n_slots, center=model.center)
    rng = DeterministicRng(seed).split("density").numpy_generator()
    trace = DensityTrace(
        n_slots,
        metadata={
            "schedule": "alternating: 1 classifier SGD step, then 1 logit step",
            "relaxation": "expected image over all transform chains, directions fixed to +1",
            "level": level,
            "batch_size": batch_size,
            "model_lr": model_lr,
            "xi": cfg.xi,
            "epsilon": cfg.epsilon,
            "alpha_lr": cfg.alpha_lr,
            "second_order": bool(use_second_order),
        },
    )
    for step in range(steps):
        ti = _minibatch(train, rng, batch_size)
        vi = _minibatch(val, rng, batch_size)
        problem = MixtureProblem(
            _take(full.train_batch, ti), _take(full.val_batch, vi), dim, train.num_classes, model.center
        )
        train_loss, gw, _ = problem._grads(problem.train_batch, w, alpha)
        w = w - model_lr * gw
        val_loss, _, grad = problem._grads(problem.val_batch, w, alpha)
        if use_second_order:
            grad = grad - second_order_term(problem, w, alpha, cfg)
        trace.record(step, train_loss, val_loss, alpha_probabilities(alpha))
        alpha = alpha - cfg.alpha_lr * grad
    trace.metadata["final_model_norm"] = float(np.linalg.norm(w))
    return alpha, trace


def _take(batch, indices):
    """Row-subset of an ``AugmentedBatch`` without recomputing chains."""
    sub = AugmentedBatch.__new__(AugmentedBatch)
    sub.ops = batch.ops
    sub.n = batch.n
    sub.labels = batch.labels[indices]
    sub.num_chains = batch.num_chains
    sub._flat = batch._flat[:, indices]
    sub.chains = None
    return sub


def pretrain_model(train, epochs=20, lr=0.5, seed=0, batch_size=32):
    """Plain (unaugmented) classifier used to warm-start density matching."""
    return train_classifier(train, None, epochs, lr, seed, batch_size)


def classifier_virtual_step(model, train_batch, alpha, level, xi):
    """``virtual_step`` on a ``TinyClassifier`` and a training ``Dataset``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    tb = AugmentedBatch(train_batch.images, train_batch.labels, level, alpha.shape[1])
    problem = MixtureProblem(tb, tb, model.dim, model.num_classes, model.center)
    w = virtual_step(problem, model.to_vector(), alpha, xi)
    return problem.model(w)


def classifier_second_order_term(alpha, model, train_batch, val_batch, level, cfg):
    """``second_order_term`` for a ``TinyClassifier`` on two ``Dataset`` batches."""
    alpha = np.asarray(alpha, dtype=np.float64)
    n = alpha.shape[1]
    tb = AugmentedBatch(train_batch.images, train_batch.labels, level, n)
    vb = AugmentedBatch(val_batch.images, val_batch.labels, level, n)
    problem = MixtureProblem(tb, vb, model.dim, model.num_classes, model.center)
    return second_order_term(problem, model.to_vector(), alpha, cfg)
