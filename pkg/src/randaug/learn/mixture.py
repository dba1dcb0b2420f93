"""Differentiable relaxation of the sampler with learnable selection logits.

``alpha`` is a ``(K, N)`` logit matrix; column ``j`` is a softmax
distribution over the K transforms for operation slot ``j``. The relaxed
image is the expectation of the sampled pipeline's real-valued output::

    x(alpha) = sum over chains (i_1..i_N) of
               prod_j p[i_j, j] * T_{i_N}( ... T_{i_1}(x0) ... )

For N = 1 this is the per-slot soft mixture ``sum_i p_i T_i(x0)``. Chain
outputs do not depend on ``alpha``, so the alpha-gradient needs only
transform outputs, never pixel Jacobians; that is why posterize, equalize and
autoContrast still receive gradients. The cost is K**N transform chains per
image.
"""

from functools import partial

import numpy as np

from randaug.errors import DimensionMismatch
from randaug.learn.classifier import cross_entropy, features, loss_and_grads, softmax
from randaug.transforms import ALL_KINDS, real_transform


def _op(kind):
    return partial(_apply_kind, kind)


def _apply_kind(kind, x, level):
    return real_transform(x, kind, level)


REAL_OPS = tuple(_op(kind) for kind in ALL_KINDS)


def uniform_alpha(k=len(ALL_KINDS), n=2):
    """Zero logits: every transform equally likely in every slot."""
    return np.zeros((k, n))


def alpha_probabilities(alpha):
    """Column-wise softmax of the logit matrix."""
    return softmax(np.asarray(alpha, dtype=np.float64), axis=0)


def _check_alpha(alpha, ops):
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2 or alpha.shape[0] != len(ops):
        raise DimensionMismatch(f"alpha must be ({len(ops)}, N), got {alpha.shape}")
    return alpha


def to_real(images):
    x = np.asarray(images)
    return x.astype(np.float64) / 255.0 if x.dtype == np.uint8 else x.astype(np.float64)


def chain_outputs(x0, level, n, ops=REAL_OPS):
    """Every transform chain of length ``n`` applied to ``x0``.

    Returns an array of shape ``(K,) * n + x0.shape`` whose entry
    ``[i_1, ..., i_n]`` is ``T_{i_n}(...T_{i_1}(x0))``.
    """
    layer = np.asarray(x0, dtype=np.float64)
    for depth in range(n):
        layer = np.stack([op(layer, level) for op in ops], axis=depth)
    return layer


def chain_weights(probs):
    """Outer product of the slot distributions, shape ``(K,) * N``."""
    w = np.ones(())
    for j in range(probs.shape[1]):
        w = np.multiply.outer(w, probs[:, j])
    return w


def mix(chains, probs):
    n = probs.shape[1]
    return np.tensordot(chain_weights(probs), chains, axes=n)


def mixture_forward(img, alpha, level, ops=REAL_OPS):
    """Relaxed policy output for one image (or a batch) as floats in [0, 1]."""
    ops = tuple(ops)
    alpha = _check_alpha(alpha, ops)
    chains = chain_outputs(to_real(img), level, alpha.shape[1], ops)
    return mix(chains, alpha_probabilities(alpha))


def slot_marginals(scores, probs):
    """``d loss / d p[i, j]`` from per-chain scores ``d loss / d weight(chain)``."""
    n = probs.shape[1]
    out = np.empty_like(probs)
    for j in range(n):
        t = scores
        for other in reversed(range(n)):
            if other != j:
                t = _contract(t, probs[:, other], other)
        out[:, j] = t
    return out


def _contract(t, p, axis):
    # elementwise product and sum (not BLAS) so identical rows reduce identically
    shape = [1] * t.ndim
    shape[axis] = len(p)
    return (t * p.reshape(shape)).sum(axis=axis)


def softmax_backward(probs, d_probs):
    """Chain rule through the column-wise softmax."""
    # shift-invariant; subtracting row 0 makes equal entries give exactly 0
    d_probs = d_probs - d_probs[:1]
    return probs * (d_probs - (probs * d_probs).sum(axis=0, keepdims=True))


class AugmentedBatch:
    """A labelled batch with its transform chains precomputed.

    Chains are independent of ``alpha``, so one batch can be re-scored under
    many logit matrices and model weights cheaply.
    """

    def __init__(self, images, labels, level, n, ops=REAL_OPS):
        self.ops = tuple(ops)
        self.n = n
        self.labels = np.asarray(labels, dtype=np.int64)
        self.chains = chain_outputs(to_real(images), level, n, self.ops)
        self.num_chains = len(self.ops) ** n
        self._flat = self.chains.reshape(self.num_chains, len(self.labels), -1)

    def inputs(self, alpha):
        """Flattened mixture images ``(B, D)`` under ``alpha``."""
        probs = alpha_probabilities(_check_alpha(alpha, self.ops))
        w = chain_weights(probs).reshape(-1)
        return np.tensordot(w, self._flat, axes=1)

    def loss_and_grads(self, model, alpha):
        """``(loss, d_weights, d_bias, d_alpha)`` of mean cross-entropy."""
        alpha = _check_alpha(alpha, self.ops)
        probs = alpha_probabilities(alpha)
        x = self.inputs(alpha)
        loss, gw, gb, gx = loss_and_grads(model, x, self.labels)
        scores = (self._flat * gx).reshape(self.num_chains, -1).sum(axis=1)
        d_probs = slot_marginals(scores.reshape((len(self.ops),) * self.n), probs)
        return loss, gw, gb, softmax_backward(probs, d_probs)


def first_order_alpha_grad(alpha, model, val_batch, level, ops=REAL_OPS):
    """Gradient of the validation loss on relaxed-augmented images w.r.t. alpha.

    Args:
        alpha: ``(K, N)`` logits.
        model: ``TinyClassifier``.
        val_batch: ``Dataset`` (must be non-empty).
        level: magnitude used by every transform.
    """
    if len(val_batch) == 0:
        raise ValueError("validation batch is empty")
    alpha = _check_alpha(alpha, tuple(ops))
    batch = AugmentedBatch(val_batch.images, val_batch.labels, level, alpha.shape[1], ops)
    if model.dim != batch._flat.shape[-1]:
        raise DimensionMismatch(f"model expects {model.dim} features, got {batch._flat.shape[-1]}")
    return batch.loss_and_grads(model, alpha)[3]


def relaxed_loss(alpha, model, data, level, ops=REAL_OPS):
    """Mean cross-entropy on ``mixture_forward`` images; used as an oracle."""
    x = features(mixture_forward(data.images, alpha, level, ops))
    return cross_entropy(model.logits(x), data.labels)[0]
