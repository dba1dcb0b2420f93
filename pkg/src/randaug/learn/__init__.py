"""Desk-scale classifier and differentiable learning of transform probabilities."""

from randaug.learn.bilevel import (
    BilevelConfig,
    DensityTrace,
    MixtureProblem,
    classifier_second_order_term,
    classifier_virtual_step,
    second_order_term,
    train_density,
    virtual_step,
)
from randaug.learn.classifier import (
    ClassifierEvaluator,
    Dataset,
    TinyClassifier,
    evaluate_accuracy,
    train_classifier,
)
from randaug.learn.mixture import (
    AugmentedBatch,
    alpha_probabilities,
    first_order_alpha_grad,
    mixture_forward,
    relaxed_loss,
    uniform_alpha,
)

__all__ = [
    "AugmentedBatch",
    "BilevelConfig",
    "ClassifierEvaluator",
    "Dataset",
    "DensityTrace",
    "MixtureProblem",
    "TinyClassifier",
    "alpha_probabilities",
    "classifier_second_order_term",
    "classifier_virtual_step",
    "evaluate_accuracy",
    "first_order_alpha_grad",
    "mixture_forward",
    "relaxed_loss",
    "second_order_term",
    "train_classifier",
    "train_density",
    "uniform_alpha",
    "virtual_step",
]
