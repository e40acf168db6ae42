"""Source pretraining, the adaptation loop, and evaluation metrics.

The adaptation objective per batch is the mean neighborhood-consistency
loss plus `alpha1` times the mean feature-alignment loss plus `alpha2`
times the dispersal loss. Mini-batch gradients are assembled analytically
and applied with momentum SGD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .banks import FeatureBank, ScoreBank, init_banks, knn, update_banks
from .errors import InvalidInputError, NumericalError
from .losses import (
    LossBreakdown,
    AffinityWeights,
    affinity_weights,
    decay_factor,
    fd_loss,
    ifa_loss,
    lambda_schedule,
    snc_loss,
    softmax_vjp,
)
from .model import (
    GradientSet,
    Model,
    OptimizerState,
    forward,
    grad_params,
    init_model,
    init_optimizer,
    sgd_step,
    validate_model,
)
from .numerics import RngState
from .stats import ClassStatistics, update_class_stats


@dataclass
class AdaptConfig:
    """Hyperparameters for adaptation (and the shared optimizer settings)."""

    k: int = 5
    alpha1: float = 1e-4
    alpha2: float = 10.0
    beta: float = 5.0
    lambda0: float = 5.0
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 15
    seed: int = 0
    bank_fraction: float = 1.0


def validate_config(config: AdaptConfig) -> None:
    if config.k < 1:
        raise InvalidInputError("k must be >= 1")
    if config.alpha1 < 0 or config.alpha2 < 0:
        raise InvalidInputError("loss weights must be >= 0")
    if config.beta < 0:
        raise InvalidInputError("beta must be >= 0")
    if config.lambda0 < 0:
        raise InvalidInputError("lambda0 must be >= 0")
    if config.lr < 0:
        raise InvalidInputError("learning rate must be >= 0")
    if not 0.0 <= config.momentum < 1.0:
        raise InvalidInputError("momentum must lie in [0, 1)")
    if config.batch_size < 2:
        raise InvalidInputError("batch_size must be >= 2")
    if config.epochs < 1:
        raise InvalidInputError("epochs must be >= 1")
    if not 0.0 < config.bank_fraction <= 1.0:
        raise InvalidInputError("bank_fraction must lie in (0, 1]")


@dataclass
class EvalMetrics:
    accuracy: float
    per_class_accuracy: np.ndarray  # aligned with present_classes
    per_class_mean: float
    harmonic_mean: float
    macro_f1: float
    present_classes: list[int]
    absent_classes: list[int]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": [float(v) for v in self.per_class_accuracy],
            "per_class_mean": self.per_class_mean,
            "harmonic_mean": self.harmonic_mean,
            "macro_f1": self.macro_f1,
            "present_classes": list(self.present_classes),
            "absent_classes": list(self.absent_classes),
        }


@dataclass
class MetricsTrace:
    """Per-iteration loss breakdowns plus optional per-epoch eval metrics."""

    iterations: list[LossBreakdown] = field(default_factory=list)
    epoch_metrics: list[EvalMetrics] = field(default_factory=list)


def pseudo_label(probs: np.ndarray) -> int:
    """Hard label = argmax of a class distribution; ties pick the lowest index."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)):
        raise InvalidInputError("probs must be a nonempty finite vector")
    if p.min() < 0 or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidInputError("probs must be a probability distribution")
    return int(np.argmax(p))


def metrics_from_confusion(confusion: np.ndarray) -> EvalMetrics:
    """Metrics from a confusion matrix with rows = true class, cols = predicted.

    Classes with no true samples are excluded from the per-class aggregates
    and reported in `absent_classes`.
    """
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] == 0:
        raise InvalidInputError("confusion matrix must be square and nonempty")
    if cm.min() < 0:
        raise InvalidInputError("confusion matrix counts must be >= 0")
    total = cm.sum()
    if total <= 0:
        raise InvalidInputError("confusion matrix must contain at least one sample")

    row_sums = cm.sum(axis=1)
    present = [c for c in range(cm.shape[0]) if row_sums[c] > 0]
    absent = [c for c in range(cm.shape[0]) if row_sums[c] == 0]

    accuracy = float(np.trace(cm) / total)
    recalls = np.array([cm[c, c] / row_sums[c] for c in present])
    per_class_mean = float(recalls.mean())
    if np.any(recalls == 0.0):
        harmonic = 0.0
    else:
        harmonic = float(len(present) / np.sum(1.0 / recalls))

    f1s = []
    col_sums = cm.sum(axis=0)
    for idx, c in enumerate(present):
        recall = recalls[idx]
        precision = cm[c, c] / col_sums[c] if col_sums[c] > 0 else 0.0
        f1s.append(0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall))

    return EvalMetrics(
        accuracy=accuracy,
        per_class_accuracy=recalls,
        per_class_mean=per_class_mean,
        harmonic_mean=harmonic,
        macro_f1=float(np.mean(f1s)),
        present_classes=present,
        absent_classes=absent,
    )


def evaluate(model: Model, dataset) -> EvalMetrics:
    """Accuracy, per-class accuracy, their arithmetic and harmonic means,
    and macro-F1 of the model's argmax predictions on a labeled dataset."""
    validate_model(model)
    if dataset.labels is None:
        raise InvalidInputError("evaluate requires a labeled dataset")
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= model.n_classes:
        raise InvalidInputError("labels out of range for the model's classes")
    _, _, probs = forward(model, dataset.inputs)
    preds = np.argmax(probs, axis=1)
    cm = np.zeros((model.n_classes, model.n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return metrics_from_confusion(cm)


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.size, batch_size):
        yield order[start : start + batch_size]


def pretrain_source(
    config: AdaptConfig,
    source,
    hidden_dims: tuple[int, ...] = (16,),
    feature_dim: int = 8,
) -> Model:
    """Supervised pretraining on the labeled source domain (cross-entropy,
    momentum SGD). Returns the trained model; the caller keeps the config."""
    if source.labels is None:
        raise InvalidInputError("pretraining requires labels")
    if source.n_classes is None or source.n_classes < 2:
        raise InvalidInputError("source dataset must declare >= 2 classes")
    labels = np.asarray(source.labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= source.n_classes:
        raise InvalidInputError("source labels out of range")
    if config.lr < 0 or not 0.0 <= config.momentum < 1.0:
        raise InvalidInputError("invalid optimizer settings")
    if config.batch_size < 1 or config.epochs < 0:
        raise InvalidInputError("invalid pretraining schedule")

    init_rng, order_rng = RngState(config.seed).split(2)
    model = init_model(source.dim, hidden_dims, feature_dim, source.n_classes, init_rng)
    opt = init_optimizer(model, config.momentum, config.lr)
    m = source.size
    for _ in range(config.epochs):
        perm = order_rng.generator.permutation(m)
        for batch in _batches(perm, config.batch_size):
            x = source.inputs[batch]
            y = labels[batch]
            _, _, probs = forward(model, x)
            dlogits = probs.copy()
            dlogits[np.arange(batch.size), y] -= 1.0
            dlogits /= batch.size
            grads = grad_params(model, x, dlogits, np.zeros((batch.size, model.feature_dim)))
            model, opt = sgd_step(model, grads, opt)
    return model


def batch_objective(
    model: Model,
    batch_inputs: np.ndarray,
    neighbor_probs: list[np.ndarray],
    bank_batch_probs: np.ndarray,
    batch_pseudo_labels: np.ndarray,
    stats: ClassStatistics,
    affinity: AffinityWeights,
    decay: float,
    lam: float,
    alpha1: float,
    alpha2: float,
) -> tuple[LossBreakdown, GradientSet, bool]:
    """One batch's loss breakdown and full parameter gradient.

    `bank_batch_probs[i]` is the stored score-bank row for batch sample i;
    only row i's self term is differentiated through the live network.
    Feature-alignment and dispersal terms are skipped (reported as 0) when
    their weight is exactly 0.
    """
    b = batch_inputs.shape[0]
    if b < 2:
        raise InvalidInputError("batch must contain at least 2 samples")
    if len(neighbor_probs) != b or bank_batch_probs.shape[0] != b:
        raise InvalidInputError("neighbor and bank rows must match the batch")
    features, _, probs = forward(model, batch_inputs)
    labels = np.asarray(batch_pseudo_labels, dtype=np.int64)

    dlogits = np.zeros((b, model.n_classes))
    dfeatures = np.zeros((b, model.feature_dim))
    clf_w_extra = np.zeros_like(model.clf_weights)
    clf_b_extra = np.zeros_like(model.clf_bias)

    snc_sum = 0.0
    ifa_sum = 0.0
    for i in range(b):
        value, dprob = snc_loss(probs[i], neighbor_probs[i], bank_batch_probs, i, decay)
        snc_sum += value
        dlogits[i] += softmax_vjp(probs[i], dprob) / b
        if alpha1 != 0.0:
            cov = stats.covs[labels[i]]
            iv, dz, dw, db = ifa_loss(features[i], cov, model.clf_weights, model.clf_bias, lam)
            ifa_sum += iv
            dfeatures[i] += (alpha1 / b) * dz
            clf_w_extra += (alpha1 / b) * dw
            clf_b_extra += (alpha1 / b) * db

    fd_value = 0.0
    fd_degenerate = True
    if alpha2 != 0.0:
        fd_value, fd_grad, fd_degenerate = fd_loss(features, labels, affinity)
        dfeatures += alpha2 * fd_grad

    snc_mean = snc_sum / b
    ifa_mean = ifa_sum / b
    total = snc_mean + alpha1 * ifa_mean + alpha2 * fd_value
    grads = grad_params(model, batch_inputs, dlogits, dfeatures)
    grads.clf_weights += clf_w_extra
    grads.clf_bias += clf_b_extra
    breakdown = LossBreakdown(
        snc=snc_mean, ifa=ifa_mean, fd=fd_value, total=total, decay=decay, lam=lam
    )
    return breakdown, grads, fd_degenerate


def iterations_per_epoch(n_samples: int, batch_size: int) -> int:
    """Full batches plus the trailing partial batch when it has >= 2 samples."""
    full, rem = divmod(n_samples, batch_size)
    return full + (1 if rem >= 2 else 0)


def adapt(
    config: AdaptConfig,
    model: Model,
    target,
    eval_data=None,
) -> tuple[Model, MetricsTrace]:
    """Label-free adaptation of a pretrained model to the target domain.

    `target` must be the unlabeled view; pass `eval_data` (labeled, for
    diagnostics only) to record per-epoch metrics. Raises NumericalError
    with iteration diagnostics if the objective stops being finite.
    """
    validate_config(config)
    validate_model(model)
    if target.labels is not None:
        raise InvalidInputError("adapt consumes the unlabeled view; call .unlabeled() first")
    if target.n_classes is not None and target.n_classes != model.n_classes:
        raise InvalidInputError("target class count disagrees with the model")
    if target.dim != model.input_dim:
        raise InvalidInputError("target width disagrees with the model")
    m = target.size
    if m < config.k + 1:
        raise InvalidInputError("need at least k+1 target samples")

    per_epoch = iterations_per_epoch(m, config.batch_size)
    if per_epoch == 0:
        raise InvalidInputError("no usable batches (every batch has < 2 samples)")
    total_iters = config.epochs * per_epoch
    # Schedules are pinned at both ends: first iteration sees decay 1 and
    # lambda 0, the last sees the terminal values.
    denom = max(total_iters - 1, 1)

    fbank, sbank = init_banks(model, target.inputs, config.bank_fraction)
    stats = ClassStatistics.empty(model.n_classes, model.feature_dim)
    order_rng = RngState(config.seed)
    trace = MetricsTrace()

    t = 0
    current = model
    opt = init_optimizer(current, config.momentum, config.lr)
    for _ in range(config.epochs):
        bank_labels = np.argmax(sbank.probs, axis=1)
        affinity = affinity_weights(sbank, bank_labels)
        perm = order_rng.generator.permutation(m)
        for batch in _batches(perm, config.batch_size):
            if batch.size < 2:
                continue
            x = target.inputs[batch]
            try:
                features, _, probs = forward(current, x)
            except InvalidInputError as exc:
                # Diverged parameters overflow the forward pass before the
                # objective itself can go non-finite; same failure class.
                raise NumericalError(
                    f"non-finite forward pass at iteration {t}: {exc}"
                ) from exc
            update_banks(fbank, sbank, batch, features, probs)
            neighbor_probs = []
            for idx in batch:
                hit = knn(fbank, int(idx), config.k)
                neighbor_probs.append(sbank.probs[hit.indices])
            labels = np.argmax(probs, axis=1)
            stats = update_class_stats(stats, features, labels)

            decay = decay_factor(t, denom, config.beta)
            lam = lambda_schedule(t, denom, config.lambda0)
            try:
                breakdown, grads, _ = batch_objective(
                    current,
                    x,
                    neighbor_probs,
                    sbank.probs[batch],
                    labels,
                    stats,
                    affinity,
                    decay,
                    lam,
                    config.alpha1,
                    config.alpha2,
                )
            except InvalidInputError as exc:
                # Every argument was produced by this loop, so a precondition
                # trip here means diverged parameters or statistics overflowed
                # inside a loss term.
                raise NumericalError(
                    f"non-finite loss evaluation at iteration {t}: {exc}"
                ) from exc
            if not np.isfinite(breakdown.total):
                raise NumericalError(
                    f"non-finite objective at iteration {t}: "
                    f"snc={breakdown.snc!r} ifa={breakdown.ifa!r} fd={breakdown.fd!r} "
                    f"decay={decay!r} lambda={lam!r}"
                )
            current, opt = sgd_step(current, grads, opt)
            trace.iterations.append(breakdown)
            t += 1
        if eval_data is not None:
            trace.epoch_metrics.append(evaluate(current, eval_data))
    return current, trace
