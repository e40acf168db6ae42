"""Objective components for adaptation: the neighborhood-consistency loss
with its decay schedule, the closed-form augmentation alignment bound with
its Monte Carlo oracle, the between-class dispersal penalty with affinity
weights, and the schedule helpers.

Every loss returns its value together with exact analytic gradients with
respect to its live inputs. Rows fetched from memory banks and the running
class covariances are constants by contract; only the quantities produced
by the current forward pass carry gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .banks import ScoreBank
from .errors import InvalidInputError
from .numerics import RngState, check_symmetric, row_softmax, sample_gaussian


@dataclass
class LossBreakdown:
    snc: float
    ifa: float
    fd: float
    total: float
    decay: float
    lam: float


@dataclass
class AffinityWeights:
    """Pairwise class-confusability weights a_ij = mean_pred_i . mean_pred_j."""

    matrix: np.ndarray  # (C, C) symmetric, entries in [0, 1]
    mean_preds: np.ndarray  # (C, C): per-class mean prediction rows


def decay_factor(iteration: int, max_iter: int, beta: float) -> float:
    """(1 + 10*iteration/max_iter)^(-beta); 1 at the start of training."""
    if max_iter < 1:
        raise InvalidInputError("max_iter must be >= 1")
    if not 0 <= iteration <= max_iter:
        raise InvalidInputError("iteration must lie in [0, max_iter]")
    if beta < 0:
        raise InvalidInputError("beta must be >= 0")
    return float((1.0 + 10.0 * iteration / max_iter) ** (-beta))


def lambda_schedule(iteration: int, max_iter: int, lambda0: float) -> float:
    """Linear ramp from 0 to lambda0 across training."""
    if max_iter < 1:
        raise InvalidInputError("max_iter must be >= 1")
    if not 0 <= iteration <= max_iter:
        raise InvalidInputError("iteration must lie in [0, max_iter]")
    return float(lambda0 * iteration / max_iter)


def _check_distribution_rows(rows: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise InvalidInputError(f"{name} must be rows of class distributions")
    if arr.min() < 0.0 or np.abs(arr.sum(axis=1) - 1.0).max() > 1e-9:
        raise InvalidInputError(f"{name} rows are not valid distributions")
    return arr


def softmax_vjp(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    inner = float(np.dot(upstream, probs))
    return probs * (upstream - inner)


def snc_loss(
    probs_i,
    neighbor_probs,
    batch_probs,
    self_index: int,
    decay: float,
) -> tuple[float, np.ndarray]:
    """Neighborhood-consistency loss for one sample.

    value = -(2/K) * sum_j probs_i . neighbor_j
            + decay * sum_k (probs_i . batch_k)^2

    The batch sum includes the self pair, whose both factors are the live
    probs_i; all other neighbor/batch rows are bank constants. The returned
    gradient is the exact partial w.r.t. probs_i under that convention.
    """
    p = _check_distribution_rows(probs_i, "probs_i")[0]
    neighbors = _check_distribution_rows(neighbor_probs, "neighbor_probs")
    batch = _check_distribution_rows(batch_probs, "batch_probs")
    if neighbors.shape[1] != p.size or batch.shape[1] != p.size:
        raise InvalidInputError("class-count mismatch between probability rows")
    if not 0 <= self_index < batch.shape[0]:
        raise InvalidInputError("self_index out of range")
    if not np.isfinite(decay) or decay < 0.0:
        raise InvalidInputError("decay must be finite and >= 0")

    k = neighbors.shape[0]
    dots = batch @ p
    self_dot = float(p @ p)
    dots[self_index] = self_dot

    first = -(2.0 / k) * float((neighbors @ p).sum())
    second = decay * float((dots**2).sum())
    value = first + second

    quad = 2.0 * dots[:, None] * batch
    grad_quad = quad.sum(axis=0) - quad[self_index] + 4.0 * self_dot * p
    grad = -(2.0 / k) * neighbors.sum(axis=0) + decay * grad_quad
    return value, grad


def ifa_loss(
    feature,
    cov,
    clf_weights,
    clf_bias,
    lam: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form upper bound on the expected augmented-pair loss.

    With logits = W z + b and q[c,c'] = (w_c' - w_c)^T cov (w_c' - w_c):

        value = -2 * sum_c [ logit_c - logsumexp_c'( logit_c' + (lam/2) q[c,c'] ) ]

    Returns (value, d_feature, d_clf_weights, d_clf_bias), treating cov as a
    constant. All log-sum-exps are max-shifted.
    """
    z = np.asarray(feature, dtype=np.float64)
    weights = np.asarray(clf_weights, dtype=np.float64)
    bias = np.asarray(clf_bias, dtype=np.float64)
    if z.ndim != 1 or weights.ndim != 2 or weights.shape[1] != z.size:
        raise InvalidInputError("feature/classifier shapes disagree")
    if bias.shape != (weights.shape[0],):
        raise InvalidInputError("classifier bias shape mismatch")
    if not np.isfinite(lam) or lam < 0.0:
        raise InvalidInputError("lambda must be finite and >= 0")
    sigma = check_symmetric(cov, "cov")
    if sigma.shape[0] != z.size:
        raise InvalidInputError("cov dimension does not match the feature")

    logits = weights @ z + bias
    gram = weights @ sigma @ weights.T
    diag = np.diagonal(gram)
    quad = diag[None, :] - 2.0 * gram + diag[:, None]  # quad[c, c']
    shifted = logits[None, :] + 0.5 * lam * quad
    row_max = shifted.max(axis=1, keepdims=True)
    lse = (row_max + np.log(np.exp(shifted - row_max).sum(axis=1, keepdims=True))).ravel()
    value = -2.0 * float(logits.sum() - lse.sum())

    resp = row_softmax(shifted)  # resp[c, c']
    d_logits = -2.0 * (1.0 - resp.sum(axis=0))
    d_bias = d_logits
    d_feature = weights.T @ d_logits
    d_weights = np.outer(d_logits, z)
    if lam > 0.0:
        t = lam * resp
        col = t.sum(axis=0)
        row = t.sum(axis=1)
        d_weights = d_weights + 2.0 * (((col + row)[:, None] * weights - (t + t.T) @ weights) @ sigma)
    return value, d_feature, d_weights, d_bias


def efa_mc_estimate(
    feature,
    cov,
    clf_weights,
    clf_bias,
    lam: float,
    n_pairs: int,
    rng: RngState,
) -> tuple[float, float]:
    """Monte Carlo estimate of the expected augmented-pair loss.

    Draws n_pairs independent pairs from N(feature, lam*cov) and averages
    -log(softmax(W z_j + b) . softmax(W z_k + b)). Returns (mean, standard
    error), stderr = sample stdev / sqrt(n_pairs).
    """
    if n_pairs < 2:
        raise InvalidInputError("n_pairs must be >= 2")
    if not np.isfinite(lam) or lam < 0.0:
        raise InvalidInputError("lambda must be finite and >= 0")
    sigma = check_symmetric(cov, "cov")
    weights = np.asarray(clf_weights, dtype=np.float64)
    bias = np.asarray(clf_bias, dtype=np.float64)
    draws = sample_gaussian(feature, lam * sigma, 2 * n_pairs, rng)
    probs = row_softmax(draws @ weights.T + bias)
    dots = (probs[:n_pairs] * probs[n_pairs:]).sum(axis=1)
    values = -np.log(dots)  # dots >= 1/C by Cauchy-Schwarz, so log is safe
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / np.sqrt(n_pairs))
    return mean, stderr


def affinity_weights(sbank: ScoreBank, pseudo_labels) -> AffinityWeights:
    """Epoch-start class affinities from bank predictions.

    mean_pred_c is the mean bank probability row over samples pseudo-labeled
    c (zero vector when the class is unpopulated), and the affinity matrix is
    mean_preds @ mean_preds.T, so unpopulated classes get zero rows/columns.
    """
    labels = np.asarray(pseudo_labels, dtype=np.int64).ravel()
    if labels.shape[0] != sbank.size:
        raise InvalidInputError("pseudo-labels must align with bank rows")
    n_classes = sbank.probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InvalidInputError("pseudo-label out of range")
    mean_preds = np.zeros((n_classes, n_classes))
    for c in range(n_classes):
        member = labels == c
        if member.any():
            mean_preds[c] = sbank.probs[member].mean(axis=0)
    return AffinityWeights(matrix=mean_preds @ mean_preds.T, mean_preds=mean_preds)


def fd_loss(
    batch_features,
    batch_pseudo_labels,
    affinity: AffinityWeights,
) -> tuple[float, np.ndarray, bool]:
    """Between-class dispersal penalty on per-batch class covariances.

    For every ordered pair (i, j), i != j, of classes with >= 2 batch
    members and nonzero covariance Frobenius norms:

        value += -(1/2) * a_ij * (1 - tr(cov_i cov_j) / (|cov_i| |cov_j|))

    The covariances are population-normalized within the batch and carry
    gradient back into batch_features. Returns (value, grad, degenerate)
    where degenerate flags a batch with no class of >= 2 members (value and
    gradient are zero in that case).
    """
    feats = np.asarray(batch_features, dtype=np.float64)
    labels = np.asarray(batch_pseudo_labels, dtype=np.int64).ravel()
    if feats.ndim != 2 or labels.shape[0] != feats.shape[0]:
        raise InvalidInputError("features and pseudo-labels must align")
    aff = affinity.matrix
    if labels.size and (labels.min() < 0 or labels.max() >= aff.shape[0]):
        raise InvalidInputError("pseudo-label out of range")

    grad = np.zeros_like(feats)
    populated = [c for c in np.unique(labels) if (labels == c).sum() >= 2]
    if not populated:
        return 0.0, grad, True

    covs: dict[int, np.ndarray] = {}
    norms: dict[int, float] = {}
    for c in populated:
        rows = feats[labels == c]
        mu = rows.mean(axis=0)
        centered = rows - mu
        covs[c] = centered.T @ centered / rows.shape[0]
        norms[c] = float(np.linalg.norm(covs[c]))

    value = 0.0
    dcov = {c: np.zeros_like(covs[c]) for c in populated}
    for ci in populated:
        for cj in populated:
            if ci == cj or norms[ci] == 0.0 or norms[cj] == 0.0:
                continue
            trace = float((covs[ci] * covs[cj]).sum())
            sim = trace / (norms[ci] * norms[cj])
            weight = aff[ci, cj]
            value -= 0.5 * weight * (1.0 - sim)
            # d sim / d cov_i = cov_j/(ni*nj) - trace*cov_i/(ni^3*nj)
            coef = 0.5 * weight
            dcov[ci] += coef * (covs[cj] / (norms[ci] * norms[cj]) - trace * covs[ci] / (norms[ci] ** 3 * norms[cj]))
            dcov[cj] += coef * (covs[ci] / (norms[ci] * norms[cj]) - trace * covs[cj] / (norms[cj] ** 3 * norms[ci]))

    for c in populated:
        member = labels == c
        rows = feats[member]
        mu = rows.mean(axis=0)
        grad[member] = (2.0 / rows.shape[0]) * (rows - mu) @ dcov[c]
    return value, grad, False
