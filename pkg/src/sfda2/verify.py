"""Property-verification suites for the implemented mathematics.

Four suites: the feature-alignment upper bound against its Monte Carlo
oracle, the full-batch neighborhood-loss factorization identity, analytic
gradients against central finite differences, and the streaming-estimator
oracles (class statistics, neighbor search, log-softmax identity).

Every suite is deterministic for a given seed and returns a VerifyReport.
`negative_control=True` plants a known-wrong variant of the checked
formula; a sensitive suite must then report failures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapt import batch_objective
from .banks import FeatureBank, knn
from .data import dumps_17g
from .errors import InvalidInputError
from .losses import (
    AffinityWeights,
    efa_mc_estimate,
    fd_loss,
    ifa_loss,
    snc_loss,
    softmax_vjp,
)
from .model import (
    finite_diff_check,
    forward,
    grad_params,
    gradient_arrays,
    init_model,
    parameter_arrays,
    zero_gradients,
)
from .numerics import RngState, logsumexp, row_softmax, softmax
from .stats import ClassStatistics, update_class_stats


@dataclass
class VerifyReport:
    suite: str
    trials: int
    passed: bool
    worst: float | None
    failures: list[dict] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "trials": self.trials,
            "passed": self.passed,
            "worst": self.worst,
            "failures": self.failures,
            "details": self.details,
        }

    def to_json(self) -> str:
        return dumps_17g(self.to_dict())


def _finish(suite: str, trials: int, worst, failures: list[dict], details: dict) -> VerifyReport:
    return VerifyReport(
        suite=suite,
        trials=trials,
        passed=not failures,
        worst=None if worst is None else float(worst),
        failures=failures,
        details=details,
    )


# ---------------------------------------------------------------- bound


def _sign_flipped_bound(feature, cov, weights, bias, lam: float) -> float:
    # Known-wrong closed form for the negative control: the variance margin
    # enters with the wrong sign, so for material lambda the value drops
    # below the Monte Carlo mean. Computed here because ifa_loss's contract
    # admits only the correct formula. Weakening lambda instead (halving,
    # even zeroing) can never fail: each per-class ratio in the correct
    # formula is at most the softmax probability, which forces the value
    # above 2*C*log(C) at any lambda, while the oracle mean at lambda=0 is
    # at most log(C).
    logits = weights @ feature + bias
    gram = weights @ cov @ weights.T
    diag = np.diagonal(gram)
    quad = diag[None, :] - 2.0 * gram + diag[:, None]
    shifted = logits[None, :] - 0.5 * lam * quad
    lse = np.array([logsumexp(row) for row in shifted])
    return -2.0 * float(logits.sum() - lse.sum())


def verify_ifa_bound(
    trials: int = 100,
    n_pairs: int = 200000,
    seed: int = 7,
    negative_control: bool = False,
    lambda_override: float | None = None,
) -> VerifyReport:
    """Closed-form alignment loss must upper-bound its Monte Carlo oracle.

    Per trial: random classifier, feature, trace-normalized PSD covariance,
    lambda in (0, 5]. Pass requires mc_mean <= bound + 3*stderr. The
    negative control swaps in a closed form with the variance margin
    sign-flipped, a planted bug the comparison must catch on some trials.
    `lambda_override` pins lambda instead of sampling it (used for the
    degenerate lambda=0 case).
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    if n_pairs < 10000:
        raise InvalidInputError("n_pairs must be >= 10000")
    if lambda_override is not None and lambda_override < 0.0:
        raise InvalidInputError("lambda_override must be >= 0")

    failures: list[dict] = []
    worst_slack = np.inf
    for t, trial_rng in enumerate(RngState(seed).split(trials)):
        param_rng, mc_rng = trial_rng.split(2)
        g = param_rng.generator
        n_classes = int(g.integers(2, 6))
        dim = int(g.integers(2, 9))
        feature = g.standard_normal(dim)
        a = g.standard_normal((dim, dim))
        cov = a @ a.T
        cov *= dim / np.trace(cov)
        weights = g.standard_normal((n_classes, dim))
        bias = g.standard_normal(n_classes)
        lam = 5.0 * (1.0 - g.random()) if lambda_override is None else float(lambda_override)

        if negative_control:
            bound = _sign_flipped_bound(feature, cov, weights, bias, lam)
        else:
            bound = ifa_loss(feature, cov, weights, bias, lam)[0]
        mc_mean, mc_stderr = efa_mc_estimate(feature, cov, weights, bias, lam, n_pairs, mc_rng)
        slack = bound + 3.0 * mc_stderr - mc_mean
        worst_slack = min(worst_slack, slack)
        if slack < 0.0:
            failures.append(
                {
                    "trial": t,
                    "n_classes": n_classes,
                    "dim": dim,
                    "lambda": lam,
                    "bound": bound,
                    "mc_mean": mc_mean,
                    "mc_stderr": mc_stderr,
                    "slack": slack,
                    "feature": feature.tolist(),
                    "cov": cov.tolist(),
                    "clf_weights": weights.tolist(),
                    "clf_bias": bias.tolist(),
                }
            )
    details = {
        "n_pairs": n_pairs,
        "seed": seed,
        "negative_control": negative_control,
        "lambda_override": lambda_override,
    }
    return _finish("ifa-bound", trials, worst_slack, failures, details)


# ------------------------------------------------- factorization identity


def _group_sizes(n_points: int, k: int) -> list[int]:
    # Partition n into groups of k+1 (tight clusters) and 2k (two
    # cross-paired simplexes); both shapes have mutual k-NN graphs.
    for two_k_groups in range(n_points // (2 * k) + 1):
        rest = n_points - two_k_groups * 2 * k
        if rest >= 0 and rest % (k + 1) == 0:
            return [k + 1] * (rest // (k + 1)) + [2 * k] * two_k_groups
    raise InvalidInputError(f"cannot plant a symmetric {k}-NN instance with {n_points} points")


def _plant_points(n_points: int, k: int, g: np.random.Generator) -> np.ndarray:
    """Points whose directed k-NN graph is symmetric by construction.

    Groups sit on orthogonal unit directions; within a group, points are
    either one tiny ring (size k+1, everyone is everyone's neighbor) or two
    rings split along a shared axis (size 2k: k-1 ring mates plus the
    one-to-one partner across the split).
    """
    sizes = _group_sizes(n_points, k)
    dim = max(4, len(sizes) + 3)
    ortho, _ = np.linalg.qr(g.standard_normal((dim, dim)))
    tangent1 = ortho[:, len(sizes)]
    tangent2 = ortho[:, len(sizes) + 1]
    split_axis = ortho[:, len(sizes) + 2]

    points = []
    for group, size in enumerate(sizes):
        center = ortho[:, group]
        if size == k + 1:
            for j in range(size):
                phi = 2.0 * np.pi * j / size
                p = center + 0.01 * (np.cos(phi) * tangent1 + np.sin(phi) * tangent2)
                p = p + 2e-4 * g.standard_normal(dim)
                points.append(p / np.linalg.norm(p))
        else:
            for j in range(k):
                psi = 2.0 * np.pi * j / k
                ring = 0.03 * (np.cos(psi) * tangent1 + np.sin(psi) * tangent2)
                for sign in (1.0, -1.0):
                    p = center + sign * 0.05 * split_axis + ring
                    p = p + 2e-4 * g.standard_normal(dim)
                    points.append(p / np.linalg.norm(p))
    order = g.permutation(n_points)
    return np.asarray(points)[order]


def _bank_from_rows(rows: np.ndarray) -> FeatureBank:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    zero = norms.ravel() == 0.0
    safe = np.where(norms == 0.0, 1.0, norms)
    n = rows.shape[0]
    return FeatureBank(
        raw=rows.copy(),
        normalized=rows / safe,
        zero_rows=zero,
        valid=np.ones(n, dtype=bool),
        capacity=n,
        write_queue=[],
    )


def verify_snc_factorization(
    n_points: int = 30,
    k: int = 3,
    trials: int = 10,
    seed: int = 0,
    tolerance: float = 1e-8,
    negative_control: bool = False,
    max_attempts: int = 20,
) -> VerifyReport:
    """Full-batch neighborhood loss vs the matrix-factorization objective.

    On instances whose k-NN graph is symmetric (resampled until it is),
    the per-sample losses at decay 1 over the full batch must sum to both
    the edge form -(2/k)*sum_edges p_i.p_j + sum_{i,k'} (p_i.p_k')^2 and
    ||A/k - P P^T||_F^2 minus its constant term ||A/k||_F^2. The negative
    control skips the constant-term subtraction.
    """
    if n_points < 2 or k < 1 or k >= n_points:
        raise InvalidInputError("need 1 <= k < n_points and n_points >= 2")
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    _group_sizes(n_points, k)  # fail fast if no planting exists

    failures: list[dict] = []
    worst = 0.0
    n_classes = 4
    for t, trial_rng in enumerate(RngState(seed).split(trials)):
        g = trial_rng.generator
        adjacency = None
        for _ in range(max_attempts):
            pts = _plant_points(n_points, k, g)
            bank = _bank_from_rows(pts)
            cand = np.zeros((n_points, n_points))
            for i in range(n_points):
                cand[i, knn(bank, i, k).indices] = 1.0
            if np.array_equal(cand, cand.T):
                adjacency = cand
                break
        if adjacency is None:
            failures.append({"trial": t, "reason": "no symmetric instance in bounded resampling"})
            continue

        probs = row_softmax(1.5 * g.standard_normal((n_points, n_classes)))
        per_sample = 0.0
        for i in range(n_points):
            neighbor_rows = probs[adjacency[i] == 1.0]
            per_sample += snc_loss(probs[i], neighbor_rows, probs, i, 1.0)[0]

        gram = probs @ probs.T
        edge_form = -(2.0 / k) * float((adjacency * gram).sum()) + float((gram**2).sum())
        scaled = adjacency / k
        factor_form = float(((scaled - gram) ** 2).sum())
        constant = float((scaled**2).sum())
        rhs = factor_form if negative_control else factor_form - constant

        diff_edge = abs(per_sample - edge_form)
        diff_factor = abs(per_sample - rhs)
        worst = max(worst, diff_edge, diff_factor)
        if diff_edge > tolerance or diff_factor > tolerance:
            failures.append(
                {
                    "trial": t,
                    "diff_edge_form": diff_edge,
                    "diff_factorization": diff_factor,
                    "loss_sum": per_sample,
                    "edge_form": edge_form,
                    "factorization_minus_constant": rhs,
                }
            )
    details = {
        "n_points": n_points,
        "k": k,
        "seed": seed,
        "tolerance": tolerance,
        "negative_control": negative_control,
    }
    return _finish("snc-factorization", trials, worst, failures, details)


# ---------------------------------------------------------- gradients


def _scaled_gradients(closure, factor: float):
    def wrapped(m):
        value, grads = closure(m)
        for arr in gradient_arrays(grads):
            arr *= factor
        return value, grads

    return wrapped


def verify_gradients(
    seed: int = 0,
    n_instances: int = 20,
    tolerance: float = 1e-4,
    step: float = 1e-4,
    negative_control: bool = False,
) -> VerifyReport:
    """Analytic gradients vs central finite differences.

    Two calibration controls run first: a constant loss (error must be 0)
    and a pure quadratic in the parameters (central differences are exact,
    error < 1e-9). Then each random instance checks the neighborhood,
    alignment, and dispersal losses in isolation plus the weighted
    composite objective. The negative control scales every analytic
    gradient by 1.01.

    The step default balances truncation against the rounding noise that
    parameters with exactly-zero gradients (the dispersal loss is
    translation invariant, so feature-layer biases have none) leak into
    the floored relative error: noise grows like 1/step.
    """
    if n_instances < 1:
        raise InvalidInputError("n_instances must be >= 1")
    rngs = RngState(seed).split(n_instances + 1)
    failures: list[dict] = []
    worst = 0.0
    per_check_max = {"snc": 0.0, "ifa": 0.0, "fd": 0.0, "composite": 0.0}

    cal_model = init_model(3, (4,), 3, 3, rngs[-1])

    def constant_closure(m):
        return 1.0, zero_gradients(m)

    def quadratic_closure(m):
        params = parameter_arrays(m)
        value = 0.5 * sum(float((arr * arr).sum()) for arr in params)
        grads = zero_gradients(m)
        for slot, arr in zip(gradient_arrays(grads), params):
            slot[...] = arr
        return value, grads

    # Both calibration losses have zero truncation error under central
    # differences, so a wide step only shrinks the 1/step rounding noise.
    cal_step = max(step, 1e-2)
    constant_err = finite_diff_check(cal_model, constant_closure, cal_step)
    quadratic_err = finite_diff_check(cal_model, quadratic_closure, cal_step)
    if constant_err > 1e-12:
        failures.append({"check": "constant-control", "error": constant_err})
    if quadratic_err > 1e-9:
        failures.append({"check": "quadratic-control", "error": quadratic_err})

    for idx in range(n_instances):
        model_rng, data_rng = rngs[idx].split(2)
        g = data_rng.generator
        batch = int(g.integers(3, 7))
        n_classes = int(g.integers(2, 5))
        d_in = int(g.integers(2, 5))
        d_feat = int(g.integers(2, 5))
        hidden = (int(g.integers(3, 6)),)
        model = init_model(d_in, hidden, d_feat, n_classes, model_rng)
        x = g.standard_normal((batch, d_in))
        k = int(g.integers(1, 4))
        neighbor_probs = [row_softmax(1.5 * g.standard_normal((k, n_classes))) for _ in range(batch)]
        bank_rows = row_softmax(1.5 * g.standard_normal((batch, n_classes)))
        while True:
            labels = g.integers(0, n_classes, batch).astype(np.int64)
            if np.bincount(labels, minlength=n_classes).max() >= 2:
                break
        covs = np.zeros((n_classes, d_feat, d_feat))
        for c in range(n_classes):
            a = g.standard_normal((d_feat, d_feat))
            covs[c] = a @ a.T
            covs[c] *= d_feat / np.trace(covs[c])
        stats = ClassStatistics(
            means=np.zeros((n_classes, d_feat)),
            covs=covs,
            counts=np.ones(n_classes, dtype=np.int64),
        )
        mean_preds = row_softmax(g.standard_normal((n_classes, n_classes)))
        affinity = AffinityWeights(matrix=mean_preds @ mean_preds.T, mean_preds=mean_preds)
        decay = float(0.25 + g.random())
        lam = float(2.0 * g.random())
        alpha1, alpha2 = 0.3, 0.7

        def snc_closure(m):
            _, _, probs = forward(m, x)
            dlogits = np.zeros((batch, n_classes))
            value = 0.0
            for i in range(batch):
                v, dprob = snc_loss(probs[i], neighbor_probs[i], bank_rows, i, decay)
                value += v
                dlogits[i] = softmax_vjp(probs[i], dprob) / batch
            return value / batch, grad_params(m, x, dlogits, np.zeros((batch, d_feat)))

        def ifa_closure(m):
            feats, _, _ = forward(m, x)
            value = 0.0
            dfeats = np.zeros((batch, d_feat))
            dw = np.zeros_like(m.clf_weights)
            db = np.zeros_like(m.clf_bias)
            for i in range(batch):
                v, dz, dw_i, db_i = ifa_loss(feats[i], covs[labels[i]], m.clf_weights, m.clf_bias, lam)
                value += v
                dfeats[i] = dz / batch
                dw += dw_i / batch
                db += db_i / batch
            grads = grad_params(m, x, np.zeros((batch, n_classes)), dfeats)
            grads.clf_weights += dw
            grads.clf_bias += db
            return value / batch, grads

        def fd_closure(m):
            feats, _, _ = forward(m, x)
            value, gfeat, _ = fd_loss(feats, labels, affinity)
            return value, grad_params(m, x, np.zeros((batch, n_classes)), gfeat)

        def composite_closure(m):
            breakdown, grads, _ = batch_objective(
                m, x, neighbor_probs, bank_rows, labels, stats, affinity,
                decay, lam, alpha1, alpha2,
            )
            return breakdown.total, grads

        for name, closure in (
            ("snc", snc_closure),
            ("ifa", ifa_closure),
            ("fd", fd_closure),
            ("composite", composite_closure),
        ):
            tested = _scaled_gradients(closure, 1.01) if negative_control else closure
            err = finite_diff_check(model, tested, step)
            per_check_max[name] = max(per_check_max[name], err)
            worst = max(worst, err)
            if err > tolerance:
                failures.append(
                    {
                        "instance": idx,
                        "check": name,
                        "error": err,
                        "batch": batch,
                        "n_classes": n_classes,
                        "input_dim": d_in,
                        "feature_dim": d_feat,
                        "k": k,
                    }
                )

    details = {
        "seed": seed,
        "tolerance": tolerance,
        "step": step,
        "negative_control": negative_control,
        "constant_control_error": constant_err,
        "quadratic_control_error": quadratic_err,
        "max_error_per_check": per_check_max,
    }
    return _finish("gradients", n_instances, worst, failures, details)


# ------------------------------------------------------------- oracles


def _partition_sizes(total: int, g: np.random.Generator) -> list[int]:
    sizes = []
    remaining = total
    while remaining > 0:
        if remaining > 1 and g.random() < 0.1:
            size = 1
        else:
            size = int(g.integers(1, min(37, remaining) + 1))
        sizes.append(size)
        remaining -= size
    if 1 not in sizes:  # the partitions must exercise size-1 batches
        for i, s in enumerate(sizes):
            if s >= 2:
                sizes[i] = s - 1
                sizes.insert(i + 1, 1)
                break
    return sizes


def _stream_with_doubled_correction(feats, labels, sizes, n_classes, dim):
    # Planted bug for the negative control: the mean-gap correction term
    # of the pooled covariance update is doubled.
    means = np.zeros((n_classes, dim))
    covs = np.zeros((n_classes, dim, dim))
    counts = np.zeros(n_classes, dtype=np.int64)
    pos = 0
    for size in sizes:
        rows = feats[pos : pos + size]
        labs = labels[pos : pos + size]
        pos += size
        for c in np.unique(labs):
            sub = rows[labs == c]
            m = sub.shape[0]
            mu_b = sub.mean(axis=0)
            cov_b = (sub - mu_b).T @ (sub - mu_b) / m
            n_a = int(counts[c])
            n = n_a + m
            delta = means[c] - mu_b
            covs[c] = (n_a * covs[c] + m * cov_b) / n + 2.0 * (n_a * m / n**2) * np.outer(delta, delta)
            means[c] = (n_a * means[c] + m * mu_b) / n
            counts[c] = n
    return means, covs, counts


_EXTREME_LOGITS = (
    [1000.0, 0.0],
    [-1500.0, 3.0, 7.0],
    [800.0, 800.0, 800.0, 800.0, 800.0],
    [-745.0, 0.0, 745.0],
)


def verify_oracles(
    seed: int = 0,
    streams: int = 10,
    samples_per_stream: int = 1000,
    n_classes: int = 10,
    dim: int = 8,
    bank_points: int = 500,
    bank_dim: int = 16,
    n_queries: int = 50,
    ks: tuple[int, ...] = (1, 5, 10),
    softmax_trials: int = 200,
    negative_control: bool = False,
) -> VerifyReport:
    """Streaming/numeric primitives vs independent oracles.

    (a) streaming class statistics vs a two-pass oracle over random batch
    partitions that include size-1 batches, max entry error < 1e-9;
    (b) bank neighbor search vs an exhaustive scan, exact indices under the
    (distance, index) tie rule; (c) log-softmax identity
    log softmax(v)_c = v_c - logsumexp(v) within 1e-12, plus finite
    results on extreme logits. Negative controls plant, respectively, a
    doubled covariance correction term, an unnormalized distance scan, and
    shift-free naive exponentials.
    """
    if streams < 1 or samples_per_stream < 1:
        raise InvalidInputError("need at least one stream and one sample")
    rngs = RngState(seed).split(streams + 2)
    failures: list[dict] = []
    stats_worst = 0.0

    for s in range(streams):
        g = rngs[s].generator
        scale = 0.5 + 2.0 * g.random()
        shift = 3.0 * g.standard_normal(dim)
        feats = g.standard_normal((samples_per_stream, dim)) * scale + shift
        labels = g.integers(0, n_classes, samples_per_stream).astype(np.int64)
        sizes = _partition_sizes(samples_per_stream, g)

        if negative_control:
            means, covs, counts = _stream_with_doubled_correction(
                feats, labels, sizes, n_classes, dim
            )
        else:
            stats = ClassStatistics.empty(n_classes, dim)
            pos = 0
            for size in sizes:
                stats = update_class_stats(stats, feats[pos : pos + size], labels[pos : pos + size])
                pos += size
            means, covs, counts = stats.means, stats.covs, stats.counts

        for c in range(n_classes):
            rows = feats[labels == c]
            if rows.shape[0] == 0:
                if counts[c] != 0:
                    failures.append({"part": "class-stats", "stream": s, "class": c, "reason": "phantom count"})
                continue
            mean_oracle = rows.mean(axis=0)
            centered = rows - mean_oracle
            cov_oracle = centered.T @ centered / rows.shape[0]
            mean_err = float(np.abs(means[c] - mean_oracle).max())
            cov_err = float(np.abs(covs[c] - cov_oracle).max())
            stats_worst = max(stats_worst, mean_err, cov_err)
            if mean_err > 1e-9 or cov_err > 1e-9 or int(counts[c]) != rows.shape[0]:
                failures.append(
                    {
                        "part": "class-stats",
                        "stream": s,
                        "class": c,
                        "mean_error": mean_err,
                        "cov_error": cov_err,
                        "count_streaming": int(counts[c]),
                        "count_oracle": rows.shape[0],
                        "n_batches": len(sizes),
                    }
                )

    g = rngs[streams].generator
    rows = g.standard_normal((bank_points, bank_dim))
    bank = _bank_from_rows(rows)
    queries = g.choice(bank_points, n_queries, replace=False)
    knn_mismatches = 0
    # Oracle scan; the negative control plants the bug of skipping row
    # normalization in the scanned distances.
    scan_rows = rows if negative_control else bank.normalized
    for q in queries:
        q = int(q)
        ranked = sorted(
            (float(1.0 - np.dot(scan_rows[i], scan_rows[q])), i)
            for i in range(bank_points)
            if i != q
        )
        for k in ks:
            expected = [idx for _, idx in ranked[:k]]
            got = knn(bank, q, k).indices.tolist()
            if got != expected:
                knn_mismatches += 1
                if knn_mismatches <= 10:
                    failures.append(
                        {"part": "knn", "query": q, "k": k, "got": got, "expected": expected}
                    )

    g = rngs[streams + 1].generator
    softmax_worst = 0.0
    for t in range(softmax_trials):
        width = int(g.integers(1, 13))
        scale = 10.0 ** g.uniform(-2.0, 2.0)
        v = g.standard_normal(width) * scale
        v = np.clip(v, v.max() - 200.0, None)  # keep exp() out of subnormals
        if negative_control:
            with np.errstate(over="ignore", invalid="ignore"):
                p = np.exp(v) / np.exp(v).sum()
                lse = float(np.log(np.exp(v).sum()))
        else:
            p = softmax(v)
            lse = logsumexp(v)
        if not (np.all(np.isfinite(p)) and np.isfinite(lse)):
            failures.append({"part": "log-softmax", "trial": t, "reason": "non-finite"})
            continue
        identity_err = float(np.abs(np.log(p) - (v - lse)).max())
        sum_err = float(abs(p.sum() - 1.0))
        softmax_worst = max(softmax_worst, identity_err, sum_err)
        if identity_err > 1e-12 or sum_err > 1e-12:
            failures.append(
                {
                    "part": "log-softmax",
                    "trial": t,
                    "identity_error": identity_err,
                    "sum_error": sum_err,
                    "logits": v.tolist(),
                }
            )
    for case, raw in enumerate(_EXTREME_LOGITS):
        v = np.asarray(raw)
        if negative_control:
            with np.errstate(over="ignore", invalid="ignore"):
                p = np.exp(v) / np.exp(v).sum()
                lse = float(np.log(np.exp(v).sum()))
        else:
            p = softmax(v)
            lse = logsumexp(v)
        finite = bool(np.all(np.isfinite(p)) and np.isfinite(lse))
        sum_ok = finite and abs(float(p.sum()) - 1.0) <= 1e-12
        if not (finite and sum_ok):
            failures.append({"part": "log-softmax-extreme", "case": case, "logits": list(raw)})

    details = {
        "seed": seed,
        "streams": streams,
        "samples_per_stream": samples_per_stream,
        "negative_control": negative_control,
        "stats_max_error": stats_worst,
        "knn_mismatches": knn_mismatches,
        "softmax_max_error": softmax_worst,
    }
    worst = max(stats_worst, softmax_worst, float(knn_mismatches))
    trials = streams + len(queries) * len(ks) + softmax_trials + len(_EXTREME_LOGITS)
    return _finish("oracles", trials, worst, failures, details)
