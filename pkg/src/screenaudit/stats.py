"""Estimators for the audit analyses.

Selection rates and adverse-impact ratios with pivotal bootstrap CIs,
OLS with cluster-robust (CR1) standard errors and standardized effects,
L2-penalized logistic regression, Mann-Whitney AUC with stratified k-fold
cross-validation, and perception agreement matrices.

All functions are pure given an explicit seed; nothing touches global RNG
state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit, log_expit
from scipy.stats import rankdata

from .errors import StatsError

# Normal quantiles used for the 70% / 95% intervals on standardized effects.
Z70 = 1.0364
Z95 = 1.95996

FOUR_FIFTHS = 0.8


# ---------------------------------------------------------------------------
# Selection rates and adverse impact
# ---------------------------------------------------------------------------


def selection_rates(
    scores: Sequence[int] | np.ndarray,
    groups: Sequence[str],
    threshold: int,
    expected_groups: Sequence[str] | None = None,
) -> dict[str, float]:
    """Per-group share of scores >= threshold.

    ``expected_groups``, when given, must all be present in ``groups``;
    a missing one raises EMPTY_GROUP.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise StatsError("no rows to compute selection rates on", code="EMPTY_GROUP")
    if len(groups) != scores.size:
        raise ValueError("scores and groups must align")
    groups_arr = np.asarray(groups, dtype=object)
    present = sorted(set(groups_arr.tolist()))
    if expected_groups is not None:
        missing = [g for g in expected_groups if g not in present]
        if missing:
            raise StatsError(
                f"group(s) with no rows: {', '.join(missing)}",
                code="EMPTY_GROUP",
                groups=missing,
            )
    rates: dict[str, float] = {}
    for g in present:
        mask = groups_arr == g
        rates[g] = float(np.mean(scores[mask] >= threshold))
    return rates


@dataclass
class ImpactRatio:
    group: str
    rate: float
    reference: str
    ratio: float
    flagged: bool  # four-fifths rule, boundary inclusive
    ci95_low: float | None = None
    ci95_high: float | None = None


def adverse_impact_ratio(
    rates: dict[str, float],
    reference: str | None = None,
) -> dict[str, ImpactRatio]:
    """Ratios of each group's selection rate to the reference group's.

    ``reference=None`` selects the most favored group (highest rate,
    lexicographic tie-break). Ratios at or below 0.8 are flagged.
    """
    if not rates:
        raise StatsError("empty rates map", code="EMPTY_GROUP")
    if reference is None:
        best = max(rates.values())
        reference = min(g for g, r in rates.items() if r == best)
    elif reference not in rates:
        raise StatsError(f"reference group {reference!r} has no rate", code="EMPTY_GROUP")
    ref_rate = rates[reference]
    if ref_rate == 0:
        raise StatsError(
            f"reference group {reference!r} has selection rate 0",
            code="ZERO_REFERENCE_RATE",
        )
    out: dict[str, ImpactRatio] = {}
    for g in sorted(rates):
        ratio = rates[g] / ref_rate
        out[g] = ImpactRatio(
            group=g,
            rate=rates[g],
            reference=reference,
            ratio=ratio,
            flagged=ratio <= FOUR_FIFTHS,
        )
    return out


# ---------------------------------------------------------------------------
# Pivotal bootstrap over clusters
# ---------------------------------------------------------------------------


def bootstrap_pivotal_ci(
    cluster_ids: Sequence,
    statistic_fn: Callable[[np.ndarray], float],
    n_boot: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
) -> tuple[float, float]:
    """Pivotal (basic) bootstrap CI with whole-cluster resampling.

    ``statistic_fn`` receives an int array of row indices (the resampled
    rows, cluster by cluster) and returns the statistic. The full-sample
    statistic uses all rows once. Endpoints are
    (2*theta - q_{1-alpha/2}, 2*theta - q_{alpha/2}) with type-7
    (linear interpolation) quantiles, so results are bit-reproducible for
    a given seed.

    Replicates where the statistic raises StatsError or returns a
    non-finite value are dropped; if more than 20% fail the CI is
    DEGENERATE.
    """
    ids = np.asarray(cluster_ids, dtype=object)
    n = ids.size
    if n == 0:
        raise StatsError("no rows", code="EMPTY_GROUP")
    uniq = sorted(set(ids.tolist()))
    n_clusters = len(uniq)
    cluster_rows = [np.flatnonzero(ids == c) for c in uniq]

    theta = float(statistic_fn(np.arange(n)))

    rng = np.random.default_rng(seed)
    # One draw matrix up front: replicate results are then independent of
    # evaluation order, so parallel evaluation could not change them.
    draws = rng.integers(0, n_clusters, size=(n_boot, n_clusters))

    stats = np.empty(n_boot, dtype=float)
    failures = 0
    for b in range(n_boot):
        idx = np.concatenate([cluster_rows[j] for j in draws[b]])
        try:
            value = float(statistic_fn(idx))
        except StatsError:
            value = np.nan
        if np.isfinite(value):
            stats[b] = value
        else:
            stats[b] = np.nan
            failures += 1

    if failures > 0.2 * n_boot:
        raise StatsError(
            f"statistic undefined on {failures} of {n_boot} resamples",
            code="DEGENERATE",
            failures=failures,
            n_boot=n_boot,
        )
    valid = stats[np.isfinite(stats)]
    q_lo = float(np.quantile(valid, alpha / 2))  # numpy default = type 7
    q_hi = float(np.quantile(valid, 1 - alpha / 2))
    return (2 * theta - q_hi, 2 * theta - q_lo)


# ---------------------------------------------------------------------------
# OLS and cluster-robust inference
# ---------------------------------------------------------------------------


@dataclass
class OLSFit:
    coef: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    X: np.ndarray
    y: np.ndarray
    xtx_inv: np.ndarray


def fit_ols(y: np.ndarray, X: np.ndarray) -> OLSFit:
    """Least squares via QR decomposition.

    Raises RANK_DEFICIENT naming the dependent columns when X is not full
    column rank.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D and aligned with y")
    n, k = X.shape
    if n < k:
        raise StatsError("fewer rows than columns", code="RANK_DEFICIENT")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    tol = max(n, k) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    bad = np.flatnonzero(diag <= tol)
    if bad.size:
        raise StatsError(
            f"collinear column(s): {bad.tolist()}",
            code="RANK_DEFICIENT",
            columns=bad.tolist(),
        )
    coef = np.linalg.solve(R, Q.T @ y)
    fitted = X @ coef
    residuals = y - fitted
    r_inv = np.linalg.solve(R, np.eye(k))
    xtx_inv = r_inv @ r_inv.T
    return OLSFit(coef=coef, residuals=residuals, fitted=fitted, X=X, y=y, xtx_inv=xtx_inv)


def cluster_robust_se(fit: OLSFit, clusters: Sequence) -> np.ndarray:
    """CR1 sandwich standard errors.

    V = c * (X'X)^-1 [ sum_g X_g' u_g u_g' X_g ] (X'X)^-1 with the
    small-sample factor c = G/(G-1) * (N-1)/(N-k). With every observation
    its own cluster this reduces to HC1.
    """
    ids = np.asarray(clusters, dtype=object)
    n, k = fit.X.shape
    if ids.size != n:
        raise ValueError("clusters must align with rows")
    uniq = sorted(set(ids.tolist()))
    n_clusters = len(uniq)
    if n_clusters < 2:
        raise StatsError(
            f"need >= 2 clusters, got {n_clusters}", code="TOO_FEW_CLUSTERS"
        )
    meat = np.zeros((k, k))
    for c in uniq:
        rows = ids == c
        s = fit.X[rows].T @ fit.residuals[rows]
        meat += np.outer(s, s)
    c_factor = (n_clusters / (n_clusters - 1)) * ((n - 1) / (n - k))
    V = c_factor * fit.xtx_inv @ meat @ fit.xtx_inv
    return np.sqrt(np.diag(V))


@dataclass
class EffectEstimate:
    """Standardized group-difference estimate with clustered inference."""

    term: str
    coef_raw: float
    coef_standardized: float
    se_clustered: float
    ci70: tuple[float, float]
    ci95: tuple[float, float]
    n_rows: int
    n_clusters: int

    def to_dict(self) -> dict:
        return {
            "term": self.term,
            "coef_raw": self.coef_raw,
            "coef_standardized": self.coef_standardized,
            "se_clustered": self.se_clustered,
            "ci70_low": self.ci70[0],
            "ci70_high": self.ci70[1],
            "ci95_low": self.ci95[0],
            "ci95_high": self.ci95[1],
            "n_rows": self.n_rows,
            "n_clusters": self.n_clusters,
        }


def standardized_effects(
    fit: OLSFit,
    se: np.ndarray,
    terms: Sequence[str],
    clusters: Sequence,
) -> list[EffectEstimate]:
    """Coefficients and SEs divided by the outcome's estimated population SD.

    The SD uses denominator N-1. Intervals are coef +/- Z70*se and
    coef +/- Z95*se in standardized units. ``terms`` labels every column
    of X; terms named "" (e.g. the intercept) are skipped in the output.
    """
    if len(terms) != fit.coef.size:
        raise ValueError("one term label per coefficient")
    sigma = float(np.std(fit.y, ddof=1))
    if sigma == 0:
        raise StatsError("outcome has zero variance", code="ZERO_VARIANCE")
    n_clusters = len(set(np.asarray(clusters, dtype=object).tolist()))
    out = []
    for j, term in enumerate(terms):
        if not term:
            continue
        coef_std = float(fit.coef[j]) / sigma
        se_std = float(se[j]) / sigma
        out.append(
            EffectEstimate(
                term=term,
                coef_raw=float(fit.coef[j]),
                coef_standardized=coef_std,
                se_clustered=se_std,
                ci70=(coef_std - Z70 * se_std, coef_std + Z70 * se_std),
                ci95=(coef_std - Z95 * se_std, coef_std + Z95 * se_std),
                n_rows=int(fit.y.size),
                n_clusters=n_clusters,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Penalized logistic regression
# ---------------------------------------------------------------------------


@dataclass
class PenalizedLogisticModel:
    """L2-penalized logistic fit on internally standardized features.

    ``weights`` live in standardized feature space; ``feature_means`` and
    ``feature_sds`` reproduce the standardization at prediction time.
    """

    weights: np.ndarray
    intercept: float
    penalty: float
    feature_means: np.ndarray
    feature_sds: np.ndarray
    n_iter: int = 0
    objective_path: list[float] = field(default_factory=list)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Z = (X - self.feature_means) / self.feature_sds
        return expit(Z @ self.weights + self.intercept)


def _logistic_objective(
    Z: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, lam: float
) -> float:
    m = Z @ w + b
    # mean NLL, numerically stable: -[y*log sigma(m) + (1-y)*log sigma(-m)]
    nll = -np.mean(y * log_expit(m) + (1 - y) * log_expit(-m))
    return float(nll + 0.5 * lam * np.dot(w, w))


def logistic_gradient(
    X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, lam: float
) -> tuple[np.ndarray, float]:
    """Analytic gradient of the penalized mean-NLL objective (raw features,
    no standardization); exposed for finite-difference checking."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = expit(X @ w + b)
    gw = X.T @ (p - y) / y.size + lam * w
    gb = float(np.mean(p - y))
    return gw, gb


def fit_penalized_logistic(
    X: np.ndarray,
    y: np.ndarray,
    penalty: float = 1.0,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> PenalizedLogisticModel:
    """Minimize mean NLL + (penalty/2)*||w||^2, intercept unpenalized.

    Features are standardized internally (constant columns get SD 1).
    Damped Newton with Armijo backtracking from zero initialization;
    converged when the gradient infinity-norm is <= tol. Deterministic.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise ValueError("X must be 2-D and aligned with y")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    n, d = X.shape
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    Z = (X - mu) / sd

    w = np.zeros(d)
    b = 0.0
    obj = _logistic_objective(Z, y, w, b, penalty)
    path = [obj]
    n_iter = 0
    Za = np.hstack([Z, np.ones((n, 1))])
    for it in range(max_iter + 1):
        p = expit(Z @ w + b)
        gw = Z.T @ (p - y) / n + penalty * w
        gb = float(np.mean(p - y))
        g = np.concatenate([gw, [gb]])
        grad_norm = float(np.max(np.abs(g)))
        if grad_norm <= tol:
            n_iter = it
            break
        if it == max_iter:
            raise StatsError(
                f"no convergence after {max_iter} iterations "
                f"(gradient inf-norm {grad_norm:.3e})",
                code="NONCONVERGENCE",
                grad_norm=grad_norm,
            )
        # Newton step on the augmented system; the ridge keeps H well posed.
        D = p * (1 - p)
        H = (Za * D[:, None]).T @ Za / n
        H[:d, :d] += penalty * np.eye(d)
        H += 1e-12 * np.eye(d + 1)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise StatsError(
                f"singular Hessian at iteration {it}",
                code="NONCONVERGENCE",
                grad_norm=grad_norm,
            ) from exc
        # Armijo backtracking keeps the objective monotone decreasing.
        slope = float(np.dot(g, step))
        t = 1.0
        for _ in range(60):
            w_new = w - t * step[:d]
            b_new = b - t * step[d]
            obj_new = _logistic_objective(Z, y, w_new, b_new, penalty)
            if obj_new <= obj - 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            raise StatsError(
                f"line search failed at iteration {it}",
                code="NONCONVERGENCE",
                grad_norm=grad_norm,
            )
        w, b, obj = w_new, b_new, obj_new
        path.append(obj)
    return PenalizedLogisticModel(
        weights=w,
        intercept=b,
        penalty=penalty,
        feature_means=mu,
        feature_sds=sd,
        n_iter=n_iter,
        objective_path=path,
    )


# ---------------------------------------------------------------------------
# AUC and cross-validation
# ---------------------------------------------------------------------------


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(random positive outranks random negative), ties 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise StatsError("need both classes to compute AUC", code="SINGLE_CLASS")
    ranks = rankdata(scores, method="average")
    rank_sum = float(np.sum(ranks[labels == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def stratified_folds(labels: Sequence[int], k: int, seed: int = 0) -> np.ndarray:
    """Fold index per row: each label class is shuffled (seeded) and dealt
    round-robin against a single running fold counter, so per-class balance
    holds and k = n degenerates to exact leave-one-out."""
    labels = np.asarray(labels)
    n = labels.size
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError("k must be <= number of rows")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=int)
    counter = 0
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        folds[idx] = (counter + np.arange(idx.size)) % k
        counter += idx.size
    return folds


@dataclass
class CVAUCResult:
    mean_auc: float
    fold_aucs: list[float | None]
    pooled_auc: float
    folds: np.ndarray


def kfold_cv_auc(
    X: np.ndarray,
    y: np.ndarray,
    k: int = 10,
    penalty: float = 1.0,
    seed: int = 0,
) -> CVAUCResult:
    """Stratified k-fold CV AUC for the penalized logistic model.

    Per-fold AUC is None when a held-out fold is single-class (e.g.
    leave-one-out); the pooled AUC over all held-out predictions is always
    reported and mean_auc averages the defined folds (falling back to the
    pooled value when none are defined). A single-class TRAINING split
    raises FOLD_SINGLE_CLASS with the fold index.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    folds = stratified_folds(y, k, seed)
    pooled_scores = np.empty(y.size, dtype=float)
    fold_aucs: list[float | None] = []
    for f in range(k):
        test = folds == f
        train = ~test
        if len(set(y[train].tolist())) < 2:
            raise StatsError(
                f"training split for fold {f} has a single class",
                code="FOLD_SINGLE_CLASS",
                fold=f,
            )
        model = fit_penalized_logistic(X[train], y[train].astype(float), penalty)
        scores = model.predict_proba(X[test])
        pooled_scores[test] = scores
        if len(set(y[test].tolist())) < 2:
            fold_aucs.append(None)
        else:
            fold_aucs.append(auc(scores, y[test]))
    defined = [a for a in fold_aucs if a is not None]
    pooled = auc(pooled_scores, y)
    mean_auc = float(np.mean(defined)) if defined else pooled
    return CVAUCResult(mean_auc=mean_auc, fold_aucs=fold_aucs, pooled_auc=pooled, folds=folds)


# ---------------------------------------------------------------------------
# Agreement matrices
# ---------------------------------------------------------------------------


@dataclass
class AgreementMatrix:
    attribute: str
    row_labels: list[str]
    col_labels: list[str]
    counts: np.ndarray
    rates: np.ndarray  # row-normalized
    agreement: float  # share of diagonal (intended == perceived)

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "row_labels": self.row_labels,
            "col_labels": self.col_labels,
            "counts": self.counts.tolist(),
            "rates": self.rates.tolist(),
            "agreement": self.agreement,
        }


def agreement_matrix(
    pairs: Iterable[tuple[str, str]],
    categories: Sequence[str],
    attribute: str = "",
) -> AgreementMatrix:
    """Confusion matrix of (intended, perceived) category pairs.

    Columns are the intended categories plus OTHER and ABSENT; perceived
    values outside ``categories`` count as OTHER unless literally ABSENT.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no perception results")
    rows = list(categories)
    cols = list(categories) + ["OTHER", "ABSENT"]
    counts = np.zeros((len(rows), len(cols)), dtype=int)
    row_of = {c: i for i, c in enumerate(rows)}
    col_of = {c: i for i, c in enumerate(cols)}
    matched = 0
    for intended, perceived in pairs:
        if intended not in row_of:
            raise ValueError(f"intended category {intended!r} not in categories")
        if perceived not in col_of:
            perceived = "OTHER"
        counts[row_of[intended], col_of[perceived]] += 1
        if intended == perceived:
            matched += 1
    row_sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(row_sums > 0, counts / row_sums, 0.0)
    return AgreementMatrix(
        attribute=attribute,
        row_labels=rows,
        col_labels=cols,
        counts=counts,
        rates=rates,
        agreement=matched / len(pairs),
    )
