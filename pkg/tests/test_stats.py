import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import log_expit

from screenaudit.errors import StatsError
from screenaudit.stats import (
    Z70,
    Z95,
    adverse_impact_ratio,
    agreement_matrix,
    auc,
    cluster_robust_se,
    fit_ols,
    fit_penalized_logistic,
    kfold_cv_auc,
    logistic_gradient,
    selection_rates,
    standardized_effects,
    stratified_folds,
)

# --- selection rates ----------------------------------------------------------


def test_selection_rates_direct_count():
    rates = selection_rates([5, 4, 3, 2], ["g"] * 4, threshold=4)
    assert rates == {"g": 0.5}


def test_selection_rates_threshold_one_is_certainty():
    scores = [1, 2, 3, 4, 5, 1, 3]
    groups = ["a", "a", "a", "b", "b", "b", "b"]
    rates = selection_rates(scores, groups, threshold=1)
    assert rates == {"a": 1.0, "b": 1.0}


def test_selection_rates_monotone_in_threshold():
    rng = np.random.default_rng(0)
    scores = rng.integers(1, 6, size=200)
    groups = np.where(rng.random(200) < 0.5, "a", "b")
    previous = None
    for t in range(1, 6):
        rates = selection_rates(scores, groups, t)
        if previous is not None:
            assert all(rates[g] <= previous[g] for g in rates)
        previous = rates


def test_selection_rates_hand_count_oracle():
    # mirrors reported marginals loosely; expectation computed by hand count
    scores = [5, 5, 4, 4, 4, 3, 3, 2] + [5, 4, 4, 3, 3, 3, 2, 2]
    groups = ["f"] * 8 + ["m"] * 8
    rates = selection_rates(scores, groups, 4)
    assert rates["f"] == 5 / 8
    assert rates["m"] == 3 / 8


def test_selection_rates_empty_group_error():
    with pytest.raises(StatsError) as exc:
        selection_rates([4, 4], ["a", "a"], 4, expected_groups=["a", "b"])
    assert exc.value.code == "EMPTY_GROUP"


# --- adverse impact -----------------------------------------------------------


def test_adverse_impact_fixed_reference_boundary_inclusive():
    out = adverse_impact_ratio({"A": 0.4, "B": 0.5}, reference="B")
    assert out["A"].ratio == pytest.approx(0.8)
    assert out["A"].flagged is True  # "80% or lower" is inclusive
    assert out["B"].ratio == 1.0 and out["B"].flagged is False


def test_adverse_impact_equal_rates():
    out = adverse_impact_ratio({"A": 0.3, "B": 0.3, "C": 0.3})
    assert all(v.ratio == 1.0 for v in out.values())


def test_adverse_impact_most_favored_tie_break():
    out = adverse_impact_ratio({"A": 0.2, "B": 0.4, "C": 0.4})
    assert out["A"].reference == "B"  # lexicographic among the tied maxima
    assert out["A"].ratio == pytest.approx(0.5)
    assert out["B"].ratio == 1.0 and out["C"].ratio == 1.0


def test_adverse_impact_most_favored_max_is_one():
    rng = np.random.default_rng(3)
    for _ in range(20):
        rates = {f"g{i}": float(rng.random() * 0.9 + 0.05) for i in range(4)}
        out = adverse_impact_ratio(rates)
        assert max(v.ratio for v in out.values()) == 1.0


def test_adverse_impact_zero_reference():
    with pytest.raises(StatsError) as exc:
        adverse_impact_ratio({"A": 0.0, "B": 0.2}, reference="A")
    assert exc.value.code == "ZERO_REFERENCE_RATE"


# --- OLS ------------------------------------------------------------------------


def test_ols_exact_recovery():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(30), rng.normal(size=(30, 3))])
    beta = np.array([1.5, -2.0, 0.25, 3.0])
    y = X @ beta
    fit = fit_ols(y, X)
    assert np.max(np.abs(fit.coef - beta)) < 1e-12


def test_ols_single_covariate_closed_form():
    rng = np.random.default_rng(2)
    x = rng.normal(size=50)
    y = 2.0 + 0.7 * x + rng.normal(size=50)
    X = np.column_stack([np.ones(50), x])
    fit = fit_ols(y, X)
    slope = np.cov(x, y, ddof=1)[0, 1] / np.var(x, ddof=1)
    intercept = y.mean() - slope * x.mean()
    assert fit.coef[1] == pytest.approx(slope, abs=1e-12)
    assert fit.coef[0] == pytest.approx(intercept, abs=1e-12)


def fixture_12x4():
    rng = np.random.default_rng(7)
    X = np.column_stack([np.ones(12), rng.normal(size=(12, 2))])
    y = rng.normal(size=12) + X @ np.array([1.0, 0.5, -0.25])
    clusters = np.repeat(["c1", "c2", "c3", "c4"], 3)
    return X, y, clusters


def test_ols_normal_equations_oracle():
    X, y, _ = fixture_12x4()
    fit = fit_ols(y, X)
    beta_ne = np.linalg.solve(X.T @ X, X.T @ y)
    assert np.max(np.abs(fit.coef - beta_ne)) < 1e-10
    # orthogonality of residuals
    scale = max(1.0, float(np.abs(X).max() * np.abs(y).max()))
    assert np.max(np.abs(X.T @ fit.residuals)) <= 1e-8 * scale


def test_ols_rank_deficient_names_columns():
    X = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(StatsError) as exc:
        fit_ols(np.arange(10.0), X)
    assert exc.value.code == "RANK_DEFICIENT"


# --- cluster-robust SE ----------------------------------------------------------


def bruteforce_cr1(X, y, clusters):
    """Oracle: elementwise sandwich computation with explicit loops."""
    n, k = X.shape
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    u = y - X @ beta
    labels = sorted(set(clusters))
    G = len(labels)
    meat = np.zeros((k, k))
    for g in labels:
        s = np.zeros(k)
        for i in range(n):
            if clusters[i] == g:
                for a in range(k):
                    s[a] += X[i, a] * u[i]
        for a in range(k):
            for b in range(k):
                meat[a, b] += s[a] * s[b]
    bread = np.linalg.inv(X.T @ X)
    c = (G / (G - 1)) * ((n - 1) / (n - k))
    V = c * bread @ meat @ bread
    return np.sqrt(np.diag(V))


def test_cluster_se_matches_bruteforce_oracle():
    X, y, clusters = fixture_12x4()
    fit = fit_ols(y, X)
    se = cluster_robust_se(fit, clusters)
    oracle = bruteforce_cr1(X, y, list(clusters))
    assert np.max(np.abs(se - oracle) / oracle) < 1e-10


def test_cluster_se_each_own_cluster_equals_hc1():
    X, y, _ = fixture_12x4()
    fit = fit_ols(y, X)
    se = cluster_robust_se(fit, [f"r{i}" for i in range(12)])
    n, k = X.shape
    u = fit.residuals
    meat = (X * u[:, None]).T @ (X * u[:, None])
    bread = np.linalg.inv(X.T @ X)
    hc1 = np.sqrt(np.diag((n / (n - k)) * bread @ meat @ bread))
    assert np.max(np.abs(se - hc1)) < 1e-12


def test_cluster_se_duplicated_rows_inflate():
    # Each cluster holds one observation and its exact duplicate: the
    # within-cluster score doubles, so the clustered meat is 4x each term
    # (vs 2x unclustered) and every SE must inflate.
    X, y, _ = fixture_12x4()
    X2 = np.vstack([X, X])
    y2 = np.concatenate([y, y])
    fit2 = fit_ols(y2, X2)
    pair_clusters = [f"p{i}" for i in range(12)] * 2
    se_clustered = cluster_robust_se(fit2, pair_clusters)
    se_ignoring = cluster_robust_se(fit2, [f"r{i}" for i in range(24)])
    assert np.all(se_clustered > se_ignoring)


def test_cluster_se_too_few_clusters():
    X, y, _ = fixture_12x4()
    fit = fit_ols(y, X)
    with pytest.raises(StatsError) as exc:
        cluster_robust_se(fit, ["same"] * 12)
    assert exc.value.code == "TOO_FEW_CLUSTERS"


# --- standardized effects --------------------------------------------------------


def test_standardized_effects_scale_invariance():
    X, y, clusters = fixture_12x4()
    fit1 = fit_ols(y, X)
    se1 = cluster_robust_se(fit1, clusters)
    eff1 = standardized_effects(fit1, se1, ["", "x1", "x2"], clusters)
    fit2 = fit_ols(2.0 * y, X)
    se2 = cluster_robust_se(fit2, clusters)
    eff2 = standardized_effects(fit2, se2, ["", "x1", "x2"], clusters)
    for a, b in zip(eff1, eff2):
        assert a.coef_standardized == pytest.approx(b.coef_standardized, rel=1e-12)
        assert a.se_clustered == pytest.approx(b.se_clustered, rel=1e-12)
        assert a.ci95[0] == pytest.approx(b.ci95[0], rel=1e-12)


def test_standardized_effects_interval_nesting_and_quantiles():
    X, y, clusters = fixture_12x4()
    fit = fit_ols(y, X)
    se = cluster_robust_se(fit, clusters)
    for eff in standardized_effects(fit, se, ["", "x1", "x2"], clusters):
        lo70, hi70 = eff.ci70
        lo95, hi95 = eff.ci95
        assert lo95 <= lo70 <= eff.coef_standardized <= hi70 <= hi95
        width_ratio = (hi95 - lo95) / (hi70 - lo70)
        assert width_ratio == pytest.approx(Z95 / Z70, rel=1e-12)


def test_standardized_effects_zero_variance():
    X = np.column_stack([np.ones(8), np.r_[np.zeros(4), np.ones(4)]])
    y = np.full(8, 3.0)
    fit = fit_ols(y, X)
    se = cluster_robust_se(fit, list("aabbccdd"))
    with pytest.raises(StatsError) as exc:
        standardized_effects(fit, se, ["", "g"], list("aabbccdd"))
    assert exc.value.code == "ZERO_VARIANCE"


def test_balanced_group_difference_equals_mean_difference():
    """With only factorial indicators on a balanced design, the coefficient
    equals the difference of group means."""
    rng = np.random.default_rng(9)
    g = np.tile([0.0, 1.0], 40)
    y = 3.0 + 0.4 * g + rng.normal(0, 0.3, size=80)
    X = np.column_stack([np.ones(80), g])
    fit = fit_ols(y, X)
    assert fit.coef[1] == pytest.approx(y[g == 1].mean() - y[g == 0].mean(), abs=1e-12)


# --- penalized logistic -----------------------------------------------------------


def test_logistic_large_penalty_gives_base_rate_intercept():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 5))
    y = (rng.random(60) < 0.3).astype(float)
    model = fit_penalized_logistic(X, y, penalty=1e9)
    assert np.max(np.abs(model.weights)) < 1e-6
    base = y.mean()
    assert model.intercept == pytest.approx(math.log(base / (1 - base)), abs=1e-6)


def test_logistic_gradient_matches_central_differences():
    rng = np.random.default_rng(5)
    for trial in range(5):
        n, d = 12, 3
        X = rng.normal(size=(n, d))
        y = (rng.random(n) < 0.5).astype(float)
        w = 0.4 * rng.normal(size=d)
        b = float(rng.normal())
        lam = float(rng.random())
        gw, gb = logistic_gradient(X, y, w, b, lam)

        def objective(wv, bv):
            m = X @ wv + bv
            nll = -np.mean(y * log_expit(m) + (1 - y) * log_expit(-m))
            return float(nll + 0.5 * lam * np.dot(wv, wv))

        eps = 1e-6
        for j in range(d):
            wp, wm = w.copy(), w.copy()
            wp[j] += eps
            wm[j] -= eps
            fd = (objective(wp, b) - objective(wm, b)) / (2 * eps)
            assert abs(gw[j] - fd) < 1e-6
        fd_b = (objective(w, b + eps) - objective(w, b - eps)) / (2 * eps)
        assert abs(gb - fd_b) < 1e-6


def test_logistic_two_point_grid_search_oracle():
    """Separable 2-point dataset, lambda=1: optimum matches brute-force grid
    minimization of the objective to 1e-6."""
    X = np.array([[-1.0], [1.0]])
    y = np.array([0.0, 1.0])
    lam = 1.0
    model = fit_penalized_logistic(X, y, penalty=lam)
    # standardization maps X to itself here (mean 0, sd 1)
    assert model.feature_means[0] == pytest.approx(0.0)
    assert model.feature_sds[0] == pytest.approx(1.0)

    def objective(w, b):
        # NLL = (softplus(w - b)... ) written via logaddexp for stability:
        # y=0 point has margin -w + b, y=1 point has margin w + b.
        nll = 0.5 * (np.logaddexp(0.0, -(w + b)) + np.logaddexp(0.0, -w + b))
        return nll + 0.5 * lam * w * w

    ws = np.linspace(-2, 2, 4001)
    bs = np.linspace(-2, 2, 4001)
    W, B = np.meshgrid(ws, bs, indexing="ij")
    grid_best = float(np.min(objective(W, B)))
    got = float(objective(float(model.weights[0]), model.intercept))
    assert got <= grid_best + 1e-6


def test_logistic_objective_monotone_and_converged():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(100, 4))
    logits = X @ np.array([1.0, -1.0, 0.5, 0.0])
    y = (rng.random(100) < 1 / (1 + np.exp(-logits))).astype(float)
    model = fit_penalized_logistic(X, y, penalty=0.1)
    path = model.objective_path
    assert all(a >= b - 1e-15 for a, b in zip(path, path[1:]))
    gw, gb = logistic_gradient(
        (X - model.feature_means) / model.feature_sds, y, model.weights,
        model.intercept, model.penalty,
    )
    assert max(float(np.max(np.abs(gw))), abs(gb)) <= 1e-8


def test_logistic_deterministic():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(40, 3))
    y = (rng.random(40) < 0.5).astype(float)
    m1 = fit_penalized_logistic(X, y, penalty=0.5)
    m2 = fit_penalized_logistic(X, y, penalty=0.5)
    assert np.array_equal(m1.weights, m2.weights)
    assert m1.intercept == m2.intercept


# --- AUC -------------------------------------------------------------------------


def auc_bruteforce(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


def test_auc_perfect_separation():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_auc_independent_scores_near_half():
    rng = np.random.default_rng(10)
    scores = rng.random(4000)
    labels = (rng.random(4000) < 0.5).astype(int)
    assert abs(auc(scores, labels) - 0.5) < 0.03


def test_auc_eight_point_fixture_matches_enumeration():
    scores = [0.1, 0.4, 0.35, 0.8, 0.65, 0.65, 0.2, 0.9]
    labels = [0, 0, 1, 1, 0, 1, 0, 1]
    assert auc(scores, labels) == auc_bruteforce(scores, labels)


def test_auc_single_class_error():
    with pytest.raises(StatsError) as exc:
        auc([0.1, 0.9], [1, 1])
    assert exc.value.code == "SINGLE_CLASS"


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.tuples(
            # Quantized so the float transform below stays injective on
            # distinct values (no denormal-scale collapse).
            st.floats(-100, 100).map(lambda s: round(s, 3)),
            st.integers(0, 1),
        ),
        min_size=4,
        max_size=40,
    ).filter(lambda items: len({l for _, l in items}) == 2)
)
def test_auc_invariant_under_increasing_transform(items):
    scores = [s for s, _ in items]
    labels = [l for _, l in items]
    base = auc(scores, labels)
    transformed = auc([math.atan(s) * 3 + 7 for s in scores], labels)
    assert transformed == pytest.approx(base, abs=1e-12)


# --- k-fold CV --------------------------------------------------------------------


def test_kfold_loo_matches_explicit_loop_oracle():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(8, 2))
    X[:4] += 1.5
    y = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    n = len(y)
    result = kfold_cv_auc(X, y, k=n, penalty=1.0, seed=3)
    # Oracle: explicit leave-one-out loop with the same fold assignment.
    preds = np.empty(n)
    for f in range(n):
        test = result.folds == f
        model = fit_penalized_logistic(X[~test], y[~test].astype(float), 1.0)
        preds[test] = model.predict_proba(X[test])
    assert result.pooled_auc == pytest.approx(auc_bruteforce(preds, y), abs=1e-12)
    assert all(a is None for a in result.fold_aucs)  # single-item folds


def test_kfold_shuffled_labels_near_half():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(300, 4))
    y = (rng.random(300) < 0.5).astype(int)
    result = kfold_cv_auc(X, y, k=10, penalty=1.0, seed=0)
    assert abs(result.mean_auc - 0.5) < 0.12


def test_kfold_same_seed_identical():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(60, 3))
    y = (rng.random(60) < 0.5).astype(int)
    a = kfold_cv_auc(X, y, k=5, penalty=1.0, seed=7)
    b = kfold_cv_auc(X, y, k=5, penalty=1.0, seed=7)
    assert np.array_equal(a.folds, b.folds)
    assert a.fold_aucs == b.fold_aucs
    assert a.pooled_auc == b.pooled_auc


def test_stratified_folds_balance():
    y = np.array([1] * 30 + [0] * 70)
    folds = stratified_folds(y, 10, seed=0)
    for f in range(10):
        assert np.sum((folds == f) & (y == 1)) == 3
        assert np.sum((folds == f) & (y == 0)) == 7


def test_kfold_single_class_training_error():
    X = np.arange(8.0).reshape(-1, 1)
    y = np.array([1, 0, 0, 0, 0, 0, 0, 0])
    with pytest.raises(StatsError) as exc:
        kfold_cv_auc(X, y, k=4, penalty=1.0, seed=0)
    assert exc.value.code == "FOLD_SINGLE_CLASS"


# --- agreement matrices -------------------------------------------------------------


def test_agreement_identity():
    pairs = [("Black", "Black"), ("White", "White"), ("Asian", "Asian")] * 2
    m = agreement_matrix(pairs, ["Asian", "Black", "Hispanic", "White"], "race")
    assert m.agreement == 1.0
    for i, row in enumerate(m.row_labels):
        for j, col in enumerate(m.col_labels):
            expected = 1.0 if (row == col and row != "Hispanic") else 0.0
            assert m.rates[i][j] == expected


def test_agreement_all_absent():
    pairs = [("female", "ABSENT"), ("male", "ABSENT")]
    m = agreement_matrix(pairs, ["female", "male"], "gender")
    assert m.agreement == 0.0
    absent_col = m.col_labels.index("ABSENT")
    assert all(m.rates[i][absent_col] == 1.0 for i in range(2))


def test_agreement_sixteen_item_hand_fixture():
    pairs = (
        [("female", "female")] * 6
        + [("female", "male")] * 1
        + [("female", "ABSENT")] * 1
        + [("male", "male")] * 5
        + [("male", "female")] * 2
        + [("male", "OTHER")] * 1
    )
    m = agreement_matrix(pairs, ["female", "male"], "gender")
    # Hand count: 11 of 16 agree.
    assert m.agreement == pytest.approx(11 / 16)
    fi = m.row_labels.index("female")
    mi = m.row_labels.index("male")
    assert m.counts[fi][m.col_labels.index("female")] == 6
    assert m.counts[fi][m.col_labels.index("male")] == 1
    assert m.counts[fi][m.col_labels.index("ABSENT")] == 1
    assert m.counts[mi][m.col_labels.index("OTHER")] == 1
    assert m.rates[fi][m.col_labels.index("female")] == pytest.approx(6 / 8)
