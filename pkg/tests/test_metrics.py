import numpy as np
import pytest

from zispatial.metrics import auc, chain_ess, coverage, ess_batch_means, rmspe


def test_rmspe_identical():
    x = np.array([1.0, 2.0, 3.0])
    assert rmspe(x, x) == 0.0


def test_rmspe_hand_case():
    assert np.isclose(rmspe([0.0, 2.0], [0.0, 0.0]), np.sqrt(2.0))


def test_rmspe_permutation_invariant():
    rng = np.random.default_rng(0)
    t = rng.random(20)
    p = rng.random(20)
    perm = rng.permutation(20)
    assert np.isclose(rmspe(t, p), rmspe(t[perm], p[perm]))


def test_rmspe_length_mismatch():
    with pytest.raises(ValueError):
        rmspe([1.0], [1.0, 2.0])


def test_rmspe_positive_unless_equal():
    rng = np.random.default_rng(1)
    t = rng.random(10)
    p = t.copy()
    p[3] += 1e-6
    assert rmspe(t, p) > 0


def test_auc_perfect_separation():
    labels = np.array([0, 0, 1, 1])
    assert auc(labels, np.array([0.1, 0.2, 0.8, 0.9])) == 1.0


def test_auc_all_ties():
    labels = np.array([0, 1, 0, 1])
    assert auc(labels, np.full(4, 0.5)) == 0.5


def test_auc_hand_case_matches_pair_oracle():
    labels = np.array([1, 0, 1, 0])
    scores = np.array([0.9, 0.9, 0.3, 0.1])
    # exhaustive pair enumeration
    num = 0.0
    for i in np.flatnonzero(labels == 1):
        for j in np.flatnonzero(labels == 0):
            num += 1.0 if scores[i] > scores[j] else (0.5 if scores[i] == scores[j] else 0.0)
    assert auc(labels, scores) == num / 4.0


def test_auc_matches_pair_oracle_random():
    rng = np.random.default_rng(2)
    labels = (rng.random(50) < 0.5).astype(int)
    scores = np.round(rng.random(50), 1)  # force ties
    num = 0.0
    for i in np.flatnonzero(labels == 1):
        for j in np.flatnonzero(labels == 0):
            num += 1.0 if scores[i] > scores[j] else (0.5 if scores[i] == scores[j] else 0.0)
    expected = num / (labels.sum() * (50 - labels.sum()))
    assert auc(labels, scores) == expected


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(3)
    labels = (rng.random(80) < 0.4).astype(int)
    scores = rng.random(80)
    assert np.isclose(auc(labels, scores), auc(labels, np.exp(3 * scores) + 1))


def test_auc_single_class():
    with pytest.raises(ValueError):
        auc(np.ones(5), np.random.default_rng(0).random(5))


def test_ess_iid_chain():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(10_000)
    se, ess = ess_batch_means(x)
    assert abs(ess - len(x)) < 0.2 * len(x)
    assert np.isclose(se, x.std(ddof=1) / np.sqrt(ess), rtol=0.3)


def test_ess_ar1_chain():
    rng = np.random.default_rng(5)
    rho = 0.9
    T = 20_000
    x = np.empty(T)
    x[0] = rng.standard_normal()
    eps = rng.standard_normal(T) * np.sqrt(1 - rho**2)
    for t in range(1, T):
        x[t] = rho * x[t - 1] + eps[t]
    _, ess = ess_batch_means(x)
    target = (1 - rho) / (1 + rho)
    assert abs(ess / T - target) < 0.3 * target


def test_ess_monotone_in_autocorrelation():
    # averaged over replicates, ESS decreases as the AR(1) coefficient grows
    rng = np.random.default_rng(6)
    mean_ess = []
    for rho in (0.0, 0.5, 0.9):
        vals = []
        for _ in range(50):
            T = 2000
            eps = rng.standard_normal(T) * np.sqrt(1 - rho**2 if rho else 1.0)
            x = np.empty(T)
            x[0] = rng.standard_normal()
            for t in range(1, T):
                x[t] = rho * x[t - 1] + eps[t]
            vals.append(ess_batch_means(x)[1])
        mean_ess.append(np.mean(vals))
    assert mean_ess[0] > mean_ess[1] > mean_ess[2]


def test_ess_constant_chain():
    with pytest.raises(ValueError, match="zero variance"):
        ess_batch_means(np.ones(500))


def test_ess_short_chain():
    with pytest.raises(ValueError, match="too short"):
        ess_batch_means(np.arange(50.0))


def test_chain_ess_handles_constant_columns():
    rng = np.random.default_rng(7)
    samples = np.column_stack([rng.standard_normal(500), np.ones(500)])
    out = chain_ess(samples, seconds=2.0)
    assert np.isfinite(out["ess"][0])
    assert np.isnan(out["ess"][1])
    assert np.isclose(out["es_per_sec"][0], out["ess"][0] / 2.0)


def test_coverage_full_and_empty():
    rng = np.random.default_rng(8)
    wide = [np.column_stack([rng.uniform(-1e6, 1e6, 400)]) for _ in range(4)]
    assert coverage(wide, [0.0], level=0.95)[0] == 1.0
    degenerate = [np.full((400, 1), 5.0) for _ in range(4)]
    assert coverage(degenerate, [0.0], level=0.95)[0] == 0.0


def test_coverage_hand_count():
    reps = [
        np.linspace(0, 1, 101)[:, None],      # central 95% interval ~ [0.025, 0.975]
        np.linspace(2, 3, 101)[:, None],      # interval away from truth
        np.linspace(-1, 1, 101)[:, None],     # covers 0.5
    ]
    rate = coverage(reps, [0.5], level=0.95)
    assert np.isclose(rate[0], 2.0 / 3.0)


def test_coverage_needs_replicates():
    with pytest.raises(ValueError):
        coverage([np.zeros((10, 1))], [0.0])
