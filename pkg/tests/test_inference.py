import numpy as np
import pytest
from scipy import sparse, stats

from zispatial.geometry import adjacency, build_mesh, build_projector
from zispatial.inference import (
    FixedRankKriging,
    GoldStandard,
    PicarZ,
    PriorSpec,
    SamplerConfig,
    correlated_delta_logprior,
    fit,
    load_chain,
    log_posterior,
    predict,
    sample_adaptive_rw,
    save_chain,
    save_chain_summary,
    tau_full_conditional,
)
from zispatial.likelihoods import HURDLE_COUNT, HURDLE_LOGNORMAL, occurrence_prob, predictive_mean
from zispatial.metrics import ess_batch_means
from zispatial.rank_selection import binarize_occurrence, fit_glm, positive_subset
from zispatial.simulation import CrossGPConfig, MaternParams, build_bisquare_design, generate_dataset
from zispatial.spectral import (
    PrecisionSpec,
    ReducedPrecision,
    build_precision,
    leading_eigenvectors,
    moran_operator,
    reduced_precision,
)

CFG = CrossGPConfig(MaternParams(0.5, 0.2, 1.0), MaternParams(0.5, 0.2, 1.0), rho=0.7)


def _picar_setup(ds, p=8, target_vertices=120):
    sites, X, Z = ds.train()
    mesh = build_mesh(ds.sites, "regular-lattice", target_vertices=target_vertices, padding=0.1)
    N = adjacency(mesh)
    basis = leading_eigenvectors(moran_operator(N), p)
    Q = build_precision(N, PrecisionSpec("icar"))
    rp = reduced_precision(basis, Q)
    A = build_projector(mesh, sites)
    param = PicarZ(A, basis, basis, rp, rp)
    return X, Z, param, mesh, basis


def test_log_posterior_zero_delta_quadratic_term():
    ds = generate_dataset(HURDLE_COUNT, 80, 20, CFG, [1.0, 1.0], [1.0, 1.0], seed=0)
    X, Z, param, _, _ = _picar_setup(ds)
    priors = PriorSpec()
    state = {
        "beta_o": np.zeros(2),
        "beta_p": np.zeros(2),
        "delta_o": np.zeros(8),
        "delta_p": np.zeros(8),
        "tau_o": 1.0,
        "tau_p": 1.0,
    }
    lp0 = log_posterior(state, X, Z, HURDLE_COUNT, param, priors)
    # doubling tau with delta = 0 moves the log-density by +p/2 log 2 only
    state2 = dict(state, tau_o=2.0)
    lp2 = log_posterior(state2, X, Z, HURDLE_COUNT, param, priors)
    dprior = (
        stats.gamma.logpdf(2.0, priors.tau_shape, scale=1 / priors.tau_rate)
        - stats.gamma.logpdf(1.0, priors.tau_shape, scale=1 / priors.tau_rate)
    )
    assert np.isclose(lp2 - lp0, 0.5 * 8 * np.log(2.0) + dprior)


def test_log_posterior_identity_Q_matches_scalar_normal_oracle():
    ds = generate_dataset(HURDLE_COUNT, 60, 10, CFG, [1.0, 1.0], [1.0, 1.0], seed=1)
    sites, X, Z = ds.train()
    mesh = build_mesh(ds.sites, "regular-lattice", target_vertices=80, padding=0.1)
    N = adjacency(mesh)
    basis = leading_eigenvectors(moran_operator(N), 5)
    rp = reduced_precision(basis, sparse.identity(mesh.n_vertices, format="csr"))
    A = build_projector(mesh, sites)
    param = PicarZ(A, basis, basis, rp, rp)
    rng = np.random.default_rng(2)
    delta = rng.standard_normal(5)
    tau = 1.7
    state = {
        "beta_o": np.zeros(2), "beta_p": np.zeros(2),
        "delta_o": delta, "delta_p": np.zeros(5),
        "tau_o": tau, "tau_p": 1.0,
    }
    base = dict(state, delta_o=np.zeros(5))
    got = log_posterior(state, X, Z, HURDLE_COUNT, param, PriorSpec())
    ref = log_posterior(base, X, Z, HURDLE_COUNT, param, PriorSpec())
    # oracle: sum of scalar normal log-densities (spherical prior), net of the
    # likelihood difference from the changed linear predictor
    ll_diff = got - ref
    prior_diff = stats.norm.logpdf(delta, scale=1 / np.sqrt(tau)).sum() - stats.norm.logpdf(
        np.zeros(5), scale=1 / np.sqrt(tau)
    ).sum()

    def loglik_only(d):
        eta_o = X @ state["beta_o"] + param.B_o @ d
        eta_p = X @ state["beta_p"] + param.B_p @ np.zeros(5)
        from zispatial.likelihoods import total_loglik

        return total_loglik(HURDLE_COUNT, Z, occurrence_prob(eta_o), np.exp(eta_p))

    lik_diff = loglik_only(delta) - loglik_only(np.zeros(5))
    assert np.isclose(ll_diff, prior_diff + lik_diff, atol=1e-8)


def test_tau_doubling_closed_form():
    ds = generate_dataset(HURDLE_COUNT, 50, 10, CFG, [1.0, 1.0], [1.0, 1.0], seed=3)
    X, Z, param, _, _ = _picar_setup(ds, p=4, target_vertices=60)
    priors = PriorSpec()
    rng = np.random.default_rng(4)
    delta = rng.standard_normal(4)
    state = {
        "beta_o": np.zeros(2), "beta_p": np.zeros(2),
        "delta_o": delta, "delta_p": np.zeros(4),
        "tau_o": 1.0, "tau_p": 1.0,
    }
    lp1 = log_posterior(state, X, Z, HURDLE_COUNT, param, priors)
    lp2 = log_posterior(dict(state, tau_o=2.0), X, Z, HURDLE_COUNT, param, priors)
    quad = param.precision_o.quad(delta)
    dgamma = (
        stats.gamma.logpdf(2.0, priors.tau_shape, scale=1 / priors.tau_rate)
        - stats.gamma.logpdf(1.0, priors.tau_shape, scale=1 / priors.tau_rate)
    )
    assert np.isclose(lp2 - lp1, 0.5 * 4 * np.log(2.0) - 0.5 * quad + dgamma, atol=1e-10)


def test_adaptive_sampler_gaussian_toy_target():
    target_mean = np.array([1.0, -2.0, 0.5])
    prec = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.5]])

    def logpost(state):
        d = state["x"] - target_mean
        return -0.5 * d @ prec @ d

    cfg = SamplerConfig(iterations=30_000, burnin=5_000, thin=5, seed=7)
    chain = sample_adaptive_rw(logpost, {"x": np.zeros(3)}, cfg)
    x = chain.samples
    for j in range(3):
        se, ess = ess_batch_means(x[:, j])
        assert abs(x[:, j].mean() - target_mean[j]) < 3 * se
    assert chain.adaptation_frozen
    # acceptance adapted toward the vector target
    assert 0.1 < chain.accept_rates["x"] < 0.45


def test_fit_rank_zero_matches_glm_mode():
    ds = generate_dataset(HURDLE_COUNT, 2000, 50, CFG, [1.0, 1.0], [1.0, 1.0], seed=5)
    sites, X, Z = ds.train()
    mesh = build_mesh(ds.sites, "regular-lattice", target_vertices=60, padding=0.1)
    N = adjacency(mesh)
    basis = leading_eigenvectors(moran_operator(N), 4)
    empty = basis.vectors[:, :0]
    rp0 = ReducedPrecision(np.empty((0, 0)), np.empty((0, 0)), 0.0)
    A = build_projector(mesh, sites)
    param = PicarZ(A, empty, empty, rp0, rp0)
    cfg = SamplerConfig(iterations=6000, burnin=2000, thin=4, seed=6)
    chain = fit(X, Z, HURDLE_COUNT, param, config=cfg)
    # oracle: maximum-likelihood GLM fits of the two parts
    beta_o_ml = fit_glm("logistic", X, binarize_occurrence(Z)).coef
    Zp, Xp, _ = positive_subset(Z, X, sites)
    beta_p_ml = fit_glm("zero-truncated-poisson", Xp, Zp).coef
    np.testing.assert_allclose(chain.get("beta_o").mean(axis=0), beta_o_ml, atol=0.15)
    np.testing.assert_allclose(chain.get("beta_p").mean(axis=0), beta_p_ml, atol=0.1)


def test_fit_deterministic():
    ds = generate_dataset(HURDLE_COUNT, 120, 30, CFG, [1.0, 1.0], [1.0, 1.0], seed=8)
    X, Z, param, _, _ = _picar_setup(ds, p=5)
    cfg = SamplerConfig(iterations=400, burnin=100, thin=3, seed=11)
    c1 = fit(X, Z, HURDLE_COUNT, param, config=cfg)
    c2 = fit(X, Z, HURDLE_COUNT, param, config=cfg)
    np.testing.assert_array_equal(c1.samples, c2.samples)
    assert c1.accept_rates == c2.accept_rates


def test_chain_record_count_and_rates():
    ds = generate_dataset(HURDLE_LOGNORMAL, 100, 20, CFG, [1.0, 1.0], [1.0, 1.0], sigma2_eps=0.1, seed=9)
    X, Z, param, _, _ = _picar_setup(ds, p=5)
    cfg = SamplerConfig(iterations=900, burnin=300, thin=6, seed=12)
    chain = fit(X, Z, HURDLE_LOGNORMAL, param, config=cfg)
    assert chain.n_draws == (900 - 300) // 6
    assert all(0.0 <= r <= 1.0 for r in chain.accept_rates.values())
    assert chain.adaptation_frozen
    assert chain.has("sigma2_eps")


def test_conjugate_tau_moments():
    rng = np.random.default_rng(13)
    priors = PriorSpec()
    quad, p = 7.3, 12
    shape, rate = tau_full_conditional(priors, quad, p)
    assert shape == priors.tau_shape + 6.0
    assert rate == priors.tau_rate + 3.65
    draws = rng.gamma(shape, 1.0 / rate, size=100_000)
    mean, var = shape / rate, shape / rate**2
    se_mean = np.sqrt(var / len(draws))
    assert abs(draws.mean() - mean) < 3 * se_mean
    # variance of the sample variance for a Gamma via its fourth moment
    kurt_excess = 6.0 / shape
    se_var = var * np.sqrt((2 + kurt_excess) / len(draws))
    assert abs(draws.var(ddof=1) - var) < 3 * se_var


def test_correlated_prior_rho_zero_reduces_to_independent():
    rng = np.random.default_rng(14)
    for p_o, p_p in ((3, 3), (4, 2)):
        L_o = np.tril(rng.standard_normal((p_o, p_o))) + p_o * np.eye(p_o)
        L_p = np.tril(rng.standard_normal((p_p, p_p))) + p_p * np.eye(p_p)
        rp_o = ReducedPrecision(L_o @ L_o.T, L_o, 2 * np.log(np.diag(L_o)).sum())
        rp_p = ReducedPrecision(L_p @ L_p.T, L_p, 2 * np.log(np.diag(L_p)).sum())
        d_o = rng.standard_normal(p_o)
        d_p = rng.standard_normal(p_p)
        tau_o, tau_p = 1.3, 0.6
        got = correlated_delta_logprior(d_o, d_p, tau_o, tau_p, 0.0, rp_o, rp_p)
        expected = stats.multivariate_normal.logpdf(
            d_o, mean=np.zeros(p_o), cov=np.linalg.inv(tau_o * rp_o.matrix)
        ) + stats.multivariate_normal.logpdf(
            d_p, mean=np.zeros(p_p), cov=np.linalg.inv(tau_p * rp_p.matrix)
        )
        assert np.isclose(got, expected)


def test_correlated_prior_bivariate_closed_form():
    rp = ReducedPrecision(np.array([[1.0]]), np.array([[1.0]]), 0.0)
    rho = 0.6
    cov = np.array([[1.0, rho], [rho, 1.0]])
    x = np.array([0.7, -0.4])
    got = correlated_delta_logprior(x[:1], x[1:], 1.0, 1.0, rho, rp, rp)
    expected = stats.multivariate_normal.logpdf(x, mean=np.zeros(2), cov=cov)
    assert np.isclose(got, expected)


def test_correlated_prior_extreme_rho_stays_finite():
    rng = np.random.default_rng(15)
    L = np.tril(rng.standard_normal((4, 4))) + 4 * np.eye(4)
    rp = ReducedPrecision(L @ L.T, L, 2 * np.log(np.diag(L)).sum())
    d = rng.standard_normal(4)
    for rho in (0.99, -0.99):
        val = correlated_delta_logprior(d, d, 1.0, 1.0, rho, rp, rp)
        assert np.isfinite(val)
    assert correlated_delta_logprior(d, d, 1.0, 1.0, 1.0, rp, rp) == -np.inf


def test_correlated_fit_smoke():
    ds = generate_dataset(HURDLE_COUNT, 150, 30, CFG, [1.0, 1.0], [1.0, 1.0], seed=16)
    sites, X, Z = ds.train()
    mesh = build_mesh(ds.sites, "regular-lattice", target_vertices=80, padding=0.1)
    N = adjacency(mesh)
    basis = leading_eigenvectors(moran_operator(N), 6)
    rp = reduced_precision(basis, build_precision(N, PrecisionSpec("icar")))
    A = build_projector(mesh, sites)
    param = PicarZ(A, basis, basis, rp, rp, correlated=True)
    cfg = SamplerConfig(iterations=600, burnin=200, thin=4, seed=17)
    chain = fit(X, Z, HURDLE_COUNT, param, config=cfg)
    rho_draws = chain.get("rho")
    assert chain.method == "picar-correlated"
    assert np.all(np.abs(rho_draws) < 1.0)


def test_predict_single_draw_plugin_and_two_draw_average():
    ds = generate_dataset(HURDLE_COUNT, 100, 40, CFG, [1.0, 1.0], [1.0, 1.0], seed=18)
    X, Z, param, mesh, basis = _picar_setup(ds, p=5)
    cfg = SamplerConfig(iterations=60, burnin=30, thin=15, seed=19)
    chain = fit(X, Z, HURDLE_COUNT, param, config=cfg)
    assert chain.n_draws == 2
    sites_cv, X_cv, Z_cv = ds.validation()
    A_cv = build_projector(mesh, sites_cv)
    design_cv = param.cv_design(A_cv)

    both = predict(chain, HURDLE_COUNT, X_cv, design_cv)
    singles = []
    for r in range(2):
        row = chain.samples[r]
        sl = chain.block_index
        eta_o = X_cv @ row[sl["beta_o"]] + design_cv.B_o @ row[sl["delta_o"]]
        eta_p = X_cv @ row[sl["beta_p"]] + design_cv.B_p @ row[sl["delta_p"]]
        singles.append(predictive_mean(HURDLE_COUNT, occurrence_prob(eta_o), np.exp(eta_p)))
    np.testing.assert_allclose(both.mean, np.mean(singles, axis=0), rtol=1e-12)

    # validation sites equal to training sites reproduce the in-sample pi
    A_tr = build_projector(mesh, ds.train()[0])
    in_sample = predict(chain, HURDLE_COUNT, X, param.cv_design(A_tr))
    row = chain.samples[0]
    sl = chain.block_index
    eta_o0 = X @ row[sl["beta_o"]] + param.B_o @ row[sl["delta_o"]]
    pi0 = occurrence_prob(eta_o0)
    eta_o1 = X @ chain.samples[1][sl["beta_o"]] + param.B_o @ chain.samples[1][sl["delta_o"]]
    pi1 = occurrence_prob(eta_o1)
    np.testing.assert_allclose(in_sample.pi_mean, (pi0 + pi1) / 2, rtol=1e-10)


def test_predict_mesh_mismatch():
    ds = generate_dataset(HURDLE_COUNT, 60, 10, CFG, [1.0, 1.0], [1.0, 1.0], seed=20)
    X, Z, param, mesh, basis = _picar_setup(ds, p=4, target_vertices=60)
    other = build_mesh(ds.sites, "regular-lattice", target_vertices=150, padding=0.1)
    A_bad = build_projector(other, ds.validation()[0])
    with pytest.raises(ValueError, match="mesh mismatch"):
        param.cv_design(A_bad)


def test_invalid_initialization():
    ds = generate_dataset(HURDLE_COUNT, 60, 10, CFG, [1.0, 1.0], [1.0, 1.0], seed=21)
    X, Z, param, _, _ = _picar_setup(ds, p=4, target_vertices=60)
    X = X.copy()
    X[0, 0] = np.inf
    with pytest.raises(ValueError, match="invalid initialization"):
        fit(X, Z, HURDLE_COUNT, param, config=SamplerConfig(iterations=50, burnin=10, seed=0))


def test_frk_fit_and_predict_smoke():
    ds = generate_dataset(HURDLE_COUNT, 150, 30, CFG, [1.0, 1.0], [1.0, 1.0], seed=22)
    sites, X, Z = ds.train()
    design = build_bisquare_design(sites, box=(0, 1, 0, 1))
    param = FixedRankKriging(design)
    cfg = SamplerConfig(iterations=400, burnin=100, thin=3, seed=23)
    chain = fit(X, Z, HURDLE_COUNT, param, config=cfg)
    assert chain.method == "frk"
    assert chain.get("delta_o").shape[1] == 84
    sites_cv, X_cv, _ = ds.validation()
    summary = predict(chain, HURDLE_COUNT, X_cv, param.cv_design(sites_cv))
    assert summary.mean.shape == (30,)
    assert np.isfinite(summary.mean).all()


def test_gold_fit_runs_and_chain_io(tmp_path):
    ds = generate_dataset(HURDLE_COUNT, 60, 15, CFG, [1.0, 1.0], [1.0, 1.0], seed=24)
    sites, X, Z = ds.train()
    param = GoldStandard(sites)
    cfg = SamplerConfig(iterations=300, burnin=100, thin=4, seed=25)
    chain = fit(X, Z, HURDLE_COUNT, param, config=cfg)
    assert chain.get("gamma_o").shape[1] == 60
    assert chain.has("phi_o") and chain.has("sigma2_o")
    sites_cv, X_cv, _ = ds.validation()
    summary = predict(chain, HURDLE_COUNT, X_cv, param.cv_design(sites_cv))
    assert np.isfinite(summary.mean).all()

    chain_path = tmp_path / "chain.csv"
    summary_path = tmp_path / "chain.json"
    save_chain(chain, chain_path)
    save_chain_summary(chain, summary_path)
    loaded = load_chain(chain_path, summary_path)
    np.testing.assert_allclose(loaded.samples, chain.samples, atol=1e-12)
    assert loaded.block_index == chain.block_index
    assert loaded.method == "gold"
    redo = predict(loaded, HURDLE_COUNT, X_cv, param.cv_design(sites_cv))
    np.testing.assert_allclose(redo.mean, summary.mean, atol=1e-9)


def test_gold_standard_equivalence_on_predictions():
    # PICAR and the gold standard should broadly agree where they predict
    ds = generate_dataset(HURDLE_COUNT, 200, 60, CFG, [1.0, 1.0], [1.0, 1.0], seed=26)
    sites, X, Z = ds.train()
    mesh = build_mesh(ds.sites, "regular-lattice", target_vertices=220, padding=0.1)
    N = adjacency(mesh)
    basis = leading_eigenvectors(moran_operator(N), 50)
    rp = reduced_precision(basis, build_precision(N, PrecisionSpec("icar")))
    A = build_projector(mesh, sites)
    picar = PicarZ(A, basis, basis, rp, rp)
    cfg = SamplerConfig(iterations=4000, burnin=1500, thin=5, seed=27)
    chain_p = fit(X, Z, HURDLE_COUNT, picar, config=cfg)
    gold = GoldStandard(sites)
    chain_g = fit(X, Z, HURDLE_COUNT, gold, config=SamplerConfig(iterations=4000, burnin=1500, thin=5, seed=28))
    sites_cv, X_cv, Z_cv = ds.validation()
    pred_p = predict(chain_p, HURDLE_COUNT, X_cv, picar.cv_design(build_projector(mesh, sites_cv)))
    pred_g = predict(chain_g, HURDLE_COUNT, X_cv, gold.cv_design(sites_cv), max_draws=200)
    corr = np.corrcoef(pred_p.mean, pred_g.mean)[0, 1]
    assert corr >= 0.9
