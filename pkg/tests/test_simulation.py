import numpy as np
import pytest
from scipy.spatial.distance import cdist

from zispatial.likelihoods import HURDLE_COUNT, MIXTURE_POISSON, MIXTURE_TOBIT
from zispatial.simulation import (
    CrossGPConfig,
    MaternParams,
    build_bisquare_design,
    generate_dataset,
    load_dataset,
    matern_cov,
    sample_cross_fields,
    save_dataset,
)

PAPER_CFG = CrossGPConfig(MaternParams(0.5, 0.2, 1.0), MaternParams(0.5, 0.2, 1.0), rho=0.7)


def test_matern_at_zero():
    for nu in (0.5, 1.5, 2.5):
        p = MaternParams(nu, 0.3, 2.5)
        assert np.isclose(matern_cov(0.0, p), 2.5)


def test_matern_exponential_value():
    p = MaternParams(0.5, 0.2, 1.0)
    assert np.isclose(matern_cov(0.2, p), np.exp(-1.0))


def test_matern_monotone_decreasing():
    h = np.linspace(0, 3, 40)
    for nu in (0.5, 1.5, 2.5):
        c = matern_cov(h, MaternParams(nu, 0.4, 1.0))
        assert (np.diff(c) < 0).all()


def test_matern_invalid_nu():
    with pytest.raises(ValueError):
        MaternParams(1.0, 0.2, 1.0)


def test_cross_fields_rho_zero_independent():
    cfg = CrossGPConfig(MaternParams(), MaternParams(), rho=0.0)
    rng = np.random.default_rng(0)
    sites = rng.random((30, 2))
    R = 20_000
    acc = 0.0
    for r in range(R):
        w_o, w_p = sample_cross_fields(sites, cfg, seed=r)
        acc += w_o @ w_p / len(sites)
    # average cross moment ~ 0 within Monte Carlo error
    assert abs(acc / R) < 0.02


def test_cross_fields_rho_one_limit():
    cfg = CrossGPConfig(MaternParams(), MaternParams(), rho=1 - 1e-12)
    sites = np.random.default_rng(1).random((15, 2))
    w_o, w_p = sample_cross_fields(sites, cfg, seed=3)
    np.testing.assert_allclose(w_o, w_p, atol=1e-4)


def test_cross_fields_covariance_oracle():
    # Monte Carlo covariance against rho * L_o L_p' at n=20
    rng = np.random.default_rng(2)
    sites = rng.random((20, 2))
    cfg = PAPER_CFG
    C_o = matern_cov(cdist(sites, sites), cfg.params_o)
    L = np.linalg.cholesky(C_o)
    expected = 0.7 * L @ L.T
    R = 50_000
    W_o = np.empty((R, 20))
    W_p = np.empty((R, 20))
    base = np.random.SeedSequence(99)
    for r, child in enumerate(base.spawn(R)):
        W_o[r], W_p[r] = sample_cross_fields(sites, cfg, seed=child)
    emp = W_o.T @ W_p / R
    se = 1.3 / np.sqrt(R)  # bound on the entrywise Monte Carlo s.e. for unit-variance fields
    assert np.abs(emp - expected).max() < 4 * 2 * se + 0.02


def test_dataset_saturated_link():
    # intercept-only covariate and a negligible field pin the occurrence
    # predictor at -20, so the logit saturates and almost everything is zero
    tiny = CrossGPConfig(MaternParams(0.5, 0.2, 1e-10), MaternParams(0.5, 0.2, 1e-10), rho=0.0)
    ones = np.ones((120, 1))
    ds = generate_dataset(HURDLE_COUNT, 100, 20, tiny, [-20.0], [1.0], seed=5, covariates=ones)
    assert (ds.Z == 0).all()


def test_hurdle_has_no_zeros_where_occurrence_on():
    ds = generate_dataset(HURDLE_COUNT, 400, 100, PAPER_CFG, [1.0, 1.0], [1.0, 1.0], seed=6)
    assert (ds.Z[ds.occurrence] > 0).all()
    assert (ds.Z[~ds.occurrence] == 0).all()


def test_mixture_consistency_with_occurrence():
    ds = generate_dataset(MIXTURE_POISSON, 400, 100, PAPER_CFG, [1.0, 1.0], [1.0, 1.0], seed=7)
    assert (ds.Z[~ds.occurrence] == 0).all()
    assert (ds.Z >= 0).all()
    assert (ds.Z == np.floor(ds.Z)).all()


def test_tobit_values():
    ds = generate_dataset(MIXTURE_TOBIT, 300, 50, PAPER_CFG, [1.0, 1.0], [1.0, 1.0], sigma2_eps=0.1, seed=8)
    assert (ds.Z >= 0).all()
    assert (ds.Z[ds.Z > 0] > ds.family.tobit_threshold).all()


def test_seed_determinism():
    a = generate_dataset(MIXTURE_POISSON, 50, 10, PAPER_CFG, [1.0, 1.0], [1.0, 1.0], seed=11)
    b = generate_dataset(MIXTURE_POISSON, 50, 10, PAPER_CFG, [1.0, 1.0], [1.0, 1.0], seed=11)
    np.testing.assert_array_equal(a.Z, b.Z)
    np.testing.assert_array_equal(a.sites, b.sites)
    np.testing.assert_array_equal(a.X, b.X)


def test_mixture_zero_fraction_stable_across_seeds():
    # the spatially correlated field keeps per-dataset zero fractions noisy,
    # so the reference value is a long-run average over fresh replicates;
    # two independent seed groups must agree within Monte Carlo error
    def group_fracs(seeds):
        return np.array([
            (generate_dataset(MIXTURE_POISSON, 2000, 10, PAPER_CFG, [1.0, 1.0], [1.0, 1.0], seed=s).Z == 0).mean()
            for s in seeds
        ])

    a = group_fracs(range(100, 130))
    b = group_fracs(range(500, 530))
    pooled_se = np.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    assert abs(a.mean() - b.mean()) < 4 * pooled_se


def test_grid_layout_matches_uniform_moments():
    cfg = PAPER_CFG
    ds = generate_dataset(MIXTURE_POISSON, 1500, 548, cfg, [1.0, 1.0], [1.0, 1.0], seed=13,
                          layout="grid", grid_shape=(32, 64))
    assert len(ds.Z) == 2048
    # exact circulant sampling: marginal field variance near sigma2 = 1
    assert abs(ds.W_o.var() - 1.0) < 0.25
    corr = np.corrcoef(ds.W_o, ds.W_p)[0, 1]
    assert abs(corr - cfg.rho) < 0.12


def test_grid_cross_fields_covariance_oracle():
    # small grid: empirical covariance of the spectral sampler matches the
    # Matérn covariance matrix entrywise
    cfg = PAPER_CFG
    R = 40_000
    W = np.empty((R, 25))
    for r in range(R):
        ds = generate_dataset(MIXTURE_POISSON, 20, 5, cfg, [0.0, 0.0], [0.0, 0.0], seed=10_000 + r,
                              layout="grid", grid_shape=(5, 5))
        W[r] = ds.W_o
    xs = np.linspace(0, 1, 5)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    sites = np.column_stack([xx.ravel(), yy.ravel()])
    expected = matern_cov(cdist(sites, sites), cfg.params_o)
    emp = W.T @ W / R
    assert np.abs(emp - expected).max() < 4 * 1.3 / np.sqrt(R) + 0.02


def test_bisquare_knot_center_and_aperture():
    rng = np.random.default_rng(14)
    sites = rng.random((50, 2))
    design = build_bisquare_design(sites, box=(0.0, 1.0, 0.0, 1.0))
    assert design.matrix.shape == (50, 84)
    assert design.knots.shape == (84, 2)
    # value 1 at a knot, 0 at the aperture, (1 - 1/4)^2 at half aperture
    knot = design.knots[0]
    w = design.apertures[0]
    vals = design.evaluate(np.array([knot, knot + [w, 0.0], knot + [w / 2, 0.0]]))
    assert np.isclose(vals[0, 0], 1.0)
    assert vals[1, 0] == 0.0
    assert np.isclose(vals[2, 0], 0.5625)
    assert design.matrix.min() >= 0.0 and design.matrix.max() <= 1.0


def test_bisquare_resolution_counts():
    design = build_bisquare_design(np.random.default_rng(15).random((10, 2)), box=(0, 1, 0, 1))
    assert design.resolution_sizes == (4, 16, 64)
    assert sum(design.resolution_sizes) == 84


def test_dataset_io_roundtrip(tmp_path):
    ds = generate_dataset(MIXTURE_POISSON, 40, 10, PAPER_CFG, [1.0, 1.0], [1.0, 1.0], seed=16)
    path = tmp_path / "data.csv"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    np.testing.assert_allclose(loaded.Z, ds.Z)
    np.testing.assert_allclose(loaded.X, ds.X)
    np.testing.assert_allclose(loaded.sites, ds.sites)
    np.testing.assert_array_equal(loaded.idx_train, ds.idx_train)
    assert loaded.family.tag == "mixture-poisson"
    assert loaded.meta["rho"] == 0.7
