"""End-to-end runs: simulate, mesh, rank-select, fit, predict, score, report.

The CLI subcommands and the benchmark harness are thin wrappers over the
functions here; the same entry points drive the acceptance studies.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .config import RunConfig
from .geometry import build_mesh, build_projector
from .geometry import adjacency as mesh_adjacency
from .inference import (
    FixedRankKriging,
    GoldStandard,
    PicarZ,
    SamplerConfig,
    fit,
    predict,
)
from .likelihoods import family_from_tag, occurrence_prob
from .metrics import auc, rmspe
from .rank_selection import RankGrid, select_ranks
from .simulation import (
    CrossGPConfig,
    MaternParams,
    build_bisquare_design,
    generate_dataset,
)
from .spectral import (
    PrecisionSpec,
    build_precision,
    leading_eigenvectors,
    moran_operator,
    reduced_precision,
)

__all__ = [
    "family_from_config",
    "simulate_replicate",
    "mesh_from_config",
    "basis_pool",
    "FitResult",
    "fit_dataset",
    "score_fit",
    "run_replicate",
    "run_benchmark",
    "aggregate_report",
    "surface_grid",
]

METRIC_COLUMNS = ["family", "method", "rmspe_total", "rmspe_positive", "auc", "minutes"]


def family_from_config(cfg):
    return family_from_tag(cfg.get("run.family"), cfg.get_float("run.tobit_threshold"))


def simulate_replicate(cfg, k=0):
    """Generate replicate ``k`` from the root seed's derived stream."""
    family = family_from_config(cfg)
    field = MaternParams(cfg.get_float("simulate.nu"), cfg.get_float("simulate.phi"), cfg.get_float("simulate.sigma2"))
    gp = CrossGPConfig(field, field, cfg.get_float("simulate.rho"))
    layout = cfg.get("simulate.layout")
    grid_shape = None
    if layout == "grid":
        grid_shape = (cfg.get_int("simulate.grid_nx"), cfg.get_int("simulate.grid_ny"))
    ds = generate_dataset(
        family,
        cfg.get_int("simulate.n_train"),
        cfg.get_int("simulate.n_cv"),
        gp,
        cfg.get_floats("simulate.beta_o"),
        cfg.get_floats("simulate.beta_p"),
        sigma2_eps=cfg.get_float("simulate.sigma2_eps"),
        seed=cfg.replicate_seed(k),
        layout=layout,
        grid_shape=grid_shape,
        covariates=cfg.get("simulate.covariates"),
    )
    ds.meta["seed"] = cfg.get_int("run.seed")
    ds.meta["replicate"] = k
    return ds


def mesh_from_config(cfg, sites):
    target = int(cfg.require("mesh.target_vertices"))
    return build_mesh(sites, cfg.get("mesh.mode"), target_vertices=target, padding=cfg.get_float("mesh.padding"))


def precision_spec(cfg):
    kind = cfg.get("basis.precision")
    return PrecisionSpec(kind, cfg.get_float("basis.car_rho") if kind == "car" else None)


def basis_pool(cfg, mesh):
    """Adjacency, pooled Moran basis, and vertex precision for a mesh."""
    N = mesh_adjacency(mesh)
    p_max = cfg.get_int("basis.rank_max")
    if p_max <= 0:
        p_max = min(mesh.n_vertices // 4, 250)
    p_max = min(p_max, mesh.n_vertices - 3)
    basis = leading_eigenvectors(moran_operator(N), p_max, seed=cfg.get_int("run.seed"))
    Q = build_precision(N, precision_spec(cfg))
    return N, basis, Q


@dataclass
class FitResult:
    chain: object
    param: object
    mesh: object
    ranks: tuple
    rank_table: list
    seconds_total: float

    def cv_design(self, sites_cv):
        if isinstance(self.param, PicarZ):
            return self.param.cv_design(build_projector(self.mesh, sites_cv))
        return self.param.cv_design(sites_cv)


def _resolve_ranks(cfg, ds, A, basis, split_seed):
    p_o, p_p = cfg.get_int("ranks.p_o"), cfg.get_int("ranks.p_p")
    table = []
    if p_o <= 0 or p_p <= 0:
        grid = RankGrid(basis.rank, cfg.get_int("basis.grid_size"))
        _, X, Z = ds.train()
        choice = select_ranks(Z, X, A, basis, ds.family, grid, split_seed=split_seed)
        table = choice.table
        p_o = p_o if p_o > 0 else choice.p_o
        p_p = p_p if p_p > 0 else choice.p_p
    return p_o, p_p, table


def fit_dataset(cfg, ds, method=None, seed=None):
    """Build the requested latent design for a dataset and sample the posterior."""
    method = method or cfg.get("fit.method")
    seed = cfg.get_int("run.seed") if seed is None else seed
    family = ds.family
    sites, X, Z = ds.train()
    t0 = time.perf_counter()

    ranks = ()
    rank_table = []
    mesh = None
    if method in ("picar", "picar-correlated"):
        mesh = mesh_from_config(cfg, ds.sites)
        N, basis, Q = basis_pool(cfg, mesh)
        A = build_projector(mesh, sites)
        p_o, p_p, rank_table = _resolve_ranks(cfg, ds, A, basis, split_seed=seed)
        b_o, b_p = basis.truncate(p_o), basis.truncate(p_p)
        param = PicarZ(A, b_o, b_p, reduced_precision(b_o, Q), reduced_precision(b_p, Q),
                       correlated=(method == "picar-correlated"))
        ranks = (p_o, p_p)
    elif method == "frk":
        box = (ds.sites[:, 0].min(), ds.sites[:, 0].max(), ds.sites[:, 1].min(), ds.sites[:, 1].max())
        param = FixedRankKriging(build_bisquare_design(sites, box=box))
        ranks = (84, 84)
    elif method == "gold":
        param = GoldStandard(sites)
    else:
        raise ValueError(f"unknown fit method {method!r}")

    burnin = cfg.get_int("sampler.burnin")
    sampler = SamplerConfig(
        iterations=cfg.get_int("sampler.iterations"),
        burnin=burnin if burnin > 0 else None,
        thin=cfg.get_int("sampler.thin"),
        seed=seed,
        adapt_window=cfg.get_int("sampler.adapt_window"),
        init_scale=cfg.get_float("sampler.init_scale"),
    )
    chain = fit(X, Z, family, param, config=sampler, link=cfg.get("run.link"), sites=sites)
    return FitResult(chain, param, mesh, ranks, rank_table, time.perf_counter() - t0)


def score_fit(cfg, ds, result):
    """Predict at the held-out sites and compute the validation metrics row."""
    sites_cv, X_cv, Z_cv = ds.validation()
    summary = predict(
        result.chain,
        ds.family,
        X_cv,
        result.cv_design(sites_cv),
        link=cfg.get("run.link"),
        max_draws=cfg.get_int("predict.max_draws"),
    )
    pos = Z_cv > 0
    row = {
        "family": ds.family.tag,
        "method": result.chain.method,
        "rmspe_total": rmspe(Z_cv, summary.mean),
        "rmspe_positive": rmspe(Z_cv[pos], summary.mean[pos]) if pos.any() else np.nan,
        "auc": auc(pos.astype(int), summary.pos_prob_mean) if 0 < pos.sum() < len(Z_cv) else np.nan,
        "minutes": result.chain.seconds / 60.0,
    }
    return row, summary


def run_replicate(cfg, k, methods=None):
    """Simulate replicate k and fit/score every requested method."""
    methods = methods or cfg.get_list("benchmark.methods")
    ds = simulate_replicate(cfg, k)
    rows = []
    for method in methods:
        result = fit_dataset(cfg, ds, method=method, seed=cfg.get_int("run.seed") + 7919 * k)
        row, _ = score_fit(cfg, ds, result)
        row["replicate"] = k
        rows.append(row)
    return rows


def _replicate_task(args):
    values, k, methods = args
    return run_replicate(RunConfig(values), k, methods)


def run_benchmark(cfg, replicates=None, methods=None, workers=None):
    """Fit all replicate-method pairs and return the per-fit metric rows."""
    B = replicates or cfg.get_int("simulate.replicates")
    methods = methods or cfg.get_list("benchmark.methods")
    workers = workers or cfg.get_int("benchmark.workers")
    rows = []
    if workers > 1:
        payload = {k: v for k, v in cfg.values.items()}
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_replicate_task, [(payload, k, methods) for k in range(B)]):
                rows.extend(chunk)
    else:
        for k in range(B):
            rows.extend(run_replicate(cfg, k, methods))
    return pd.DataFrame(rows)[["replicate"] + METRIC_COLUMNS]


def aggregate_report(frames):
    """Median metrics per (family, method), mirroring the study table layout."""
    df = pd.concat(frames, ignore_index=True) if isinstance(frames, (list, tuple)) else frames
    if len(df) == 0:
        raise ValueError("no completed fits to report")
    grouped = (
        df.groupby(["family", "method"], as_index=False)[["rmspe_total", "rmspe_positive", "auc", "minutes"]]
        .median()
        .sort_values(["family", "method"], kind="stable")
        .reset_index(drop=True)
    )
    return grouped[METRIC_COLUMNS]


def surface_grid(cfg, ds, result, n_grid=None):
    """Posterior mean/sd surfaces of pi and the log-intensity on a grid."""
    n_grid = n_grid or cfg.get_int("report.surface_grid")
    xs = np.linspace(ds.sites[:, 0].min(), ds.sites[:, 0].max(), n_grid)
    ys = np.linspace(ds.sites[:, 1].min(), ds.sites[:, 1].max(), n_grid)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    design = result.cv_design(pts)
    chain = result.chain
    sl = chain.block_index
    rows = min(chain.n_draws, cfg.get_int("predict.max_draws"))
    idx = np.unique(np.linspace(0, chain.n_draws - 1, rows).round().astype(int))
    # grid covariates fixed at zero: surfaces show the latent fields
    X0 = np.zeros((len(pts), chain.block_index["beta_o"].stop - chain.block_index["beta_o"].start))
    pi_acc = np.zeros(len(pts))
    pi_m2 = np.zeros(len(pts))
    lp_acc = np.zeros(len(pts))
    lp_m2 = np.zeros(len(pts))
    gold = chain.method == "gold"
    for t, r in enumerate(idx):
        row = chain.samples[r]
        if gold:
            w_o = design.field(row[sl["phi_o"]][0], row[sl["gamma_o"]])
            w_p = design.field(row[sl["phi_p"]][0], row[sl["gamma_p"]])
        else:
            w_o = design.B_o @ row[sl["delta_o"]] if "delta_o" in sl else 0.0
            w_p = design.B_p @ row[sl["delta_p"]] if "delta_p" in sl else 0.0
        pi = occurrence_prob(X0 @ row[sl["beta_o"]] + w_o, cfg.get("run.link"))
        lp = X0 @ row[sl["beta_p"]] + w_p
        d = pi - pi_acc
        pi_acc += d / (t + 1)
        pi_m2 += d * (pi - pi_acc)
        d = lp - lp_acc
        lp_acc += d / (t + 1)
        lp_m2 += d * (lp - lp_acc)
    T = len(idx)
    sd = lambda m2: np.sqrt(m2 / (T - 1)) if T > 1 else np.zeros(len(pts))
    return pd.DataFrame(
        {
            "x": pts[:, 0],
            "y": pts[:, 1],
            "pi_mean": pi_acc,
            "pi_sd": sd(pi_m2),
            "log_intensity_mean": lp_acc,
            "log_intensity_sd": sd(lp_m2),
        }
    )
