"""Command-line pipeline driver.

Usage: ``zispatial <subcommand> <config-file>``.  All inputs, outputs, and
options come from the flat key-value configuration; there are no other
positional arguments.  Exit codes: 0 success, 1 numerical failure,
2 I/O or configuration error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import pipeline
from .config import ConfigError, RunConfig
from .geometry import load_mesh, save_mesh
from .inference import load_chain, save_chain, save_chain_summary
from .rank_selection import RankChoice, save_score_table
from .simulation import load_dataset, save_dataset

__all__ = ["main"]


def _outdir(cfg):
    out = Path(cfg.get("paths.output_dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _path(cfg, key, default):
    value = cfg.get(key)
    return Path(value) if value else default


def cmd_simulate(cfg):
    out = _outdir(cfg)
    B = cfg.get_int("simulate.replicates")
    paths = []
    for k in range(B):
        ds = pipeline.simulate_replicate(cfg, k)
        if B == 1:
            path = _path(cfg, "paths.dataset", out / "dataset.csv")
        else:
            path = out / f"dataset_{k:03d}.csv"
        save_dataset(ds, path)
        paths.append(str(path))
    cfg.echo(out / "simulate.config.txt", extra={"written": ",".join(paths)})
    print(f"wrote {B} dataset(s): {', '.join(paths)}")
    return 0


def _load_dataset(cfg):
    path = Path(cfg.require("paths.dataset"))
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    ds = pipeline_load_dataset(path, cfg)
    return ds


def pipeline_load_dataset(path, cfg):
    ds = load_dataset(path, family=pipeline.family_from_config(cfg))
    _validate_family_data(ds)
    return ds


def _validate_family_data(ds):
    Z = ds.Z
    if np.any(Z < 0):
        raise ValueError("observations must be nonnegative")
    if ds.family.is_count and np.any(Z != np.floor(Z)):
        raise ValueError("count family requires integer observations")


def cmd_mesh(cfg):
    out = _outdir(cfg)
    ds = _load_dataset(cfg)
    mesh = pipeline.mesh_from_config(cfg, ds.sites)
    path = _path(cfg, "paths.mesh", out / "mesh.txt")
    save_mesh(mesh, path)
    cfg.echo(out / "mesh.config.txt", extra={"written": str(path), "vertices": mesh.n_vertices})
    print(f"wrote mesh with {mesh.n_vertices} vertices, {mesh.n_triangles} triangles: {path}")
    return 0


def _mesh_for(cfg, ds):
    mesh_path = cfg.get("paths.mesh")
    if mesh_path:
        return load_mesh(mesh_path)
    return pipeline.mesh_from_config(cfg, ds.sites)


def cmd_select_rank(cfg):
    out = _outdir(cfg)
    ds = _load_dataset(cfg)
    mesh = _mesh_for(cfg, ds)
    _, basis, _ = pipeline.basis_pool(cfg, mesh)
    from .geometry import build_projector
    from .rank_selection import RankGrid, select_ranks

    sites, X, Z = ds.train()
    A = build_projector(mesh, sites)
    grid = RankGrid(basis.rank, cfg.get_int("basis.grid_size"))
    choice = select_ranks(Z, X, A, basis, ds.family, grid, split_seed=cfg.get_int("run.seed"))
    scores_path = _path(cfg, "paths.scores", out / "rank_scores.csv")
    save_score_table(choice, scores_path)
    cfg.echo(out / "select-rank.config.txt", extra={"ranks.p_o": choice.p_o, "ranks.p_p": choice.p_p})
    print(f"selected p_o={choice.p_o}, p_p={choice.p_p}; score table: {scores_path}")
    return 0


def cmd_fit(cfg):
    out = _outdir(cfg)
    ds = _load_dataset(cfg)
    result = pipeline.fit_dataset(cfg, ds)
    chain_path = _path(cfg, "paths.chain", out / "chain.csv")
    summary_path = _path(cfg, "paths.summary", out / "chain_summary.json")
    save_chain(result.chain, chain_path)
    save_chain_summary(result.chain, summary_path)
    extra = {"chain": str(chain_path), "summary": str(summary_path),
             "seconds_total": f"{result.seconds_total:.3f}"}
    if result.ranks:
        extra["ranks.p_o"], extra["ranks.p_p"] = result.ranks
    cfg.echo(out / "fit.config.txt", extra=extra)
    rates = ", ".join(f"{k}={v:.2f}" for k, v in result.chain.accept_rates.items())
    print(f"fit {result.chain.method}/{ds.family.tag}: {result.chain.n_draws} draws "
          f"in {result.chain.seconds:.1f}s (accept {rates})")
    print(f"chain: {chain_path}")
    return 0


def cmd_predict(cfg):
    out = _outdir(cfg)
    ds = _load_dataset(cfg)
    chain_path = _path(cfg, "paths.chain", out / "chain.csv")
    if not chain_path.exists():
        raise FileNotFoundError(f"chain not found: {chain_path}")
    summary_path = _path(cfg, "paths.summary", out / "chain_summary.json")
    chain = load_chain(chain_path, summary_path if summary_path.exists() else None)
    result = _rebuild_design(cfg, ds, chain)
    row, summary = pipeline.score_fit(cfg, ds, result)
    sites_cv, _, Z_cv = ds.validation()
    pred_path = _path(cfg, "paths.predictions", out / "predictions.csv")
    pd.DataFrame(
        {
            "x_coord": sites_cv[:, 0],
            "y_coord": sites_cv[:, 1],
            "z_true": Z_cv,
            "pred_mean": summary.mean,
            "pred_sd": summary.sd,
            "pi_mean": summary.pi_mean,
            "pos_prob_mean": summary.pos_prob_mean,
        }
    ).to_csv(pred_path, index=False)
    metrics_path = _path(cfg, "paths.metrics", out / "metrics.csv")
    row["replicate"] = 0
    _append_metrics(metrics_path, [row])
    cfg.echo(out / "predict.config.txt", extra={"predictions": str(pred_path), "metrics": str(metrics_path)})
    print(f"rmspe_total={row['rmspe_total']:.4f} rmspe_positive={row['rmspe_positive']:.4f} auc={row['auc']:.4f}")
    return 0


def _rebuild_design(cfg, ds, chain):
    """Reconstruct the latent design a stored chain was fit with."""
    from .geometry import build_projector
    from .inference import FixedRankKriging, GoldStandard, PicarZ
    from .simulation import build_bisquare_design
    from .spectral import reduced_precision

    sites, _, _ = ds.train()
    method = chain.method or cfg.get("fit.method")
    if method in ("picar", "picar-correlated"):
        mesh = _mesh_for(cfg, ds)
        _, basis, Q = pipeline.basis_pool(cfg, mesh)
        p_o = chain.block_index["delta_o"].stop - chain.block_index["delta_o"].start
        p_p = chain.block_index["delta_p"].stop - chain.block_index["delta_p"].start
        if basis.rank < max(p_o, p_p):
            raise ValueError("basis pool smaller than the chain's coefficient blocks")
        b_o, b_p = basis.truncate(p_o), basis.truncate(p_p)
        param = PicarZ(build_projector(mesh, sites), b_o, b_p,
                       reduced_precision(b_o, Q), reduced_precision(b_p, Q),
                       correlated=(method == "picar-correlated"))
        return pipeline.FitResult(chain, param, mesh, (p_o, p_p), [], 0.0)
    if method == "frk":
        box = (ds.sites[:, 0].min(), ds.sites[:, 0].max(), ds.sites[:, 1].min(), ds.sites[:, 1].max())
        param = FixedRankKriging(build_bisquare_design(sites, box=box))
        return pipeline.FitResult(chain, param, None, (84, 84), [], 0.0)
    if method == "gold":
        return pipeline.FitResult(chain, GoldStandard(sites), None, (), [], 0.0)
    raise ConfigError(f"cannot rebuild design for method {method!r}")


def _append_metrics(path, rows):
    frame = pd.DataFrame(rows)[["replicate"] + pipeline.METRIC_COLUMNS]
    if Path(path).exists():
        frame = pd.concat([pd.read_csv(path), frame], ignore_index=True)
    frame.to_csv(path, index=False)


def cmd_report(cfg):
    out = _outdir(cfg)
    metrics_path = cfg.get("paths.metrics")
    frames = []
    if metrics_path:
        frames.append(pd.read_csv(metrics_path))
    else:
        for path in sorted(out.glob("metrics*.csv")):
            frames.append(pd.read_csv(path))
    if not frames:
        raise FileNotFoundError("no metrics CSVs found; run fit/predict or benchmark first")
    table = pipeline.aggregate_report(frames)
    report_path = _path(cfg, "paths.report", out / "report.csv")
    table.to_csv(report_path, index=False)
    print(table.to_string(index=False))
    print(f"report: {report_path}")

    chain_path = cfg.get("paths.chain")
    if chain_path:
        ds = _load_dataset(cfg)
        summary_path = _path(cfg, "paths.summary", Path(chain_path.replace(".csv", "_summary.json")))
        chain = load_chain(chain_path, summary_path if Path(summary_path).exists() else None)
        result = _rebuild_design(cfg, ds, chain)
        surface = pipeline.surface_grid(cfg, ds, result)
        surface_path = _path(cfg, "paths.surface", out / "surface.csv")
        surface.to_csv(surface_path, index=False)
        print(f"surface: {surface_path}")
    cfg.echo(out / "report.config.txt")
    return 0


def cmd_benchmark(cfg):
    out = _outdir(cfg)
    rows = pipeline.run_benchmark(cfg)
    metrics_path = _path(cfg, "paths.metrics", out / "metrics.csv")
    rows.to_csv(metrics_path, index=False)
    table = pipeline.aggregate_report(rows)
    report_path = _path(cfg, "paths.report", out / "report.csv")
    table.to_csv(report_path, index=False)
    cfg.echo(out / "benchmark.config.txt", extra={"metrics": str(metrics_path), "report": str(report_path)})
    print(table.to_string(index=False))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "mesh": cmd_mesh,
    "select-rank": cmd_select_rank,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "report": cmd_report,
    "benchmark": cmd_benchmark,
}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="zispatial", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="path to the run configuration file")
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config)
        return COMMANDS[args.command](cfg)
    except (ConfigError, FileNotFoundError, NotADirectoryError, PermissionError, IsADirectoryError, json.JSONDecodeError, pd.errors.ParserError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
