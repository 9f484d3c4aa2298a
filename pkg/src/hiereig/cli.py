"""Command-line entry points.

Subcommands: decompose (build and store a hierarchy), solve (run the
hierarchical eigensolver on a stored hierarchy), baseline (shift-invert
Lanczos with plain CG), compare (join two metrics files), ncut (normalized
cut demo), report (render a metrics file as a CSV table). Every command
accepts --config JSON; explicit flags override config values.
"""

from __future__ import annotations

import json
import logging
import os
import sys

import click
import numpy as np

from hiereig import baseline as baseline_mod
from hiereig import ingest, mmd, ncut as ncut_mod
from hiereig.driver import SolverParams, hierarchical_eigensolve
from hiereig.metrics import RunMetrics, compare_runs, render_table
from hiereig.sparse import read_matrix_market, write_sparse_market

logger = logging.getLogger(__name__)


def _setup_logging(verbose: int) -> None:
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _merge_config(config, **flags):
    merged = dict(config or {})
    for key, val in flags.items():
        if val is not None:
            merged[key] = val
    return merged


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose):
    """Hierarchical leftmost eigensolver for sparse SPD matrices."""
    _setup_logging(verbose)


def _build_matrix(cfg):
    if cfg.get("input"):
        a = read_matrix_market(cfg["input"])
        a.label = "A0"
        return a
    if cfg.get("synthetic") != "swissroll":
        raise click.UsageError("provide --input FILE or --synthetic swissroll")
    n = int(cfg.get("n", 20000))
    seed = int(cfg.get("seed", 0x5EED))
    cloud = ingest.generate_swissroll(n, seed=seed)
    nbrs = ingest.knn_graph(cloud, int(cfg.get("knn", 10)))
    graph = ingest.gaussian_weights(cloud, nbrs, float(cfg.get("sigma", 0.1)))
    selfloop = float(cfg.get("selfloop", 1.0))
    if cfg.get("auto_scale", True) and "scale" not in cfg:
        return ingest.auto_scaled_laplacian(
            graph, selfloop=selfloop, seed=seed,
            lambda2_target=float(cfg.get("lambda2_target", 2.0)))
    return ingest.graph_laplacian(graph, scale=float(cfg.get("scale", 1.0)),
                                  selfloop=selfloop)


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--input", "input_", type=click.Path(exists=True), default=None,
              help="Matrix Market file with the SPD matrix.")
@click.option("--synthetic", type=click.Choice(["swissroll"]), default=None)
@click.option("--n", type=int, default=None, help="Synthetic point count.")
@click.option("--knn", type=int, default=None)
@click.option("--sigma", type=float, default=None)
@click.option("--scale", type=float, default=None)
@click.option("--auto-scale/--no-auto-scale", "auto_scale", default=None)
@click.option("--lambda2-target", type=float, default=None,
              help="Where in the order-one band lambda_2 lands after rescale.")
@click.option("--selfloop", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--eps1", type=float, default=None, help="Finest compression error.")
@click.option("--eta", type=float, default=None, help="Per-level error ratio.")
@click.option("--cbound", type=float, default=None, help="Condition bound c.")
@click.option("--levels", type=int, default=None, help="Maximum level count.")
@click.option("--min-dim", type=int, default=None)
@click.option("--psi-mode", type=click.Choice(["exact", "localized"]), default=None)
@click.option("--psi-radius", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
def decompose(config, input_, synthetic, n, knn, sigma, scale, auto_scale,
              lambda2_target, selfloop, seed, eps1, eta, cbound, levels,
              min_dim, psi_mode, psi_radius, out):
    """Build a multiresolution hierarchy and store it in a directory."""
    cfg = _merge_config(_load_config(config), input=input_, synthetic=synthetic,
                        n=n, knn=knn, sigma=sigma, scale=scale,
                        auto_scale=auto_scale, lambda2_target=lambda2_target,
                        selfloop=selfloop, seed=seed,
                        eps1=eps1, eta=eta, cbound=cbound, levels=levels,
                        min_dim=min_dim, psi_mode=psi_mode, psi_radius=psi_radius)
    a = _build_matrix(cfg)
    hier = mmd.build_mmd(
        a, eps1=float(cfg.get("eps1", 1e-5)), eta=float(cfg.get("eta", 0.1)),
        c=float(cfg.get("cbound", 20.0)),
        max_levels=cfg.get("levels"), min_dim=int(cfg.get("min_dim", 500)),
        psi_mode=cfg.get("psi_mode", "localized"),
        psi_radius=int(cfg.get("psi_radius", 3)))
    mmd.save_hierarchy(hier, out)
    click.echo(f"hierarchy with {hier.depth} level(s) written to {out}")
    for lv in hier.levels:
        click.echo(f"  level {lv.k}: N={lv.n_coarse} nnz(A)={lv.a_st.nnz} "
                   f"nnz(M)={lv.m.nnz} eps={lv.eps_level:.3e} delta={lv.delta:.3e} "
                   f"kappa(M)~{lv.kappa_m_est:.2f} kappa(B)~{lv.kappa_b_est:.2f}")


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--hier", "hier_dir", required=True, type=click.Path(exists=True))
@click.option("--mtar", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--eps-override", "eps_override", multiple=True,
              help="Per-level accuracy as k=value; repeatable.")
@click.option("--write-vectors", is_flag=True, default=False)
@click.option("--out", required=True, type=click.Path())
def solve(config, hier_dir, mtar, alpha, beta, seed, eps_override,
          write_vectors, out):
    """Run the hierarchical eigensolver on a stored hierarchy."""
    cfg = _merge_config(_load_config(config), mtar=mtar, alpha=alpha, beta=beta,
                        seed=seed)
    hier = mmd.load_hierarchy(hier_dir)
    overrides = {}
    for item in eps_override:
        k, val = item.split("=")
        overrides[int(k)] = float(val)
    params = SolverParams(
        m_tar=int(cfg.get("mtar", 100)), alpha=float(cfg.get("alpha", 3.0)),
        beta=float(cfg.get("beta", 1.0)), seed=int(cfg.get("seed", 0x5EED)),
        eps_overrides=overrides or None)
    result = hierarchical_eigensolve(hier, params)
    os.makedirs(out, exist_ok=True)
    _write_eigen_csv(os.path.join(out, "eigenvalues.csv"), result.lam, result.mu,
                     result.certificate_indices, result.certificate_residuals)
    result.metrics.to_jsonl(os.path.join(out, "metrics.jsonl"))
    if write_vectors:
        write_sparse_market(_to_sparse(result.vectors),
                            os.path.join(out, "eigenvectors.mtx"))
    click.echo(f"{result.mu.size} eigenpairs written to {out} "
               f"(max certificate residual "
               f"{result.metrics.header['certificate_max']:.3e})")


def _to_sparse(dense):
    import scipy.sparse as sp

    return sp.csr_matrix(dense)


def _write_eigen_csv(path, lam, mu, cert_idx, cert_resid):
    cert = {int(i): float(r) for i, r in zip(cert_idx, cert_resid)}
    with open(path, "w") as fh:
        fh.write("index,lambda,mu,residual_certificate\n")
        for i, (lv, mv) in enumerate(zip(lam, mu)):
            tail = f"{cert[i]:.6e}" if i in cert else ""
            fh.write(f"{i + 1},{lv:.17g},{mv:.17g},{tail}\n")


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--input", "input_", type=click.Path(exists=True), default=None)
@click.option("--hier", "hier_dir", type=click.Path(exists=True), default=None,
              help="Reuse the matrix stored in a hierarchy directory.")
@click.option("--mtar", type=int, default=None)
@click.option("--tol", type=float, default=None, help="Ritz residual target.")
@click.option("--cg-tol", type=float, default=None, help="Inner CG tolerance.")
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
def baseline(config, input_, hier_dir, mtar, tol, cg_tol, seed, out):
    """Shift-invert Lanczos baseline with plain-CG inner solves."""
    cfg = _merge_config(_load_config(config), input=input_, mtar=mtar, tol=tol,
                        cg_tol=cg_tol, seed=seed)
    if cfg.get("input"):
        a = read_matrix_market(cfg["input"])
        a.label = "A0"
    elif hier_dir:
        a = read_matrix_market(os.path.join(hier_dir, "a0.mtx"))
        a.label = "A0"
    else:
        raise click.UsageError("provide --input or --hier")
    eps_ritz = float(cfg.get("tol", 1e-5))
    res = baseline_mod.baseline_lanczos(
        a, m_tar=int(cfg.get("mtar", 100)), eps_ritz=eps_ritz,
        cg_tol=float(cfg.get("cg_tol", 0.1 * eps_ritz)),
        seed=int(cfg.get("seed", 0x5EED)))
    os.makedirs(out, exist_ok=True)
    _write_eigen_csv(os.path.join(out, "eigenvalues.csv"), res.lam, res.mu,
                     res.certificate_indices, res.certificate_residuals)
    res.metrics.to_jsonl(os.path.join(out, "metrics.jsonl"))
    click.echo(f"{res.mu.size} eigenpairs written to {out}")


@main.command()
@click.option("--a", "path_a", required=True, type=click.Path(exists=True))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None,
              help="Write the comparison JSON here instead of stdout.")
def compare(path_a, path_b, out):
    """Join two metrics files: total main cost and iteration profiles."""
    res = compare_runs(RunMetrics.from_jsonl(path_a), RunMetrics.from_jsonl(path_b))
    text = json.dumps(res, indent=1)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
        click.echo(f"comparison written to {out}")
    else:
        click.echo(text)


@main.command("ncut")
@click.option("--input", "input_", required=True, type=click.Path(exists=True))
@click.option("--depth", type=int, default=1)
@click.option("--out", type=click.Path(), default=None)
def ncut_cmd(input_, depth, out):
    """Sign-based spectral partition of a graph Laplacian and its Ncut values."""
    a = read_matrix_market(input_)
    a.label = "A0"
    graph = _graph_from_laplacian(a)
    need = depth + 1
    if a.dim <= 2000:
        w, v = np.linalg.eigh(a.to_dense())
        vectors = v[:, :need]
    else:
        res = baseline_mod.baseline_lanczos(a, m_tar=need, eps_ritz=1e-6,
                                            cg_tol=1e-7)
        vectors = res.vectors[:, :need]  # mu descending == lambda ascending
    report = ncut_mod.ncut_report(graph, vectors, depth)
    payload = {"depth": depth, "ncut_values": report.ncut_values}
    click.echo(json.dumps(payload, indent=1))
    if out:
        with open(out, "w") as fh:
            fh.write("node,label\n")
            for i, lab in enumerate(report.labels):
                fh.write(f"{i},{lab}\n")
        click.echo(f"labels written to {out}")


def _graph_from_laplacian(a):
    coo = a.to_scipy().tocoo()
    mask = (coo.row < coo.col) & (coo.data < 0)
    edges = np.stack([coo.row[mask], coo.col[mask]], axis=1)
    return ingest.WeightedGraph(n=a.dim, edges=edges, weights=-coo.data[mask])


@main.command()
@click.option("--metrics", "metrics_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
def report(metrics_path, out):
    """Render a metrics file as a per-level, per-phase CSV table."""
    table = render_table(RunMetrics.from_jsonl(metrics_path))
    if out:
        with open(out, "w") as fh:
            fh.write(table)
        click.echo(f"table written to {out}")
    else:
        click.echo(table, nl=False)


if __name__ == "__main__":
    main()
