"""Multi-level stacking of one-level compressions.

Each level compresses the previous stiffness matrix with a geometrically
growing error budget eps_k = eps_1 / eta^(k-1), inheriting the energy
decomposition through the fine basis so the partitioner always works with
honest per-patch indicators. A level records its one-level factors plus the
cumulative objects the eigensolver needs: the cumulative basis product, the
cumulative Gram matrix (the PCG preconditioner), and extreme-eigenvalue
certificates for the Gram and complement operators.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from hiereig.compression import (
    BComplementOperator,
    CoarseBasis,
    FineBasis,
    HouseholderColumns,
    assemble_level,
    build_phi,
    build_psi,
    inherited_energy,
    _symmetric_drop,
)
from hiereig.energy import (
    EnergyDecomposition,
    Partition,
    build_partition,
    laplacian_energy_decomposition,
)
from hiereig.krylov import cg, extreme_ritz
from hiereig.sparse import (
    SparseSymMatrix,
    read_matrix_market,
    read_sparse_market,
    write_matrix_market,
    write_sparse_market,
)

logger = logging.getLogger(__name__)


@dataclass
class MmdLevel:
    k: int
    psi: sp.csr_matrix               # one-level basis, N_{k-1} x N_k
    psi_cum: sp.csr_matrix           # cumulative basis, n x N_k
    householder: HouseholderColumns
    patches: list
    a_st: SparseSymMatrix            # A^(k)
    m: SparseSymMatrix               # cumulative Gram M^(k)
    b_op: BComplementOperator        # B^(k) over the level's complement
    eps_level: float                 # measured error factor of this partition
    eps_target: float                # policy value eps_1 / eta^(k-1)
    eps_cum: float                   # sum of measured error factors up to k
    delta: float                     # measured condition factor
    n_fine: int
    n_coarse: int
    kappa_m_est: float = float("nan")
    kappa_b_est: float = float("nan")
    correlation_residual: float = 0.0

    @property
    def n_comp(self) -> int:
        return self.householder.n_comp


@dataclass
class MmdHierarchy:
    a0: SparseSymMatrix
    levels: list
    eps1: float
    eta: float
    c: float
    psi_mode: str = "localized"
    psi_radius: int | None = 3

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level(self, k: int) -> MmdLevel:
        return self.levels[k - 1]


def build_mmd(a: SparseSymMatrix, eps1: float, eta: float, c: float,
              energy: EnergyDecomposition | None = None,
              max_levels: int | None = None, min_dim: int = 500,
              psi_mode: str = "localized", psi_radius: int = 3,
              psi_tol_factor: float = 0.1, q: int = 1,
              estimate_kappas: bool = True) -> MmdHierarchy:
    """Build the K-level decomposition of ``a``.

    Recursion stops when the coarse dimension drops to ``min_dim``, when
    ``max_levels`` is reached, or when a level achieves no compression
    (already fully resolved, e.g. the identity).
    """
    if not (0 < eta < 1):
        raise ValueError("eta must lie in (0, 1)")
    lam_hint = float(np.max(a.diagonal()))
    if eps1 * lam_hint >= 1.0:
        logger.warning("eps1 * lambda_max(A) ~ %.2e >= 1; compression may be vacuous",
                       eps1 * lam_hint)
    e_cur = energy if energy is not None else laplacian_energy_decomposition(a)
    a_cur = a
    psi_cum = None
    eps_cum = 0.0
    levels: list[MmdLevel] = []
    k = 0
    cap = max_levels if max_levels is not None else 25
    while k < cap:
        k += 1
        eps_target = eps1 / eta ** (k - 1)
        t0 = time.time()
        part, ind = build_partition(a_cur, e_cur, eps_target, c, q=q)
        coarse = build_phi(part, ind)
        tol = psi_tol_factor * max(ind.eps_max, 1e-10)
        fine = build_psi(a_cur, coarse, part, mode=psi_mode, radius=psi_radius, tol=tol)
        ops = assemble_level(a_cur, coarse, fine, ind, label_suffix=str(k))
        psi_cum = fine.psi if psi_cum is None else (psi_cum @ fine.psi).tocsr()
        m_cum = ops.m if k == 1 else _symmetric_drop(
            (psi_cum.T @ psi_cum).tocsr(), 1e-14, f"M{k}")
        eps_cum += ind.eps_max
        level = MmdLevel(
            k=k, psi=fine.psi, psi_cum=psi_cum, householder=coarse.householder,
            patches=part.patches, a_st=ops.a_st, m=m_cum, b_op=ops.b_op,
            eps_level=ind.eps_max, eps_target=eps_target, eps_cum=eps_cum,
            delta=ind.delta_max, n_fine=a_cur.dim, n_coarse=coarse.n_coarse,
            correlation_residual=fine.correlation_residual)
        if level.n_coarse >= level.n_fine and levels:
            # no compression achieved; a pass-through level buys nothing
            logger.info("level %d achieved no compression (N=%d); stopping at %d "
                        "level(s)", k, level.n_coarse, len(levels))
            break
        if estimate_kappas:
            _attach_kappas(level)
        levels.append(level)
        logger.info("level %d: N=%d (from %d), eps=%.3e (target %.3e), delta=%.3e, "
                    "%.1fs", k, level.n_coarse, level.n_fine, level.eps_level,
                    eps_target, level.delta, time.time() - t0)
        if level.n_coarse >= level.n_fine:
            break
        if level.n_coarse <= min_dim or k == cap:
            break
        e_cur = inherited_energy(e_cur, fine, part)
        a_cur = ops.a_st
    return MmdHierarchy(a0=a, levels=levels, eps1=eps1, eta=eta, c=c,
                        psi_mode=psi_mode, psi_radius=psi_radius)


def _attach_kappas(level: MmdLevel, dense_limit: int = 500, steps: int = 120) -> None:
    rng = np.random.default_rng(0x5EED ^ level.k)
    if level.n_coarse <= dense_limit:
        w = np.linalg.eigvalsh(level.m.to_dense())
        level.kappa_m_est = float(w[-1] / w[0])
    else:
        lo, hi = extreme_ritz(level.m.matvec, level.n_coarse, steps=steps, rng=rng)
        level.kappa_m_est = float(hi / min(lo, 1.0)) if lo > 0 else float("inf")
    nc = level.n_comp
    if nc == 0:
        level.kappa_b_est = 1.0
    elif nc <= dense_limit:
        w = np.linalg.eigvalsh(level.b_op.to_dense())
        level.kappa_b_est = float(w[-1] / w[0])
    else:
        lo, hi = extreme_ritz(level.b_op, nc, steps=steps, rng=rng)
        level.kappa_b_est = float(hi / lo) if lo > 0 else float("inf")


def theta_apply(hier: MmdHierarchy, k: int, x: np.ndarray,
                tol: float = 1e-12) -> np.ndarray:
    """Test-path application of the level-k compressed inverse.

    k = 0 reproduces A^{-1} x to solver tolerance.
    """
    if k == 0:
        y, rep = cg(hier.a0.matvec, x, tol=tol, max_iter=50 * hier.a0.dim)
        return y
    level = hier.level(k)
    w = level.psi_cum.T @ x
    y, rep = cg(level.a_st.matvec, w, tol=tol, max_iter=50 * level.n_coarse)
    return level.psi_cum @ y


def theta_dense(hier: MmdHierarchy, k: int, tol: float = 1e-12) -> np.ndarray:
    """Dense assembly of the level-k compressed inverse (small dims only)."""
    n = hier.a0.dim
    out = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        out[:, j] = theta_apply(hier, k, e, tol=tol)
    return 0.5 * (out + out.T)


# -- serialization -----------------------------------------------------------

def save_hierarchy(hier: MmdHierarchy, outdir) -> None:
    import os

    os.makedirs(outdir, exist_ok=True)
    write_matrix_market(hier.a0, os.path.join(outdir, "a0.mtx"))
    manifest = {
        "schema": 1,
        "n": hier.a0.dim,
        "nnz_a0": hier.a0.nnz,
        "eps1": hier.eps1,
        "eta": hier.eta,
        "c": hier.c,
        "psi_mode": hier.psi_mode,
        "psi_radius": hier.psi_radius,
        "levels": [],
    }
    for lv in hier.levels:
        write_sparse_market(lv.psi, os.path.join(outdir, f"psi_{lv.k}.mtx"))
        write_matrix_market(lv.a_st, os.path.join(outdir, f"a_{lv.k}.mtx"))
        write_matrix_market(lv.m, os.path.join(outdir, f"m_{lv.k}.mtx"))
        hh = lv.householder
        with open(os.path.join(outdir, f"patches_{lv.k}.json"), "w") as fh:
            json.dump({
                "patches": [p.tolist() for p in lv.patches],
                "u": _householder_payload(hh, lv.patches),
            }, fh)
        manifest["levels"].append({
            "k": lv.k,
            "n_fine": lv.n_fine,
            "n_coarse": lv.n_coarse,
            "n_comp": lv.n_comp,
            "eps_level": lv.eps_level,
            "eps_target": lv.eps_target,
            "eps_cum": lv.eps_cum,
            "delta": lv.delta,
            "kappa_m_est": lv.kappa_m_est,
            "kappa_b_est": lv.kappa_b_est,
            "correlation_residual": lv.correlation_residual,
            "nnz_a": lv.a_st.nnz,
            "nnz_m": lv.m.nnz,
        })
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)


def _householder_payload(hh: HouseholderColumns, patches) -> list:
    out = []
    pos = 0
    for p in patches:
        if p.size < 2:
            out.append(None)
        else:
            out.append(hh._u[pos:pos + p.size].tolist())
            pos += p.size
    return out


def load_hierarchy(indir) -> MmdHierarchy:
    import os

    with open(os.path.join(indir, "manifest.json")) as fh:
        manifest = json.load(fh)
    a0 = read_matrix_market(os.path.join(indir, "a0.mtx"))
    a0.label = "A0"
    levels = []
    a_prev = a0
    psi_cum = None
    for meta in manifest["levels"]:
        k = meta["k"]
        psi = read_sparse_market(os.path.join(indir, f"psi_{k}.mtx"))
        a_st = read_matrix_market(os.path.join(indir, f"a_{k}.mtx"))
        a_st.label = f"A{k}"
        m = read_matrix_market(os.path.join(indir, f"m_{k}.mtx"))
        m.label = f"M{k}"
        with open(os.path.join(indir, f"patches_{k}.json")) as fh:
            pdata = json.load(fh)
        patches = [np.asarray(p, dtype=np.int64) for p in pdata["patches"]]
        hh = HouseholderColumns.from_patch_vectors(meta["n_fine"], patches, pdata["u"])
        psi_cum = psi if psi_cum is None else (psi_cum @ psi).tocsr()
        levels.append(MmdLevel(
            k=k, psi=psi, psi_cum=psi_cum, householder=hh, patches=patches,
            a_st=a_st, m=m, b_op=BComplementOperator(a_prev, hh, label=f"B{k}"),
            eps_level=meta["eps_level"], eps_target=meta["eps_target"],
            eps_cum=meta["eps_cum"], delta=meta["delta"],
            n_fine=meta["n_fine"], n_coarse=meta["n_coarse"],
            kappa_m_est=meta.get("kappa_m_est", float("nan")),
            kappa_b_est=meta.get("kappa_b_est", float("nan")),
            correlation_residual=meta.get("correlation_residual", 0.0)))
        a_prev = a_st
    return MmdHierarchy(a0=a0, levels=levels, eps1=manifest["eps1"],
                        eta=manifest["eta"], c=manifest["c"],
                        psi_mode=manifest.get("psi_mode", "localized"),
                        psi_radius=manifest.get("psi_radius"))
