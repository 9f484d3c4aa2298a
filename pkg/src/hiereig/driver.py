"""Top-level hierarchical eigensolver.

Solves the coarsest level densely, then sweeps finer level by level: reform
coefficients through the level's basis, refine the carried pairs, extend
the spectrum by restarted Lanczos down to the level's extension threshold,
and finally expand to fine-grid eigenvectors. Thresholds follow the
two-parameter policy mu_re = alpha * eps_{k+1}, mu_ex = beta * eps_k, which
keeps the restricted condition number of every inner PCG solve and the
refinement contraction rate uniformly bounded across levels.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from hiereig.errors import CertificateError, HiereigError
from hiereig.krylov import ThetaCoeffOperator, cg
from hiereig.lanczos import EigenPairsCoeff, eigen_extend
from hiereig.metrics import RunMetrics, phase_from_lists
from hiereig.mmd import MmdHierarchy
from hiereig.refinement import RefineInput, RefineStats, refine
from hiereig.smalldense import dense_gen_eig

logger = logging.getLogger(__name__)

DENSE_COARSE_LIMIT = 3000


@dataclass
class SolverParams:
    m_tar: int
    alpha: float = 3.0
    beta: float = 1.0
    eps_overrides: dict | None = None      # level -> per-level accuracy
    seed: int = 0x5EED
    restart_budget: int = 30
    d_override: int | None = None
    certificate_samples: int = 20
    certificate_tol_factor: float = 0.01
    measure_cold_start: bool = False


@dataclass
class LevelPolicy:
    k: int
    eps_k: float       # policy compression error at this level
    eps_acc: float     # solver accuracy (0.1 eps_k unless overridden)
    mu_re: float
    mu_ex: float
    d: int


@dataclass
class PolicyReport:
    levels: list
    kappa: float       # alpha c / eta
    gamma: float       # (1 + beta) / alpha


@dataclass
class EigenResult:
    vectors: np.ndarray        # fine-grid eigenvectors, orthonormal columns
    mu: np.ndarray             # eigenvalues of A^{-1}, descending
    lam: np.ndarray            # eigenvalues of A, ascending (leftmost first)
    metrics: RunMetrics
    certificate_indices: np.ndarray
    certificate_residuals: np.ndarray
    coefficients: EigenPairsCoeff | None = None


def parameter_policy(hier: MmdHierarchy, alpha: float, beta: float,
                     m_tar: int, eps_overrides: dict | None = None) -> PolicyReport:
    """Derive per-level thresholds and the uniform constants kappa, gamma."""
    if alpha <= 1.0 + beta:
        raise ValueError(f"alpha must exceed 1 + beta (got alpha={alpha}, beta={beta})")
    gamma = (1.0 + beta) / alpha
    if gamma >= 1.0:
        raise ValueError(f"gamma = (1 + beta)/alpha = {gamma} must be below 1")
    if beta <= alpha * hier.eta:
        logger.warning("beta = %.3g <= alpha * eta = %.3g: spectrum segments may "
                       "overlap across more than two levels", beta, alpha * hier.eta)
    kappa = alpha * hier.c / hier.eta
    overrides = eps_overrides or {}
    levels = []
    for lv in hier.levels:
        eps_k = hier.eps1 / hier.eta ** (lv.k - 1)
        eps_acc = float(overrides.get(lv.k, 0.1 * eps_k))
        # floor of 10 keeps the restart buffer useful when m_tar is small
        d = min(max(10, min(lv.n_coarse // 10, m_tar // 10)), max(1, lv.n_coarse - 1))
        levels.append(LevelPolicy(
            k=lv.k, eps_k=eps_k, eps_acc=eps_acc,
            mu_re=alpha * eps_k / hier.eta,   # alpha * eps_{k+1}
            mu_ex=beta * eps_k, d=d))
    return PolicyReport(levels=levels, kappa=kappa, gamma=gamma)


def hierarchical_eigensolve(hier: MmdHierarchy, params: SolverParams) -> EigenResult:
    """Run the full coarse-to-fine eigenpair computation."""
    pol = parameter_policy(hier, params.alpha, params.beta, params.m_tar,
                           params.eps_overrides)
    rng = np.random.default_rng(params.seed)
    metrics = RunMetrics(header={
        "solver": "hierarchical", "m_tar": params.m_tar, "alpha": params.alpha,
        "beta": params.beta, "seed": params.seed, "eps1": hier.eps1,
        "eta": hier.eta, "c": hier.c, "kappa": pol.kappa, "gamma": pol.gamma,
        "levels": hier.depth, "n": hier.a0.dim, "nnz_a0": hier.a0.nnz})
    nnz_a0 = hier.a0.nnz
    kk = hier.depth
    top = hier.level(kk)
    if top.n_coarse > DENSE_COARSE_LIMIT:
        raise HiereigError(
            f"coarsest level has dimension {top.n_coarse} > {DENSE_COARSE_LIMIT}; "
            "add levels or raise min_dim")
    t0 = time.time()
    dense_pairs = dense_gen_eig(top.a_st.to_dense(), top.m.to_dense())
    mu = dense_pairs.values
    vhat = dense_pairs.vectors
    if kk > 1:
        keep = max(1, int(np.sum(mu >= pol.levels[kk - 1].mu_ex)))
        mu, vhat = mu[:keep], vhat[:, :keep]
    state = EigenPairsCoeff(v_hat=vhat, d=mu)
    metrics.add(phase_from_lists(
        kk, "coarse_solve", pairs_in=0, pairs_out=state.count, iterations=0,
        a_matvecs=[], m_iters=[], m_calls=[], b_matvecs=[],
        nnz_a=top.a_st.nnz, nnz_m=top.m.nnz, nnz_a0=nnz_a0,
        wall_s=time.time() - t0))
    logger.info("coarsest level %d: kept %d of %d dense pairs", kk, state.count,
                dense_pairs.values.size)

    for k in range(kk - 1, 0, -1):
        lv = hier.level(k)
        coarser = hier.level(k + 1)
        lp = pol.levels[k - 1]
        state = EigenPairsCoeff(v_hat=coarser.psi @ state.v_hat, d=state.d)

        t0 = time.time()
        refined, rstats = refine(RefineInput(
            v0=state.v_hat, d0=state.d, a_st=lv.a_st, m=lv.m,
            householder=coarser.householder, b_op=coarser.b_op,
            eps=lp.eps_acc, mu_re=lp.mu_re,
            eps_delta=lv.eps_level * lv.delta,
            measure_cold=params.measure_cold_start))
        metrics.add(phase_from_lists(
            k, "refine", pairs_in=rstats.pairs_in, pairs_out=rstats.pairs_out,
            iterations=rstats.iterations, a_matvecs=rstats.pcg_a_matvecs,
            m_iters=rstats.pcg_m_iters, m_calls=rstats.pcg_m_calls,
            b_matvecs=rstats.cg_b_matvecs, nnz_a=lv.a_st.nnz, nnz_m=lv.m.nnz,
            nnz_a0=nnz_a0, wall_s=time.time() - t0))
        if params.measure_cold_start and rstats.cold_iters:
            worse = sum(w > c for w, c in zip(rstats.warm_iters, rstats.cold_iters))
            if worse:
                logger.warning("level %d: %d refinement columns took more warm than "
                               "cold iterations", k, worse)

        t0 = time.time()
        # the operator must be applied one decade tighter than the Ritz
        # residual target, otherwise the polish target sits exactly at the
        # inexact-solve noise floor and restarts stall
        op = ThetaCoeffOperator(lv.a_st, lv.m, 0.1 * lp.eps_acc)
        state = eigen_extend(refined.v_hat, refined.d, op, lv.m.matvec,
                             params.m_tar, lp.eps_acc, lp.mu_ex,
                             params.d_override or lp.d, rng=rng,
                             restart_budget=params.restart_budget)
        metrics.add(phase_from_lists(
            k, "extend", pairs_in=refined.count, pairs_out=state.count,
            iterations=0, a_matvecs=op.a_matvecs, m_iters=op.m_iters,
            m_calls=op.m_calls, b_matvecs=[], nnz_a=lv.a_st.nnz, nnz_m=lv.m.nnz,
            nnz_a0=nnz_a0, wall_s=time.time() - t0))
        logger.info("level %d: refined to %d pairs, extended to %d", k,
                    refined.count, state.count)

    vectors = hier.level(1).psi_cum @ state.v_hat
    mu = state.d
    lam = 1.0 / mu  # mu descending in A^{-1} means lam ascending in A, leftmost first
    idx, resid = run_certificates(hier, vectors, mu, params, rng)
    cert_bound = 3.0 * hier.eps1
    metrics.header["certificate_bound"] = cert_bound
    metrics.header["certificate_max"] = float(np.max(resid)) if resid.size else 0.0
    result = EigenResult(vectors=vectors, mu=mu, lam=lam, metrics=metrics,
                         certificate_indices=idx, certificate_residuals=resid,
                         coefficients=state)
    if resid.size and np.max(resid) > cert_bound:
        bad = idx[resid > cert_bound].tolist()
        raise CertificateError(
            f"residual certificate failed at indices {bad}: max "
            f"{np.max(resid):.3e} > {cert_bound:.3e}")
    return result


def run_certificates(hier: MmdHierarchy, vectors: np.ndarray, mu: np.ndarray,
                     params: SolverParams, rng) -> tuple[np.ndarray, np.ndarray]:
    """Tight-solve residual check ||A^{-1} v_i - mu_i v_i|| on sampled pairs."""
    count = vectors.shape[1]
    nsamp = min(params.certificate_samples, count)
    if nsamp == count:
        idx = np.arange(count)
    else:
        idx = np.sort(rng.choice(count, size=nsamp, replace=False))
    resid = np.empty(nsamp)
    atol = params.certificate_tol_factor * hier.eps1
    for out, i in enumerate(idx):
        v = vectors[:, i]
        x, rep = cg(hier.a0.matvec, v, x0=mu[i] * v, tol=1e-16, atol=atol,
                    max_iter=50 * hier.a0.dim)
        if not rep.converged:
            raise CertificateError(f"certificate solve {i} did not converge")
        resid[out] = float(np.linalg.norm(x - mu[i] * v))
    return idx, resid
