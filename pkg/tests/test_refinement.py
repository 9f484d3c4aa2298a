import numpy as np
import pytest

from hiereig.compression import HouseholderColumns
from hiereig.errors import ConvergenceError
from hiereig.lanczos import EigenPairsCoeff
from hiereig.mmd import build_mmd
from hiereig.refinement import RefineInput, refine
from hiereig.smalldense import dense_gen_eig
from hiereig.sparse import SparseSymMatrix

from helpers import hierarchical_cluster_laplacian, random_spd_pair


def _empty_householder(n):
    return HouseholderColumns(n, [np.array([i]) for i in range(n)], [None] * n)


def _no_b(x):
    raise AssertionError("B solve must not run when the complement is empty")


def test_same_level_fixed_point():
    # Psi^l = identity means Theta^h = Theta^l: exact input pairs reproduce
    # themselves and the stop fires at the first check
    rng = np.random.default_rng(0)
    a, m = random_spd_pair(rng, 18)
    pairs = dense_gen_eig(a, m)
    a_sp = SparseSymMatrix.from_dense(a, label="Ah")
    m_sp = SparseSymMatrix.from_dense(m, label="Mh")
    out, stats = refine(RefineInput(
        v0=pairs.vectors, d0=pairs.values, a_st=a_sp, m=m_sp,
        householder=_empty_householder(18), b_op=_no_b,
        eps=1e-8, mu_re=float(pairs.values[-1]) * 0.5, eps_delta=1.0))
    assert stats.iterations == 1
    assert out.count == 18
    assert np.allclose(out.d, pairs.values, atol=1e-7)
    overlap = np.abs(out.v_hat.T @ m @ pairs.vectors)
    assert np.allclose(np.diag(overlap), 1.0, atol=1e-6)


@pytest.fixture(scope="module")
def two_level():
    # coefficient dims 60 / 12
    a, _ = hierarchical_cluster_laplacian(33, groups=(4, 5, 12),
                                          weights=(4e4, 150.0, 1.0))
    hier = build_mmd(a, eps1=1e-4, eta=3e-3, c=60.0, max_levels=2, min_dim=2,
                     psi_mode="localized", psi_radius=1)
    assert hier.depth == 2
    assert hier.level(1).n_coarse == 60 and hier.level(2).n_coarse == 12
    return hier


def _refine_input(hier, eps, mu_re, measure_cold=False):
    lv1, lv2 = hier.level(1), hier.level(2)
    coarse_pairs = dense_gen_eig(lv2.a_st.to_dense(), lv2.m.to_dense())
    q0 = lv2.psi @ coarse_pairs.vectors
    return RefineInput(
        v0=np.asarray(q0), d0=coarse_pairs.values, a_st=lv1.a_st, m=lv1.m,
        householder=lv2.householder, b_op=lv2.b_op, eps=eps, mu_re=mu_re,
        eps_delta=lv1.eps_level * lv1.delta, measure_cold=measure_cold)


def test_refine_reaches_fine_level_oracle(two_level):
    lv1 = two_level.level(1)
    oracle = dense_gen_eig(lv1.a_st.to_dense(), lv1.m.to_dense())
    eps = 1e-8
    mu_re = 0.5 * (oracle.values[7] + oracle.values[8])
    out, stats = refine(_refine_input(two_level, eps, mu_re))
    assert out.count == 8
    assert np.allclose(out.d, oracle.values[:8], atol=50 * eps)
    gram = out.v_hat.T @ lv1.m.to_dense() @ out.v_hat
    assert np.max(np.abs(gram - np.eye(out.count))) < 1e-8
    assert np.all(np.diff(out.d) <= 1e-12)


def test_refine_contraction_rate(two_level):
    # per-sweep eigenvalue error shrinks at least as fast as
    # (mu_{m_l+1} / mu_i)^2, with 2x slack
    lv1 = two_level.level(1)
    oracle = dense_gen_eig(lv1.a_st.to_dense(), lv1.m.to_dense())
    inp = _refine_input(two_level, 1e-10, 0.0)
    m_l = inp.v0.shape[1]
    out, stats = refine(inp)
    rate = (oracle.values[m_l] / oracle.values[:4]) ** 2
    hist = [np.asarray(inp.d0)] + stats.d_history
    checked = 0
    for it in range(1, len(hist)):
        for i in range(4):
            prev = abs(hist[it - 1][i] - oracle.values[i])
            cur = abs(hist[it][i] - oracle.values[i])
            if prev > 1e-8 * oracle.values[i]:  # above the fp/solver floor
                assert cur <= 2.0 * rate[i] * prev + 1e-11 * oracle.values[i]
                checked += 1
    assert checked > 0


def test_refine_warm_start_beats_cold(two_level):
    out, stats = refine(_refine_input(two_level, 1e-8, 0.0, measure_cold=True))
    assert stats.cold_iters, "cold-start instrumentation missing"
    assert all(w <= c for w, c in zip(stats.warm_iters, stats.cold_iters))
    assert sum(stats.warm_iters) < sum(stats.cold_iters)


def test_refine_budget_exhaustion_raises(two_level):
    inp = _refine_input(two_level, 1e-13, 0.0)
    inp.max_iters = 1
    inp.eps_delta = 1e12  # drive the stop threshold unreachably low
    with pytest.raises(ConvergenceError):
        refine(inp)


def test_refine_retention_threshold(two_level):
    lv1 = two_level.level(1)
    oracle = dense_gen_eig(lv1.a_st.to_dense(), lv1.m.to_dense())
    mu_re = 0.5 * (oracle.values[2] + oracle.values[3])
    out, _ = refine(_refine_input(two_level, 1e-8, mu_re))
    assert out.count == 3
    assert out.d.min() >= mu_re
