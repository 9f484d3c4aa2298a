import numpy as np

from hiereig.baseline import baseline_lanczos
from hiereig.driver import SolverParams, hierarchical_eigensolve
from hiereig.mmd import build_mmd
from hiereig.sparse import SparseSymMatrix

from helpers import hierarchical_cluster_laplacian, random_geometric_laplacian


def test_baseline_diagonal_matches_oracle():
    a = SparseSymMatrix.from_dense(np.diag(np.arange(1.0, 11.0)))
    res = baseline_lanczos(a, m_tar=3, eps_ritz=1e-9, cg_tol=1e-11, seed=4)
    assert np.allclose(res.lam[:3], [1.0, 2.0, 3.0], atol=1e-8)
    assert np.allclose(res.mu[:3], [1.0, 0.5, 1.0 / 3.0], atol=1e-8)


def test_baseline_geometric_instance_certificates():
    a, _ = random_geometric_laplacian(17, n=120, k=5)
    res = baseline_lanczos(a, m_tar=15, eps_ritz=1e-7, cg_tol=1e-9, seed=1,
                           certificate_bound=3e-7)
    w = np.linalg.eigvalsh(a.to_dense())
    assert np.allclose(res.lam[:15], w[:15], atol=1e-6)
    assert np.max(res.certificate_residuals) <= 3e-7
    rec = res.metrics.records[0]
    assert rec.phase == "baseline"
    assert rec.a_matvecs_total == sum(rec.per_call_a_matvecs)
    assert rec.main_cost_flops == rec.a_matvecs_total * a.nnz


def test_baseline_agrees_with_hierarchical_solver():
    a, _ = hierarchical_cluster_laplacian(21, weights=(4e4, 150.0, 1.0))
    hier = build_mmd(a, eps1=1e-4, eta=3e-3, c=60.0, max_levels=3, min_dim=2,
                     psi_mode="localized", psi_radius=1)
    res_h = hierarchical_eigensolve(hier, SolverParams(m_tar=12, alpha=5.0,
                                                       beta=2.0, seed=2))
    res_b = baseline_lanczos(a, m_tar=12, eps_ritz=1e-5, cg_tol=1e-7, seed=2)
    m = min(res_h.mu.size, res_b.mu.size, 12)
    assert np.max(np.abs(res_h.mu[:m] - res_b.mu[:m])) <= 2.0 * hier.eps1


def test_baseline_iteration_counts_decay():
    # CG on the shrinking residual spectrum: late operator calls are cheaper
    a, _ = random_geometric_laplacian(23, n=250, k=5, scale=2e-3)
    res = baseline_lanczos(a, m_tar=40, eps_ritz=1e-6, cg_tol=1e-8, seed=3)
    prof = res.metrics.records[0].per_call_a_matvecs
    decile = max(len(prof) // 10, 1)
    first = np.mean(prof[:decile])
    last = np.mean(prof[-decile:])
    assert last < first
