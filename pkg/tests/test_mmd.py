import numpy as np
import pytest

from hiereig.energy import laplacian_energy_decomposition
from hiereig.mmd import build_mmd, load_hierarchy, save_hierarchy, theta_apply, theta_dense
from hiereig.sparse import SparseSymMatrix

from helpers import random_geometric_laplacian, spectral_norm


from helpers import hierarchical_cluster_laplacian


@pytest.fixture(scope="module")
def small_hier():
    a, _ = hierarchical_cluster_laplacian(21)
    return build_mmd(a, eps1=1e-4, eta=5e-3, c=60.0, max_levels=3, min_dim=2,
                     psi_mode="localized", psi_radius=2)


def test_p3_single_level(p3):
    hier = build_mmd(p3, eps1=0.5, eta=0.1, c=20.0, max_levels=1, psi_mode="exact")
    assert hier.depth == 1
    lv = hier.level(1)
    assert lv.n_coarse == 1
    assert np.allclose(lv.a_st.to_dense(), [[1.0]], atol=1e-10)
    assert np.allclose(lv.m.to_dense(), [[1.0]], atol=1e-10)


def test_identity_stops_immediately():
    a = SparseSymMatrix.identity(12)
    hier = build_mmd(a, eps1=0.5, eta=0.1, c=20.0, psi_mode="exact", min_dim=1)
    assert hier.depth == 1
    assert np.allclose(hier.level(1).psi.toarray(), np.eye(12))


def test_eps_policy_geometric(small_hier):
    for lv in small_hier.levels:
        assert np.isclose(lv.eps_target, small_hier.eps1 / small_hier.eta ** (lv.k - 1))
        assert lv.eps_level <= lv.eps_target + 1e-12


def test_dims_strictly_decrease(small_hier):
    dims = [lv.n_coarse for lv in small_hier.levels]
    assert all(b < a for a, b in zip(dims, dims[1:]))


def test_a_recursion_consistency(small_hier):
    # A^(k) = (Psi^(k))^T A^(k-1) Psi^(k), recomputed densely
    a_prev = small_hier.a0.to_dense()
    for lv in small_hier.levels:
        psi = lv.psi.toarray()
        expect = psi.T @ a_prev @ psi
        assert np.max(np.abs(expect - lv.a_st.to_dense())) <= 1e-10 * np.max(np.abs(expect))
        a_prev = lv.a_st.to_dense()


def test_cumulative_gram(small_hier):
    for lv in small_hier.levels:
        pc = lv.psi_cum.toarray()
        assert np.max(np.abs(pc.T @ pc - lv.m.to_dense())) < 1e-10


def test_theta_zero_is_inverse(small_hier):
    a = small_hier.a0
    rng = np.random.default_rng(0)
    x = rng.standard_normal(a.dim)
    y = theta_apply(small_hier, 0, x)
    assert np.linalg.norm(a.matvec(y) - x) <= 1e-9 * np.linalg.norm(x)


def test_theta_p3_rank_one(p3):
    hier = build_mmd(p3, eps1=0.5, eta=0.1, c=20.0, max_levels=1, psi_mode="exact")
    phi = np.full(3, 1.0 / np.sqrt(3.0))
    th = theta_dense(hier, 1)
    assert np.allclose(th, np.outer(phi, phi), atol=1e-9)


def test_theta_nesting_psd(small_hier):
    # A^{-1} = Theta^(0) >= Theta^(1) >= ... as quadratic forms
    mats = [theta_dense(small_hier, k) for k in range(small_hier.depth + 1)]
    for hi, lo in zip(mats, mats[1:]):
        w = np.linalg.eigvalsh(hi - lo)
        assert w[0] >= -1e-8 * max(abs(w[-1]), 1.0)


def test_theta_error_within_cumulative_eps(small_hier):
    a_inv = np.linalg.inv(small_hier.a0.to_dense())
    for lv in small_hier.levels:
        err = spectral_norm(a_inv - theta_dense(small_hier, lv.k))
        assert err <= lv.eps_cum * (1 + 1e-6)


def test_gram_kappa_within_bound(small_hier):
    # kappa(M^(k)) <= 1 + eps_k delta_k with 5% slack, cumulative eps
    for lv in small_hier.levels:
        w = np.linalg.eigvalsh(lv.m.to_dense())
        assert w[0] >= 1.0 - 1e-9
        bound = 1.0 + lv.eps_cum * lv.delta
        assert w[-1] / w[0] <= bound * 1.05


def test_complement_kappa_within_bound(small_hier):
    # kappa(B^(k)) <= eps_k delta_{k-1} with 5% slack; delta_0 = lambda_max(A)
    delta_prev = float(np.linalg.eigvalsh(small_hier.a0.to_dense())[-1])
    for lv in small_hier.levels:
        if lv.n_comp:
            w = np.linalg.eigvalsh(lv.b_op.to_dense())
            assert w[-1] / w[0] <= lv.eps_cum * delta_prev * 1.05
        delta_prev = lv.delta


def test_essential_eigenvalue_drift(small_hier):
    # |mu_i^(k') - mu_i^(k)| <= eps_k for essential pairs across levels
    mats = [theta_dense(small_hier, k) for k in range(small_hier.depth + 1)]
    spectra = [np.sort(np.linalg.eigvalsh(m))[::-1] for m in mats]
    for k in range(1, small_hier.depth + 1):
        nk = small_hier.level(k).n_coarse
        eps_k = small_hier.level(k).eps_cum
        for kp in range(k):
            drift = np.max(np.abs(spectra[kp][:nk] - spectra[k][:nk]))
            assert drift <= eps_k * (1 + 1e-6)
            tail = spectra[kp][nk:spectra[k].size]
            if tail.size:
                assert np.max(tail) <= eps_k * (1 + 1e-6)


def test_save_load_roundtrip(tmp_path, small_hier):
    outdir = tmp_path / "hier"
    save_hierarchy(small_hier, outdir)
    back = load_hierarchy(outdir)
    assert back.depth == small_hier.depth
    for lv_a, lv_b in zip(small_hier.levels, back.levels):
        assert np.array_equal(lv_a.a_st.values, lv_b.a_st.values)
        assert np.array_equal(lv_a.m.values, lv_b.m.values)
        assert lv_a.n_comp == lv_b.n_comp
        x = np.random.default_rng(1).standard_normal(lv_a.n_comp)
        if lv_a.n_comp:
            assert np.allclose(lv_a.householder.apply(x), lv_b.householder.apply(x))
        assert np.isclose(lv_a.eps_level, lv_b.eps_level)


def test_eta_validation(p3):
    with pytest.raises(ValueError):
        build_mmd(p3, eps1=0.5, eta=1.5, c=20.0)
