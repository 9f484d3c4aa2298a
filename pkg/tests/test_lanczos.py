import numpy as np
import pytest

from hiereig.lanczos import LanczosState, eigen_extend, implicit_restart, lanczos_extend
from hiereig.smalldense import dense_gen_eig

from helpers import random_spd, random_spd_pair


def _exact_theta_op(a, m):
    """Tightly applied x -> A^{-1} M x for invariant checks."""
    return lambda x: np.linalg.solve(a, m @ x)


def _state(a, m, rng, lock=None):
    n = a.shape[0]
    st = LanczosState(n, m_apply=(lambda x: m @ x), lock=lock, rng=rng)
    st.set_start(rng.standard_normal(n))
    return st


def _check_invariants(st, a, m, tol_orth=1e-9, tol_tri=1e-10, tol_rel=1e-8):
    j = st.j
    if j == 0:
        return
    v = st.basis()
    gram = v.T @ m @ v
    assert np.max(np.abs(gram - np.eye(j))) <= tol_orth
    assert abs(st.f @ m @ v).max() <= tol_orth if j else True
    t = st.tridiag()
    off = t.copy()
    for d in (-1, 0, 1):
        off -= np.diag(np.diag(t, d), d)
    assert np.linalg.norm(off, "fro") <= tol_tri * max(np.linalg.norm(t, "fro"), 1e-30)
    op_v = np.column_stack([np.linalg.solve(a, m @ v[:, i]) for i in range(j)])
    resid = op_v - v @ t
    resid[:, -1] -= st.f
    assert np.linalg.norm(resid, "fro") <= tol_rel * max(np.linalg.norm(op_v, "fro"), 1.0)


def test_extend_captures_diagonal_spectrum_with_breakdown():
    # seeding with e1 on a diagonal operator collapses the Krylov space at
    # once; random reinjection must still capture the full spectrum
    d = np.diag([4.0, 2.0, 1.0])
    st = LanczosState(3, rng=np.random.default_rng(0))
    st.set_start(np.array([1.0, 0.0, 0.0]))
    lanczos_extend(st, lambda x: d @ x, 3)
    assert st.j == 3
    w = np.sort(np.linalg.eigvalsh(st.tridiag()))
    assert np.allclose(w, [1.0, 2.0, 4.0], atol=1e-12)


def test_extend_scalar_space_breakdown_path():
    st = LanczosState(1, rng=np.random.default_rng(1))
    st.set_start(np.array([2.0]))
    done = st.extend(lambda x: x.copy(), 3)
    assert done == 1  # space exhausted after one step
    assert np.allclose(st.tridiag(), [[1.0]])
    assert st.beta() < 1e-12


def test_extend_invariants_random_pair():
    rng = np.random.default_rng(2)
    a, m = random_spd_pair(rng, 30)
    st = _state(a, m, rng)
    lanczos_extend(st, _exact_theta_op(a, m), 30)
    _check_invariants(st, a, m)
    w = np.sort(np.linalg.eigvalsh(st.tridiag()))[::-1]
    oracle = dense_gen_eig(a, m).values
    assert np.allclose(w, oracle, atol=1e-9)


def test_restart_zero_shifts_noop():
    rng = np.random.default_rng(3)
    a, m = random_spd_pair(rng, 12)
    st = _state(a, m, rng)
    st.extend(_exact_theta_op(a, m), 6)
    t_before = st.tridiag().copy()
    implicit_restart(st, [])
    assert np.array_equal(st.tridiag(), t_before)


def test_restart_discards_smallest_ritz_values():
    rng = np.random.default_rng(4)
    a, m = random_spd_pair(rng, 20)
    st = _state(a, m, rng)
    st.extend(_exact_theta_op(a, m), 6)
    before = np.sort(np.linalg.eigvalsh(st.tridiag()))
    implicit_restart(st, before[:2])
    after = np.sort(np.linalg.eigvalsh(st.tridiag()))
    assert after.size == 4
    assert np.allclose(after, before[2:], atol=1e-8)
    _check_invariants(st, a, m)


def test_restart_interleaving_invariants():
    rng = np.random.default_rng(5)
    for trial in range(10):
        n = int(rng.integers(8, 40))
        a, m = random_spd_pair(rng, n)
        op = _exact_theta_op(a, m)
        st = _state(a, m, rng)
        st.extend(op, int(rng.integers(2, 6)))
        for _ in range(int(rng.integers(1, 4))):
            if rng.random() < 0.6 or st.j < 3:
                st.extend(op, int(rng.integers(1, 5)))
            else:
                w = np.sort(np.linalg.eigvalsh(st.tridiag()))
                p = int(rng.integers(1, st.j))
                st.restart(w[:p])
        _check_invariants(st, a, m)


def test_ritz_residual_identity():
    rng = np.random.default_rng(6)
    a, m = random_spd_pair(rng, 25)
    op = _exact_theta_op(a, m)
    st = _state(a, m, rng)
    st.extend(op, 10)
    w, p, resid = st.ritz()
    v = st.basis()
    for i in (0, 4, 9):
        y = v @ p[:, i]
        r = op(y) - w[i] * y
        m_norm = float(np.sqrt(r @ m @ r))
        assert abs(m_norm - resid[i]) <= 1e-8 * max(m_norm, 1.0)


def test_eigen_extend_nothing_to_do():
    rng = np.random.default_rng(7)
    a, m = random_spd_pair(rng, 10)
    pairs = dense_gen_eig(a, m)
    out = eigen_extend(pairs.vectors, pairs.values, _exact_theta_op(a, m),
                       lambda x: m @ x, m_tar=10, eps=1e-10, mu_ex=0.0,
                       d_step=2, rng=rng)
    assert out.count == 10
    assert np.array_equal(out.v_hat, pairs.vectors)


def test_eigen_extend_matches_oracle_segment():
    rng = np.random.default_rng(8)
    a, m = random_spd_pair(rng, 40, cond_a=200.0)
    oracle = dense_gen_eig(a, m)
    v_ini = oracle.vectors[:, :5]
    d_ini = oracle.values[:5]
    mu_ex = 0.5 * (oracle.values[19] + oracle.values[20])
    eps = 1e-9
    out = eigen_extend(v_ini, d_ini, _exact_theta_op(a, m), lambda x: m @ x,
                       m_tar=40, eps=eps, mu_ex=mu_ex, d_step=4, rng=rng)
    assert out.count >= 20
    assert np.allclose(out.d[:20], oracle.values[:20], atol=100 * eps)
    gram = out.v_hat.T @ m @ out.v_hat
    assert np.max(np.abs(gram - np.eye(out.count))) < 1e-8
    # extension never rises above the locked minimum
    assert out.d[5] <= d_ini.min() + 100 * eps


def test_eigen_extend_full_space():
    rng = np.random.default_rng(9)
    a, m = random_spd_pair(rng, 15)
    oracle = dense_gen_eig(a, m)
    out = eigen_extend(np.zeros((15, 0)), np.zeros(0), _exact_theta_op(a, m),
                       lambda x: m @ x, m_tar=15, eps=1e-10, mu_ex=0.0,
                       d_step=3, rng=rng)
    assert out.count == 15
    assert np.allclose(out.d, oracle.values, atol=1e-8)
