"""One-level operator compression.

Builds the block-sparse coarse basis Phi from patch bases, its orthonormal
complement U realized implicitly by one Householder reflector per patch,
the energy-minimizing fine basis Psi subject to the correlation condition
Phi^T Psi = I, and the level operators: stiffness A_st = Psi^T A Psi, Gram
matrix M = Psi^T Psi, and the complement stiffness B_st = U^T A U exposed
as an implicit operator.

Psi comes in two modes. Exact mode solves the n global systems by CG and is
the correctness object at desk scale. Localized mode solves each column on
the ball of patches within a given graph radius of its home patch with zero
boundary, which preserves sparsity through the hierarchy; the correlation
condition still holds to machine precision because it is enforced as a
constraint of each local solve.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from hiereig.energy import EnergyDecomposition, Partition, PatchIndicators
from hiereig.errors import ConvergenceError
from hiereig.krylov import cg
from hiereig.sparse import SparseSymMatrix


class HouseholderColumns:
    """Per-patch orthonormal complement of Phi, applied via one reflector per patch.

    For a patch with local basis vector phi the reflector H = I - 2 u u^T
    maps phi to the first canonical direction, so the complement columns are
    H[:, 1:]. Patches of size one contribute no columns. Application cost is
    linear in the fine dimension and fully vectorized across patches.
    """

    def __init__(self, n_fine: int, patches, u_list):
        rows, uvals, seg_sizes, slots = [], [], [], []
        comp = 0
        for patch, u in zip(patches, u_list):
            s = patch.size
            if s < 2:
                continue
            u = np.asarray(u, dtype=np.float64)
            rows.append(patch)
            uvals.append(u)
            seg_sizes.append(s)
            slots.append(np.concatenate([[-1], comp + np.arange(s - 1)]))
            comp += s - 1
        self.n_fine = int(n_fine)
        self.n_comp = comp
        if rows:
            self._rows = np.concatenate(rows)
            self._u = np.concatenate(uvals)
            self._slots = np.concatenate(slots)
            sizes = np.array(seg_sizes)
            self._seg_starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
            self._seg_rep = np.repeat(np.arange(len(sizes)), sizes)
        else:
            self._rows = np.zeros(0, dtype=np.int64)
            self._u = np.zeros(0)
            self._slots = np.zeros(0, dtype=np.int64)
            self._seg_starts = np.zeros(0, dtype=np.int64)
            self._seg_rep = np.zeros(0, dtype=np.int64)

    @classmethod
    def from_indicators(cls, partition: Partition,
                        indicators: PatchIndicators) -> "HouseholderColumns":
        u_list = []
        for patch, phi in zip(partition.patches, indicators.phi):
            if patch.size < 2:
                u_list.append(None)
                continue
            if phi.shape[1] != 1:
                raise NotImplementedError("Householder complement requires q = 1")
            v = phi[:, 0].copy()
            v[0] -= 1.0
            nv = float(np.linalg.norm(v))
            u_list.append(v / nv if nv > 1e-13 else np.zeros(patch.size))
        return cls(int(partition.patch_of.shape[0]), partition.patches, u_list)

    @classmethod
    def from_patch_vectors(cls, n_fine: int, patches, u_list) -> "HouseholderColumns":
        return cls(n_fine, patches,
                   [None if u is None else np.asarray(u) for u in u_list])

    def apply(self, c: np.ndarray) -> np.ndarray:
        """U @ c, mapping complement coefficients to the fine space."""
        y = np.zeros(self.n_fine)
        if self.n_comp == 0:
            return y
        z = np.where(self._slots >= 0, c[np.maximum(self._slots, 0)], 0.0)
        d = np.add.reduceat(self._u * z, self._seg_starts)
        z -= 2.0 * self._u * d[self._seg_rep]
        y[self._rows] = z
        return y

    def apply_t(self, y: np.ndarray) -> np.ndarray:
        """U^T @ y."""
        c = np.zeros(self.n_comp)
        if self.n_comp == 0:
            return c
        z = y[self._rows]
        d = np.add.reduceat(self._u * z, self._seg_starts)
        z = z - 2.0 * self._u * d[self._seg_rep]
        keep = self._slots >= 0
        c[self._slots[keep]] = z[keep]
        return c

    def to_sparse(self) -> sp.csr_matrix:
        """Assemble U densely per patch (tests and small instances only)."""
        cols = []
        for c in range(self.n_comp):
            e = np.zeros(self.n_comp)
            e[c] = 1.0
            cols.append(self.apply(e))
        if not cols:
            return sp.csr_matrix((self.n_fine, 0))
        return sp.csr_matrix(np.column_stack(cols))


@dataclass
class CoarseBasis:
    phi: sp.csr_matrix
    householder: HouseholderColumns
    n_fine: int
    n_coarse: int


@dataclass
class FineBasis:
    psi: sp.csr_matrix
    radius: int | None            # None marks exact mode
    correlation_residual: float   # max |Phi^T Psi - I|


class BComplementOperator:
    """Implicit complement stiffness x -> U^T (A (U x))."""

    def __init__(self, a_prev: SparseSymMatrix, householder: HouseholderColumns,
                 label: str = "B"):
        self.a_prev = a_prev
        self.householder = householder
        self.label = label
        self.dim = householder.n_comp
        self.applies = 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        self.applies += 1
        return self.householder.apply_t(self.a_prev.matvec(self.householder.apply(x)))

    def to_dense(self) -> np.ndarray:
        b = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            b[:, j] = self(e)
        return 0.5 * (b + b.T)


@dataclass
class LevelOperators:
    a_st: SparseSymMatrix
    m: SparseSymMatrix
    b_op: BComplementOperator
    eps: float
    delta: float


def build_phi(partition: Partition, indicators: PatchIndicators) -> CoarseBasis:
    """Collect per-patch bases into the block-sparse coarse basis."""
    n = int(partition.patch_of.shape[0])
    rows = np.concatenate(partition.patches)
    cols = np.concatenate([np.full(p.size, j) for j, p in enumerate(partition.patches)])
    vals = np.concatenate([phi[:, 0] for phi in indicators.phi])
    phi = sp.coo_matrix((vals, (rows, cols)), shape=(n, partition.n_patches)).tocsr()
    return CoarseBasis(phi=phi,
                       householder=HouseholderColumns.from_indicators(partition, indicators),
                       n_fine=n, n_coarse=partition.n_patches)


def apply_u(coarse: CoarseBasis, x: np.ndarray) -> np.ndarray:
    return coarse.householder.apply(x)


def apply_ut(coarse: CoarseBasis, y: np.ndarray) -> np.ndarray:
    return coarse.householder.apply_t(y)


def _patch_graph(a: SparseSymMatrix, partition: Partition):
    coo = a.to_scipy().tocoo()
    pi = partition.patch_of[coo.row]
    pj = partition.patch_of[coo.col]
    mask = pi != pj
    npatch = partition.n_patches
    adj = sp.coo_matrix((np.ones(mask.sum()), (pi[mask], pj[mask])),
                        shape=(npatch, npatch)).tocsr()
    adj.data[:] = 1.0
    return adj


def build_psi(a: SparseSymMatrix, coarse: CoarseBasis, partition: Partition | None = None,
              mode: str = "exact", radius: int = 2, tol: float = 1e-8) -> FineBasis:
    """Energy-minimizing fine basis with Phi^T Psi = I.

    Exact mode: CG-solve A y_i = phi_i per coarse column, then apply the
    small dense correlation correction (Phi^T Y)^{-1}. Localized mode: each
    column is solved on the union of patches within ``radius`` hops of its
    home patch in the patch adjacency graph, with zero boundary, and the
    correlation correction applied on the subdomain.
    """
    n, ncoarse = coarse.n_fine, coarse.n_coarse
    if mode == "exact":
        phi_d = coarse.phi.toarray()
        y = np.empty((n, ncoarse), order="F")
        for j in range(ncoarse):
            sol, rep = cg(a.matvec, phi_d[:, j], tol=tol, max_iter=10 * n)
            if not rep.converged:
                raise ConvergenceError(
                    f"psi column {j}: CG stalled at rel residual "
                    f"{rep.final_relative_residual:.3e}")
            y[:, j] = sol
        corr = phi_d.T @ y
        psi = np.linalg.solve(corr.T, y.T).T
        resid = float(np.max(np.abs(phi_d.T @ psi - np.eye(ncoarse))))
        if resid > 1e-10:
            psi = np.linalg.solve((phi_d.T @ psi).T, psi.T).T
            resid = float(np.max(np.abs(phi_d.T @ psi - np.eye(ncoarse))))
        psi_sp = sp.csr_matrix(psi)
        psi_sp.eliminate_zeros()
        return FineBasis(psi=psi_sp, radius=None, correlation_residual=resid)

    if mode != "localized":
        raise ValueError(f"unknown psi mode {mode!r}")
    if partition is None:
        raise ValueError("localized mode needs the partition")
    adj = _patch_graph(a, partition)
    a_csr = a.to_scipy()
    phi_csr = coarse.phi.tocsc()
    patch_sizes = np.array([p.size for p in partition.patches])

    cols_idx, cols_val = [], []
    max_resid = 0.0
    for home in range(ncoarse):
        ball = _bfs_ball(adj, home, radius)
        nodes = np.sort(np.concatenate([partition.patches[p] for p in ball]))
        local_a = a_csr[nodes][:, nodes].toarray()
        phi_loc = phi_csr[nodes][:, ball].toarray()
        cho = sla.cho_factor(local_a, lower=True)
        z = sla.cho_solve(cho, phi_loc)
        corr = phi_loc.T @ z
        rhs = np.zeros(ball.size)
        rhs[np.searchsorted(ball, home)] = 1.0
        yloc = np.linalg.solve(corr, rhs)
        col = z @ yloc
        keep = col != 0.0
        cols_idx.append(nodes[keep])
        cols_val.append(col[keep])
        max_resid = max(max_resid, float(np.max(np.abs(corr @ yloc - rhs))))
    indptr = np.concatenate([[0], np.cumsum([v.size for v in cols_val])])
    psi_sp = sp.csc_matrix(
        (np.concatenate(cols_val), np.concatenate(cols_idx), indptr),
        shape=(n, ncoarse)).tocsr()
    return FineBasis(psi=psi_sp, radius=radius, correlation_residual=max_resid)


def _bfs_ball(adj: sp.csr_matrix, home: int, radius: int) -> np.ndarray:
    seen = {home}
    frontier = [home]
    for _ in range(radius):
        nxt = []
        for p in frontier:
            for q in adj.indices[adj.indptr[p]:adj.indptr[p + 1]]:
                if q not in seen:
                    seen.add(int(q))
                    nxt.append(int(q))
        frontier = nxt
        if not frontier:
            break
    return np.array(sorted(seen), dtype=np.int64)


def _symmetric_drop(x: sp.spmatrix, drop_rel: float, label: str) -> SparseSymMatrix:
    x = ((x + x.T) * 0.5).tocsr()
    x.sort_indices()
    if x.nnz:
        cutoff = drop_rel * float(np.max(np.abs(x.data)))
        x.data[np.abs(x.data) < cutoff] = 0.0
    x.eliminate_zeros()
    return SparseSymMatrix(x.shape[0], x.indptr, x.indices, x.data, label=label,
                           _skip_checks=True)


def assemble_level(a: SparseSymMatrix, coarse: CoarseBasis, fine: FineBasis,
                   indicators: PatchIndicators, drop_rel: float = 1e-14,
                   label_suffix: str = "") -> LevelOperators:
    """Assemble A_st = Psi^T A Psi and M = Psi^T Psi; B_st stays implicit."""
    psi = fine.psi
    a_st = _symmetric_drop(psi.T @ (a.to_scipy() @ psi), drop_rel, "A" + label_suffix)
    m = _symmetric_drop((psi.T @ psi).tocsr(), drop_rel, "M" + label_suffix)
    b_op = BComplementOperator(a, coarse.householder, label="B" + label_suffix)
    return LevelOperators(a_st=a_st, m=m, b_op=b_op,
                          eps=indicators.eps_max, delta=indicators.delta_max)


def inherited_energy(e: EnergyDecomposition, fine: FineBasis,
                     partition: Partition | None = None,
                     drop_tol: float = 1e-12) -> EnergyDecomposition:
    """Conjugate every element by Psi: factor columns map to Psi^T g.

    Factor entries below ``drop_tol`` relative to their column maximum are
    dropped to preserve sparsity; the reassembly identity then holds to the
    same relative accuracy. When the partition is supplied, each element's
    footprint (the coarse indices whose patches its finest-level support
    touches) is tracked so the next level's interior energies stay anchored
    to geometry rather than to the basis spread.
    """
    g = (fine.psi.T @ e.factors).tocsc()
    g.sort_indices()
    if g.nnz:
        counts = np.diff(g.indptr)
        nonempty = counts > 0
        col_max = np.zeros(g.shape[1])
        col_max[nonempty] = np.maximum.reduceat(
            np.abs(g.data), g.indptr[:-1][nonempty])
        thresh = np.repeat(drop_tol * col_max, counts)
        g.data[np.abs(g.data) < thresh] = 0.0
        g.eliminate_zeros()
    home = None
    if partition is not None:
        n_prev = e.dim
        agg = sp.csr_matrix(
            (np.ones(n_prev), (partition.patch_of, np.arange(n_prev))),
            shape=(partition.n_patches, n_prev))
        prev_home = e.home if e.home is not None else e.factors
        home = (agg @ prev_home).tocsc()
        home.data[:] = 1.0
    return EnergyDecomposition.from_factors(g, e.col_elem, home=home)
