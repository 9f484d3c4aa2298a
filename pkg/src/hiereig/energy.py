"""Energy decompositions, patch aggregation, and partition indicators.

An energy decomposition writes an SPD matrix as a sum of small-support PSD
elements. Internally every element is held in factored form: a sparse
column g with element block g g^T. The edge rule produces rank-1 elements
directly, and factored form is closed under basis changes (inherited
decompositions stay rank-1 per factor column), which keeps coarse levels
cheap. Dense blocks are materialized only on demand.

The two partition indicators steer aggregation: the error factor of a patch
is the reciprocal second interior eigenvalue (it bounds what compression to
one vector per patch loses), and the condition factor is the Rayleigh
quotient of the patch basis against the inverse closed energy (it bounds the
spectral ceiling of the compressed operator).

The closed energy of a patch weights each boundary-crossing element by
||g||^2 / ||g restricted to the patch||^2 on its restricted factor. This is
the Cauchy-Schwarz splitting that makes the block-diagonal of the per-patch
closed energies dominate the full operator, which in turn is exactly what
the spectral ceiling bound lambda_max(A_st) <= delta needs; the plain
principal submatrix fails that bound under sign-mixing across patches.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from hiereig.errors import NotDecomposableError, PartitionError, SingularPatchError
from hiereig.sparse import SparseSymMatrix


@dataclass
class EnergyElement:
    support: np.ndarray  # sorted indices
    block: np.ndarray    # dense symmetric PSD over the support


class EnergyDecomposition:
    """Sum-of-PSD-elements representation, factor columns in a sparse matrix.

    ``home`` is an optional 0/1 pattern (same shape as ``factors``) marking,
    per element, the indices its original finest-level support touches. For
    inherited decompositions the numeric rows of a factor spread over every
    basis column that reaches the element, while the home pattern stays
    anchored to the element's geometric footprint; interior-energy
    containment is decided by the home pattern so that coarse patches keep
    their full interior stiffness. When ``home`` is None the numeric pattern
    is its own footprint (true for finest-level decompositions).
    """

    def __init__(self, dim: int, factors: sp.csc_matrix, col_elem: np.ndarray,
                 n_elements: int, home: sp.spmatrix | None = None):
        self.dim = int(dim)
        self.factors = factors.tocsc()
        self.factors.sort_indices()
        self.col_elem = np.asarray(col_elem, dtype=np.int64)
        self.n_elements = int(n_elements)
        self.home = home.tocsc() if home is not None else None
        if self.home is not None:
            self.home.sort_indices()
        self._rows_csr = None
        self._col_nnz = None
        self._col_sqnorm = None
        self._home_csr = None
        self._home_nnz = None

    # -- construction ------------------------------------------------------

    @classmethod
    def from_elements(cls, elements, dim: int) -> "EnergyDecomposition":
        rows, cols, vals, col_elem = [], [], [], []
        ncol = 0
        for eid, (support, block) in enumerate(elements):
            support = np.asarray(support, dtype=np.int64)
            block = np.atleast_2d(np.asarray(block, dtype=np.float64))
            if support.size == 0:
                raise ValueError(f"element {eid} has empty support")
            if np.any(np.diff(support) <= 0):
                raise ValueError(f"element {eid} support must be sorted and unique")
            if block.shape != (support.size, support.size):
                raise ValueError(f"element {eid} block does not match its support")
            block = 0.5 * (block + block.T)
            w, v = np.linalg.eigh(block)
            scale = max(np.max(np.abs(w)), 1e-300)
            if w[0] < -1e-12 * scale:
                raise ValueError(f"element {eid} is not positive semidefinite")
            keep = w > 1e-14 * scale
            for lam, vec in zip(w[keep], v[:, keep].T):
                rows.append(support)
                cols.append(np.full(support.size, ncol))
                vals.append(np.sqrt(lam) * vec)
                col_elem.append(eid)
                ncol += 1
        if ncol == 0:
            raise ValueError("decomposition has no nonzero elements")
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dim, ncol)).tocsc()
        mat.eliminate_zeros()
        return cls(dim, mat, np.array(col_elem), len(elements))

    @classmethod
    def from_factors(cls, factors: sp.spmatrix, col_elem=None,
                     home: sp.spmatrix | None = None) -> "EnergyDecomposition":
        factors = factors.tocsc()
        keep = np.flatnonzero(np.diff(factors.indptr) > 0)
        if col_elem is None:
            col_elem = np.arange(factors.shape[1])
        col_elem = np.asarray(col_elem)
        if keep.size != factors.shape[1]:
            factors = factors[:, keep]
            col_elem = col_elem[keep]
            if home is not None:
                home = home.tocsc()[:, keep]
        n_el = int(col_elem.max()) + 1 if len(col_elem) else 0
        return cls(factors.shape[0], factors, col_elem, n_el, home=home)

    # -- views -------------------------------------------------------------

    @property
    def rows_csr(self) -> sp.csr_matrix:
        if self._rows_csr is None:
            self._rows_csr = self.factors.tocsr()
        return self._rows_csr

    @property
    def col_nnz(self) -> np.ndarray:
        if self._col_nnz is None:
            self._col_nnz = np.diff(self.factors.indptr)
        return self._col_nnz

    @property
    def col_sqnorm(self) -> np.ndarray:
        if self._col_sqnorm is None:
            self._col_sqnorm = np.add.reduceat(
                self.factors.data ** 2, self.factors.indptr[:-1])
        return self._col_sqnorm

    @property
    def home_rows_csr(self) -> sp.csr_matrix:
        if self.home is None:
            return self.rows_csr
        if self._home_csr is None:
            self._home_csr = self.home.tocsr()
        return self._home_csr

    @property
    def home_nnz(self) -> np.ndarray:
        if self.home is None:
            return self.col_nnz
        if self._home_nnz is None:
            self._home_nnz = np.diff(self.home.indptr)
        return self._home_nnz

    def elements(self):
        """Materialize (support, block) pairs, grouped by element id."""
        order = np.argsort(self.col_elem, kind="stable")
        csc = self.factors
        start = 0
        while start < order.size:
            stop = start
            eid = self.col_elem[order[start]]
            while stop < order.size and self.col_elem[order[stop]] == eid:
                stop += 1
            group = order[start:stop]
            segs = [(csc.indices[csc.indptr[c]:csc.indptr[c + 1]],
                     csc.data[csc.indptr[c]:csc.indptr[c + 1]]) for c in group]
            support = np.unique(np.concatenate([s for s, _ in segs]))
            block = np.zeros((support.size, support.size))
            for rows, vals in segs:
                local = np.searchsorted(support, rows)
                g = np.zeros(support.size)
                g[local] = vals
                block += np.outer(g, g)
            yield EnergyElement(support=support, block=block)
            start = stop

    def assemble(self) -> sp.csr_matrix:
        """Sum of all elements as a sparse matrix."""
        g = self.factors
        return (g @ g.T).tocsr()

    # -- file format -------------------------------------------------------

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("%%energy-decomposition real\n")
            elems = list(self.elements())
            fh.write(f"{self.dim} {len(elems)}\n")
            for el in elems:
                fh.write(" ".join(str(i + 1) for i in el.support) + "\n")
                for row in el.block:
                    fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    @classmethod
    def from_file(cls, path) -> "EnergyDecomposition":
        with open(path, "r") as fh:
            header = fh.readline()
            if not header.startswith("%%energy-decomposition"):
                raise ValueError("not an energy decomposition file")
            dim, n_el = (int(t) for t in fh.readline().split())
            elements = []
            for _ in range(n_el):
                support = np.array([int(t) - 1 for t in fh.readline().split()])
                block = np.array([[float(t) for t in fh.readline().split()]
                                  for _ in range(support.size)])
                elements.append((support, block))
        return cls.from_elements(elements, dim)


def laplacian_energy_decomposition(a: SparseSymMatrix) -> EnergyDecomposition:
    """Edge-rule decomposition of a generalized graph Laplacian.

    One 2x2 element [[w, -w], [-w, w]] per off-diagonal pair with w = -a_ij,
    plus one 1x1 element [d_i] per index with positive diagonal surplus
    d_i = a_ii - sum_j |a_ij|. Rejects matrices with positive off-diagonal
    entries or negative surplus beyond 1e-12 relative.
    """
    csr = a.to_scipy().tocoo()
    off = csr.row != csr.col
    if np.any(csr.data[off] > 0):
        k = np.flatnonzero(off & (csr.data > 0))[0]
        raise NotDecomposableError(
            "not energy-decomposable by edge rule: positive off-diagonal at "
            f"({csr.row[k]}, {csr.col[k]}); supply a decomposition file")
    diag = a.diagonal()
    offsum = np.zeros(a.dim)
    np.add.at(offsum, csr.row[off], np.abs(csr.data[off]))
    surplus = diag - offsum
    bad = surplus < -1e-12 * np.abs(diag)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NotDecomposableError(
            f"not energy-decomposable by edge rule: negative surplus {surplus[i]:.3e} "
            f"at index {i}; supply a decomposition file")
    surplus = np.maximum(surplus, 0.0)

    up = off & (csr.row < csr.col)
    ei, ej, w = csr.row[up], csr.col[up], -csr.data[up]
    order = np.lexsort((ej, ei))
    ei, ej, w = ei[order], ej[order], w[order]
    n_edges = ei.size
    loops = np.flatnonzero(surplus > 0)

    ncol = n_edges + loops.size
    rows = np.concatenate([np.stack([ei, ej], axis=1).ravel(), loops])
    cols = np.concatenate([np.repeat(np.arange(n_edges), 2),
                           n_edges + np.arange(loops.size)])
    s = np.sqrt(w)
    vals = np.concatenate([np.stack([s, -s], axis=1).ravel(), np.sqrt(surplus[loops])])
    factors = sp.coo_matrix((vals, (rows, cols)), shape=(a.dim, ncol)).tocsc()
    return EnergyDecomposition(a.dim, factors, np.arange(ncol), ncol)


# -- patches and indicators --------------------------------------------------

@dataclass
class Partition:
    patches: list            # sorted index arrays
    patch_of: np.ndarray     # index -> patch id

    @property
    def n_patches(self) -> int:
        return len(self.patches)


@dataclass
class PatchIndicators:
    eps: np.ndarray          # per patch error factor (1 / second interior eigenvalue)
    delta: np.ndarray        # per patch condition factor
    phi: list                # per patch (|P|, q) orthonormal basis

    @property
    def eps_max(self) -> float:
        return float(np.max(self.eps)) if self.eps.size else 0.0

    @property
    def delta_max(self) -> float:
        return float(np.max(self.delta)) if self.delta.size else 0.0


def _patch_factor_block(patch: np.ndarray, e: EnergyDecomposition):
    """Dense (|P| x ncand) block of factor entries on the patch rows.

    Returns (dense, candidate column ids, per-candidate in-patch counts).
    Candidates are exactly the columns touching the patch.
    """
    patch = np.asarray(patch, dtype=np.int64)
    sub = e.rows_csr[patch]  # |P| x ncols, rows re-indexed 0..|P|-1
    sub = sub.tocoo()
    if sub.nnz == 0:
        return np.zeros((patch.size, 0)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    cand, inv = np.unique(sub.col, return_inverse=True)
    dense = np.zeros((patch.size, cand.size))
    dense[sub.row, inv] = sub.data
    incount = np.bincount(inv, minlength=cand.size)
    return dense, cand, incount


def _interior_mask(patch: np.ndarray, e: EnergyDecomposition,
                   cand: np.ndarray) -> np.ndarray:
    """Among candidate columns, mark those whose footprint lies in the patch."""
    if cand.size == 0:
        return np.zeros(0, dtype=bool)
    hsub = e.home_rows_csr[patch].tocoo()
    counts = np.zeros(cand.size, dtype=np.int64)
    if hsub.nnz:
        pos = np.searchsorted(cand, hsub.col)
        ok = (pos < cand.size)
        pos = pos[ok]
        hit = cand[pos] == hsub.col[ok]
        np.add.at(counts, pos[hit], 1)
    return counts == e.home_nnz[cand]


def interior_energy(patch, e: EnergyDecomposition) -> np.ndarray:
    """Sum of elements whose footprint lies in the patch, restricted to it."""
    patch = np.asarray(patch, dtype=np.int64)
    if patch.size == 0:
        raise ValueError("empty patch")
    dense, cand, _ = _patch_factor_block(patch, e)
    g = dense[:, _interior_mask(patch, e, cand)]
    return g @ g.T


def _closed_scaled_block(dense: np.ndarray, cand: np.ndarray,
                         e: EnergyDecomposition) -> np.ndarray:
    """Scale restricted factor columns by ||g|| / ||g cap P||.

    Interior columns keep weight one; crossing columns gain the
    Cauchy-Schwarz compensation that makes the per-patch closed energies
    dominate the full operator block-diagonally.
    """
    if cand.size == 0:
        return dense
    insq = np.einsum("ij,ij->j", dense, dense)
    scale = np.sqrt(e.col_sqnorm[cand] / np.maximum(insq, 1e-300))
    return dense * scale


def closed_energy(patch, e: EnergyDecomposition) -> np.ndarray:
    """Sum of all elements restricted to the patch, crossing ones reweighted."""
    patch = np.asarray(patch, dtype=np.int64)
    if patch.size == 0:
        raise ValueError("empty patch")
    dense, cand, _ = _patch_factor_block(patch, e)
    g = _closed_scaled_block(dense, cand, e)
    return g @ g.T


def _indicators_from_blocks(interior: np.ndarray, closed: np.ndarray, q: int):
    size = interior.shape[0]
    if size <= q:
        # fully resolved patch: orthonormal basis of the whole span, no unresolved modes
        phi = np.eye(size)[:, :q] if size >= q else np.eye(size)
        eps = 0.0
    else:
        w, v = np.linalg.eigh(interior)
        phi = v[:, :q]
        lam_next = w[q]
        eps = float(1.0 / lam_next) if lam_next > 1e-300 else np.inf
        # deterministic sign: largest-magnitude component positive
        idx = np.argmax(np.abs(phi), axis=0)
        sg = np.sign(phi[idx, np.arange(phi.shape[1])])
        sg[sg == 0] = 1.0
        phi = phi * sg
    tr = float(np.trace(closed))
    wc = np.linalg.eigvalsh(closed)
    if wc[0] < 1e-13 * max(tr, 1e-300):
        raise SingularPatchError(
            "patch closed energy singular; increase selfloop regularization")
    cho = sla.cho_factor(closed)
    gram = phi.T @ sla.cho_solve(cho, phi)
    delta = float(1.0 / np.linalg.eigvalsh(0.5 * (gram + gram.T))[0])
    return phi, eps, delta


def patch_basis_and_indicators(patch, e: EnergyDecomposition, q: int = 1):
    """Per-patch local basis and the (error factor, condition factor) pair."""
    patch = np.asarray(patch, dtype=np.int64)
    if patch.size == 0:
        raise ValueError("empty patch")
    dense, cand, _ = _patch_factor_block(patch, e)
    g_int = dense[:, _interior_mask(patch, e, cand)]
    g_cl = _closed_scaled_block(dense, cand, e)
    return _indicators_from_blocks(g_int @ g_int.T, g_cl @ g_cl.T, q)


# -- partitioner -------------------------------------------------------------

def _accrete(adj, seed, assigned, limit, scale_gap: float = 1e-2):
    """Grow a patch from a seed, always attaching the unassigned neighbor
    with the strongest accumulated coupling (ties by lowest index).

    Coincides with breadth-first collection on homogeneous weights, but on
    operators with strong scale separation it keeps tight clusters whole,
    which is what the inherited decomposition of the next level needs.
    Growth also stops at a natural cluster boundary: when the best available
    attachment falls below ``scale_gap`` times the strongest attachment
    already absorbed (never triggers on smoothly weighted graphs).
    """
    patch = [seed]
    assigned[seed] = True
    coupling = {}

    def absorb(u):
        for ptr in range(adj.indptr[u], adj.indptr[u + 1]):
            v = int(adj.indices[ptr])
            if not assigned[v] and v != u:
                coupling[v] = coupling.get(v, 0.0) + abs(adj.data[ptr])

    absorb(seed)
    strongest = 0.0
    while len(patch) < limit and coupling:
        best, w_best = min(coupling.items(), key=lambda kv: (-kv[1], kv[0]))
        if strongest > 0.0 and w_best < scale_gap * strongest:
            break  # natural cluster boundary, stop before absorbing weak ties
        strongest = max(strongest, w_best)
        del coupling[best]
        assigned[best] = True
        patch.append(best)
        absorb(best)
    return np.array(sorted(patch), dtype=np.int64)


def _accretion_order(patch: np.ndarray, adj):
    """Order patch nodes by greedy strongest-first accretion from the most
    peripheral node; returns (order, attachment strengths)."""
    members = {int(g): i for i, g in enumerate(patch)}
    total = np.zeros(patch.size)
    for i, g in enumerate(patch):
        for ptr in range(adj.indptr[g], adj.indptr[g + 1]):
            if int(adj.indices[ptr]) in members and adj.indices[ptr] != g:
                total[i] += abs(adj.data[ptr])
    seed = int(np.lexsort((patch, total))[0])
    placed = np.zeros(patch.size, dtype=bool)
    placed[seed] = True
    order = [seed]
    strength = []
    coupling = np.zeros(patch.size)

    def absorb(i):
        g = patch[i]
        for ptr in range(adj.indptr[g], adj.indptr[g + 1]):
            j = members.get(int(adj.indices[ptr]))
            if j is not None and not placed[j]:
                coupling[j] += abs(adj.data[ptr])

    absorb(seed)
    for _ in range(patch.size - 1):
        cand = np.flatnonzero(~placed)
        best = cand[np.lexsort((cand, -coupling[cand]))[0]]
        strength.append(float(coupling[best]))
        placed[best] = True
        coupling[best] = 0.0
        order.append(int(best))
        absorb(best)
    return np.array(order), np.array(strength)


def _bisect_patch(patch: np.ndarray, adj):
    """Split a patch at the weakest attachment step of its accretion order."""
    if patch.size < 2:
        raise PartitionError("cannot bisect a singleton patch")
    order, strength = _accretion_order(patch, adj)
    lo = max(1, patch.size // 4)
    hi = max(lo + 1, (3 * patch.size) // 4)
    window = strength[lo - 1:hi - 1]
    cut = lo + int(np.argmin(window)) if window.size else patch.size // 2
    side_a = np.zeros(patch.size, dtype=bool)
    side_a[order[:cut]] = True
    return patch[side_a], patch[~side_a]


def build_partition(a: SparseSymMatrix, e: EnergyDecomposition,
                    eps_target: float, c: float, q: int = 1):
    """Aggregate indices into patches satisfying the acceptance predicate.

    Seeded strongest-coupling-first aggregation on the connectivity graph
    into patches of target size ceil(log(1/eps_target) + log(dim)) clamped
    to [4, 64], followed by a repair sweep that bisects (at the weakest
    attachment of the accretion order) any patch violating
    eps_j <= eps_target or eps_j * delta_j <= c, to fixpoint. Deterministic
    given the index ordering. Singleton patches have eps_j = 0 and always
    satisfy the predicate, so termination is guaranteed.
    """
    if eps_target <= 0:
        raise PartitionError("eps_target must be positive")
    if c <= 1:
        raise PartitionError("condition bound c must exceed 1")
    n = a.dim
    adj = a.to_scipy()
    s0 = int(np.ceil(np.log(max(1.0 / eps_target, 1.0 + 1e-9)) + np.log(max(n, 2))))
    s0 = min(max(s0, 4), 64)

    assigned = np.zeros(n, dtype=bool)
    patches = []
    for seed in range(n):
        if not assigned[seed]:
            patches.append(_accrete(adj, seed, assigned, s0))

    results = [None] * len(patches)
    pending = list(range(len(patches)))
    while pending:
        next_pending = []
        for pid in pending:
            patch = patches[pid]
            phi, eps, delta = patch_basis_and_indicators(patch, e, q=q)
            if eps <= eps_target and eps * delta <= c:
                results[pid] = (phi, eps, delta)
            elif patch.size <= q:
                raise PartitionError(
                    f"cannot satisfy predicate even with singleton patch {patch.tolist()}: "
                    f"eps={eps:.3e}, delta={delta:.3e}")
            else:
                half_a, half_b = _bisect_patch(patch, adj)
                patches[pid] = half_a
                patches.append(half_b)
                results.append(None)
                next_pending.extend([pid, len(patches) - 1])
        pending = next_pending

    order = np.argsort([p[0] for p in patches], kind="stable")
    patches = [patches[i] for i in order]
    results = [results[i] for i in order]
    patch_of = np.empty(n, dtype=np.int64)
    for pid, patch in enumerate(patches):
        patch_of[patch] = pid
    indicators = PatchIndicators(
        eps=np.array([r[1] for r in results]),
        delta=np.array([r[2] for r in results]),
        phi=[r[0] for r in results])
    return Partition(patches=patches, patch_of=patch_of), indicators
