"""Conjugate-gradient kernels and the coefficient-space shift-invert operator.

``cg`` and ``pcg`` are deliberately plain implementations: one operator
application per iteration, no restarting, full recurrence. All conditioning
is handled structurally by the hierarchy, and the preconditioner in ``pcg``
is itself applied by a nested inner CG solve. ``ThetaCoeffOperator`` is the
operator the Lanczos machinery iterates with: x -> A_st^{-1} (M x), with M
doubling as the PCG preconditioner so the restricted spectrum of the
right-hand side is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hiereig.errors import ConvergenceError


@dataclass
class SolveReport:
    iterations: int
    matvecs: int
    final_relative_residual: float
    converged: bool
    inner_iterations_total: int = 0
    inner_calls: int = 0


def _as_op(a):
    if callable(a):
        return a
    return lambda x: a.matvec(x) if hasattr(a, "matvec") else a @ x


def cg(apply_a, b, x0=None, tol: float = 1e-8, max_iter: int | None = None,
       atol: float | None = None, rhs_relative: bool = False):
    """Plain conjugate gradient for SPD operators.

    Stops when ||b - A x|| <= tol * ||b - A x0|| (relative to the initial
    residual; identical to rhs-relative when x0 is zero). ``rhs_relative``
    switches the reference to ||b||, and ``atol`` adds an absolute floor;
    the effective threshold is the largest of the enabled ones. Returns
    (x, SolveReport); running out of iterations yields a non-converged
    report rather than an exception.
    """
    apply_a = _as_op(apply_a)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    matvecs = 0
    if x0 is None:
        x = np.zeros(n)
        r = b.copy()
    else:
        x = np.array(x0, dtype=np.float64)
        r = b - apply_a(x)
        matvecs += 1
    r0_norm = float(np.linalg.norm(r))
    ref = float(np.linalg.norm(b)) if rhs_relative else r0_norm
    thresh = tol * ref
    if atol is not None:
        thresh = max(thresh, atol)
    if r0_norm <= thresh:
        return x, SolveReport(0, matvecs, r0_norm / max(ref, 1e-300), True)
    p = r.copy()
    rs = float(r @ r)
    it = 0
    while it < max_iter:
        q = apply_a(p)
        matvecs += 1
        it += 1
        alpha = rs / float(p @ q)
        x += alpha * p
        r -= alpha * q
        rn = float(r @ r)
        if np.sqrt(rn) <= thresh:
            return x, SolveReport(it, matvecs, np.sqrt(rn) / max(ref, 1e-300), True)
        p = r + (rn / rs) * p
        rs = rn
    return x, SolveReport(it, matvecs, np.sqrt(rs) / max(ref, 1e-300), False)


def make_inner_solver(apply_m, tol: float, max_iter: int | None = None):
    """Preconditioner application z = M^{-1} r by nested CG.

    Nonconvergence raises: a preconditioner must be reliably applicable.
    """
    apply_m = _as_op(apply_m)

    def solve(r):
        z, rep = cg(apply_m, r, tol=tol, max_iter=max_iter)
        if not rep.converged:
            raise ConvergenceError(
                f"inner preconditioner solve stalled at rel residual "
                f"{rep.final_relative_residual:.3e}")
        return z, rep

    return solve


def pcg(apply_a, b, m_solve=None, x0=None, tol: float = 1e-8,
        max_iter: int | None = None, atol: float | None = None,
        rhs_relative: bool = False):
    """Preconditioned CG; ``m_solve`` returns (M^{-1} r, SolveReport).

    Same stopping conventions as ``cg``. The report tallies nested inner
    iterations so cost ledgers can recover preconditioner work exactly.
    """
    if m_solve is None:
        return cg(apply_a, b, x0=x0, tol=tol, max_iter=max_iter, atol=atol,
                  rhs_relative=rhs_relative)
    apply_a = _as_op(apply_a)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    matvecs = 0
    inner_total = 0
    inner_calls = 0
    if x0 is None:
        x = np.zeros(n)
        r = b.copy()
    else:
        x = np.array(x0, dtype=np.float64)
        r = b - apply_a(x)
        matvecs += 1
    r0_norm = float(np.linalg.norm(r))
    ref = float(np.linalg.norm(b)) if rhs_relative else r0_norm
    thresh = tol * ref
    if atol is not None:
        thresh = max(thresh, atol)
    if r0_norm <= thresh:
        return x, SolveReport(0, matvecs, r0_norm / max(ref, 1e-300), True)
    z, rep = m_solve(r)
    inner_total += rep.iterations
    inner_calls += 1
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < max_iter:
        q = apply_a(p)
        matvecs += 1
        it += 1
        alpha = rz / float(p @ q)
        x += alpha * p
        r -= alpha * q
        rnorm = float(np.linalg.norm(r))
        if rnorm <= thresh:
            return x, SolveReport(it, matvecs, rnorm / max(ref, 1e-300), True,
                                  inner_total, inner_calls)
        z, rep = m_solve(r)
        inner_total += rep.iterations
        inner_calls += 1
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(it, matvecs, float(np.linalg.norm(r)) / max(ref, 1e-300),
                          False, inner_total, inner_calls)


def op_theta_coeff(x, a_st, m, eps_op: float):
    """One application y ~= A_st^{-1} M x (zero start, tolerance eps_op)."""
    op = ThetaCoeffOperator(a_st, m, eps_op)
    return op(x)


class ThetaCoeffOperator:
    """Callable x -> A_st^{-1} M x with per-call cost recording.

    The PCG solve uses M itself as the preconditioner (applied by nested CG
    at 0.1x the outer tolerance), which keeps the iteration inside the
    residual's restricted spectrum.
    """

    def __init__(self, a_st, m, eps_op: float, inner_tol: float | None = None):
        self.a_st = a_st
        self.m = m
        self.eps_op = float(eps_op)
        self.inner_tol = 0.1 * self.eps_op if inner_tol is None else float(inner_tol)
        self.m_solve = make_inner_solver(m, self.inner_tol)
        self.a_matvecs: list[int] = []
        self.m_iters: list[int] = []
        self.m_calls: list[int] = []

    def __call__(self, x: np.ndarray) -> np.ndarray:
        w = self.m.matvec(x) if hasattr(self.m, "matvec") else self.m @ x
        y, rep = pcg(self.a_st, w, self.m_solve, x0=None, tol=self.eps_op)
        if not rep.converged:
            raise ConvergenceError(
                f"operator solve stalled at rel residual {rep.final_relative_residual:.3e}")
        self.a_matvecs.append(rep.matvecs)
        self.m_iters.append(rep.inner_iterations_total)
        self.m_calls.append(rep.inner_calls)
        return y

    def reset_counts(self):
        self.a_matvecs.clear()
        self.m_iters.clear()
        self.m_calls.clear()


def extreme_ritz(apply_a, n: int, steps: int = 120, rng=None, deflate=None):
    """Estimate the extreme eigenvalues of an SPD operator by plain Lanczos.

    Full reorthogonalization for stability; returns (low, high) Ritz values.
    ``deflate`` is an optional orthonormal matrix of directions projected out
    of every iterate.
    """
    apply_a = _as_op(apply_a)
    rng = np.random.default_rng(0x5EED) if rng is None else rng
    steps = min(steps, n if deflate is None else n - deflate.shape[1])
    v = rng.standard_normal(n)
    if deflate is not None:
        v -= deflate @ (deflate.T @ v)
    v /= np.linalg.norm(v)
    basis = np.zeros((n, steps))
    alphas, betas = [], []
    beta = 0.0
    prev = np.zeros(n)
    for j in range(steps):
        basis[:, j] = v
        w = apply_a(v)
        alpha = float(v @ w)
        alphas.append(alpha)
        w -= alpha * v + beta * prev
        if deflate is not None:
            w -= deflate @ (deflate.T @ w)
        w -= basis[:, :j + 1] @ (basis[:, :j + 1].T @ w)
        beta = float(np.linalg.norm(w))
        if beta < 1e-13:
            break
        prev = v
        v = w / beta
        if j < steps - 1:
            betas.append(beta)
    t = np.diag(alphas)
    if betas:
        k = len(alphas)
        off = np.array(betas[:k - 1])
        t[np.arange(k - 1), np.arange(1, k)] = off
        t[np.arange(1, k), np.arange(k - 1)] = off
    w = np.linalg.eigvalsh(t)
    return float(w[0]), float(w[-1])
