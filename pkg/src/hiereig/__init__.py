"""Hierarchical eigensolver for large sparse symmetric positive definite matrices.

Computes a large number of leftmost eigenpairs by compressing the operator
into a multiresolution hierarchy of well-conditioned levels, then sweeping
the hierarchy coarse-to-fine with an extension/refinement scheme built on an
M-inner-product implicitly restarted Lanczos iteration and a Gram-matrix
preconditioned conjugate gradient kernel.
"""

from hiereig.sparse import SparseSymMatrix, matvec, read_matrix_market, write_matrix_market
from hiereig.mmd import MmdHierarchy, build_mmd
from hiereig.driver import SolverParams, hierarchical_eigensolve

__all__ = [
    "SparseSymMatrix",
    "matvec",
    "read_matrix_market",
    "write_matrix_market",
    "MmdHierarchy",
    "build_mmd",
    "SolverParams",
    "hierarchical_eigensolve",
]

__version__ = "0.1.0"
