"""Normalized-cut evaluation and sign-based spectral partitioning."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from hiereig.ingest import WeightedGraph

logger = logging.getLogger(__name__)


@dataclass
class NcutReport:
    labels: np.ndarray        # integer code per node
    ncut_values: list         # per used eigenvector, the binary sign-split Ncut
    depth: int


def ncut(graph: WeightedGraph, labels) -> float:
    """Ncut(A, B) = cut/assoc(A) + cut/assoc(B) for a binary labeling."""
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if uniq.size == 1:
        logger.warning("one side of the cut is empty; Ncut defined as 0")
        return 0.0
    if uniq.size != 2:
        raise ValueError("ncut needs a binary labeling")
    side = labels == uniq[0]
    i, j, w = graph.edges[:, 0], graph.edges[:, 1], graph.weights
    cut = float(np.sum(w[side[i] != side[j]]))
    deg = np.zeros(graph.n)
    np.add.at(deg, i, w)
    np.add.at(deg, j, w)
    assoc_a = float(np.sum(deg[side]))
    assoc_b = float(np.sum(deg[~side]))
    if assoc_a == 0.0 or assoc_b == 0.0:
        logger.warning("a cut side has zero association; Ncut defined as 0")
        return 0.0
    return cut / assoc_a + cut / assoc_b


def sign_partition(vectors: np.ndarray, depth: int) -> np.ndarray:
    """Labels from the sign patterns of eigenvectors 2 .. depth+1.

    ``vectors`` holds eigenvectors as columns ordered by ascending
    eigenvalue (column 0 is the constant-like ground mode, unused).
    """
    n, m = vectors.shape
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if m < depth + 1:
        raise ValueError(f"need {depth + 1} eigenvectors, got {m}")
    labels = np.zeros(n, dtype=np.int64)
    for d in range(depth):
        bit = vectors[:, d + 1] >= 0.0
        labels = 2 * labels + bit.astype(np.int64)
    return labels


def ncut_report(graph: WeightedGraph, vectors: np.ndarray, depth: int) -> NcutReport:
    values = [ncut(graph, (vectors[:, d + 1] >= 0).astype(int)) for d in range(depth)]
    return NcutReport(labels=sign_partition(vectors, depth), ncut_values=values,
                      depth=depth)
