"""Shared test fixtures: random geometric Laplacians and dense oracles.

The oracle side of every dual-route check lives here and goes through
numpy.linalg directly, independent of the solver pipeline under test.
"""

import numpy as np
import scipy.sparse as sp

from hiereig.ingest import PointCloud, WeightedGraph, gaussian_weights, graph_laplacian, knn_graph, largest_component
from hiereig.sparse import SparseSymMatrix


def random_geometric_laplacian(seed, n=80, k=5, dims=2, selfloop=1.0,
                               scale=1.0, sigma=None):
    """Connected kNN Laplacian of random points; SPD by unit selfloops."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, size=(n, 3))
    if dims == 2:
        pts[:, 2] = 0.0
    cloud = PointCloud(points=pts)
    nbrs = knn_graph(cloud, k)
    if sigma is None:
        sample = pts[rng.integers(0, n, 64)] - pts[rng.integers(0, n, 64)]
        sigma = max(float(np.median(np.einsum("ij,ij->i", sample, sample))), 1e-6)
    graph = gaussian_weights(cloud, nbrs, sigma)
    graph, kept = largest_component(graph)
    return graph_laplacian(graph, scale=scale, selfloop=selfloop), graph


def hierarchical_cluster_laplacian(seed, groups=(4, 4, 6), weights=(4e4, 100.0, 1.0),
                                   selfloop=1.0, jitter=0.2):
    """Laplacian of a hierarchically clustered graph with strong scale separation.

    Finest groups are near-cliques at the largest weight; group leaders form
    rings at the next weight within each supergroup; supergroup leaders form
    a global ring at the smallest weight. Gives genuinely multi-level
    compressible operators (and clean spectral gaps) at small n.
    """
    rng = np.random.default_rng(seed)
    g0, g1, g2 = groups
    n = g0 * g1 * g2
    edges, w = [], []

    def jit():
        return 1.0 + jitter * rng.uniform(-1.0, 1.0)

    for sg in range(g2):
        for grp in range(g1):
            base = (sg * g1 + grp) * g0
            for i in range(g0):
                for j in range(i + 1, g0):
                    edges.append((base + i, base + j))
                    w.append(weights[0] * jit())
        leaders = [(sg * g1 + grp) * g0 for grp in range(g1)]
        for i in range(g1):
            edges.append((min(leaders[i], leaders[(i + 1) % g1]),
                          max(leaders[i], leaders[(i + 1) % g1])))
            w.append(weights[1] * jit())
    super_leaders = [sg * g1 * g0 for sg in range(g2)]
    for i in range(g2):
        a, b = super_leaders[i], super_leaders[(i + 1) % g2]
        edges.append((min(a, b), max(a, b)))
        w.append(weights[2] * jit())
    uniq = {}
    for (i, j), wt in zip(edges, w):
        uniq[(i, j)] = uniq.get((i, j), 0.0) + wt
    pairs = np.array(sorted(uniq), dtype=np.int64)
    graph = WeightedGraph(n=n, edges=pairs,
                          weights=np.array([uniq[tuple(p)] for p in pairs]))
    return graph_laplacian(graph, scale=1.0, selfloop=selfloop), graph


def dense_inverse_eigs(a: SparseSymMatrix):
    """Oracle eigenpairs of A^{-1}: mu descending with orthonormal vectors."""
    w, v = np.linalg.eigh(a.to_dense())
    mu = 1.0 / w  # w ascending -> mu descending
    return mu, v


def spectral_norm(x: np.ndarray) -> float:
    return float(np.linalg.norm(x, 2))


def random_spd(rng, n, cond=100.0):
    """Dense SPD matrix with roughly the requested condition number."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.geomspace(1.0, cond, n)
    return (q * w) @ q.T


def random_spd_pair(rng, n, cond_a=50.0, cond_m=5.0):
    return random_spd(rng, n, cond_a), random_spd(rng, n, cond_m)
