import numpy as np
import pytest

from hiereig.energy import laplacian_energy_decomposition
from hiereig.errors import InputFormatError
from hiereig.ingest import (
    PointCloud,
    WeightedGraph,
    auto_scaled_laplacian,
    estimate_lambda_extremes,
    gaussian_weights,
    generate_swissroll,
    graph_laplacian,
    knn_graph,
    largest_component,
    read_xyz,
)


def test_swissroll_single_point_ranges():
    cloud = generate_swissroll(1, seed=42)
    x, y, z = cloud.points[0]
    t = np.hypot(x, z)
    assert 1.5 * np.pi - 1.0 <= t <= 4.5 * np.pi + 1.0  # radius = t up to noise
    assert -1.0 <= y <= 21.0


def test_swissroll_radius_band():
    cloud = generate_swissroll(5000, seed=1)
    r = np.hypot(cloud.points[:, 0], cloud.points[:, 2])
    assert r.min() > 1.5 * np.pi - 1.5
    assert r.max() < 4.5 * np.pi + 1.5


def test_swissroll_deterministic():
    a = generate_swissroll(100, seed=9).points
    b = generate_swissroll(100, seed=9).points
    assert np.array_equal(a, b)


def test_swissroll_rejects_nonpositive():
    with pytest.raises(ValueError):
        generate_swissroll(0)


def test_knn_collinear_union_symmetrization():
    cloud = PointCloud(points=np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]))
    nbrs = knn_graph(cloud, 1)
    graph = gaussian_weights(cloud, nbrs, sigma=1.0)
    assert graph.edges.tolist() == [[0, 1], [1, 2]]


def test_knn_complete_graph():
    rng = np.random.default_rng(3)
    cloud = PointCloud(points=rng.standard_normal((7, 3)))
    nbrs = knn_graph(cloud, 6)
    graph = gaussian_weights(cloud, nbrs, sigma=10.0)
    assert graph.edges.shape[0] == 21


def test_large_sigma_limit():
    rng = np.random.default_rng(4)
    cloud = PointCloud(points=rng.standard_normal((10, 3)))
    graph = gaussian_weights(cloud, knn_graph(cloud, 3), sigma=1e12)
    assert np.allclose(graph.weights, 1.0, atol=1e-10)


def test_duplicate_points_weight_one():
    cloud = PointCloud(points=np.array([[0.0, 0, 0], [0.0, 0, 0], [5.0, 0, 0]]))
    nbrs = knn_graph(cloud, 1)
    graph = gaussian_weights(cloud, nbrs, sigma=0.1)
    w01 = graph.weights[(graph.edges[:, 0] == 0) & (graph.edges[:, 1] == 1)]
    assert w01.size == 1 and w01[0] == 1.0


def test_p3_from_path_graph(p3):
    graph = WeightedGraph(n=3, edges=np.array([[0, 1], [1, 2]]),
                          weights=np.array([1.0, 1.0]))
    a = graph_laplacian(graph, scale=1.0, selfloop=1.0)
    assert np.allclose(a.to_dense(), p3.to_dense())


def test_row_sums_equal_selfloop():
    rng = np.random.default_rng(5)
    cloud = PointCloud(points=rng.uniform(0, 1, (40, 3)))
    graph = gaussian_weights(cloud, knn_graph(cloud, 4), sigma=0.5)
    graph, _ = largest_component(graph)
    a = graph_laplacian(graph, scale=2.0, selfloop=0.7)
    sums = a.to_dense() @ np.ones(graph.n)
    assert np.allclose(sums, 0.7, atol=1e-12)


def test_disconnected_components_unit_eigenvalue_multiplicity():
    pts = np.concatenate([np.random.default_rng(6).uniform(0, 1, (10, 3)),
                          np.random.default_rng(7).uniform(100, 101, (10, 3))])
    cloud = PointCloud(points=pts)
    graph = gaussian_weights(cloud, knn_graph(cloud, 3), sigma=1.0)
    a = graph_laplacian(graph, selfloop=1.0)
    w = np.linalg.eigvalsh(a.to_dense())
    assert np.sum(np.abs(w - 1.0) < 1e-9) == 2


def test_zero_selfloop_warns(caplog):
    import logging

    graph = WeightedGraph(n=2, edges=np.array([[0, 1]]), weights=np.array([1.0]))
    with caplog.at_level(logging.WARNING):
        graph_laplacian(graph, selfloop=0.0)
    assert any("singular" in r.message for r in caplog.records)


def test_output_is_energy_decomposable():
    rng = np.random.default_rng(8)
    cloud = PointCloud(points=rng.uniform(0, 1, (60, 3)))
    graph = gaussian_weights(cloud, knn_graph(cloud, 5), sigma=0.3)
    graph, _ = largest_component(graph)
    a = graph_laplacian(graph, scale=3.0, selfloop=1.0)
    e = laplacian_energy_decomposition(a)  # must not raise
    assert e.dim == a.dim


def test_lambda2_estimate_close_to_oracle():
    rng = np.random.default_rng(9)
    cloud = PointCloud(points=rng.uniform(0, 1, (300, 3)))
    graph = gaussian_weights(cloud, knn_graph(cloud, 6), sigma=0.2)
    graph, _ = largest_component(graph)
    lam2_est, lam_max_est = estimate_lambda_extremes(graph, seed=5)
    raw = graph_laplacian(graph, scale=1.0, selfloop=0.0)
    w = np.linalg.eigvalsh(raw.to_dense())
    lam2_true = w[1]
    assert 0.8 * lam2_true <= lam2_est <= 2.0 * lam2_true
    assert lam_max_est >= 0.95 * w[-1]
    a = auto_scaled_laplacian(graph, seed=5)
    wa = np.linalg.eigvalsh(a.to_dense())
    assert 1.3 <= wa[1] <= 3.0  # second eigenvalue is order one


def test_read_xyz_roundtrip(tmp_path):
    path = tmp_path / "p.xyz"
    path.write_text("0 0 0\n1.5 2 3\n# comment\n4 5 6\n")
    cloud = read_xyz(path)
    assert cloud.n == 3
    assert np.allclose(cloud.points[1], [1.5, 2.0, 3.0])


def test_read_xyz_malformed(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2\n")
    with pytest.raises(InputFormatError):
        read_xyz(path)
