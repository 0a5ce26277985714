import numpy as np
import pytest

from ccpred import dissimilarity as dis
from ccpred.features import angle_delay_profile


def floyd_warshall(d):
    n = d.shape[0]
    out = d.astype(np.float64).copy()
    for k in range(n):
        out = np.minimum(out, out[:, k : k + 1] + out[k : k + 1, :])
    return out


def knn_local_matrix(rng, n, k, int_weights=True):
    if int_weights:
        d = rng.integers(1, 10, size=(n, n)).astype(np.float64)
    else:
        d = rng.uniform(0.1, 2.0, size=(n, n))
    d = np.triu(d, 1)
    d = d + d.T
    return d


def graph_matrix(d, k):
    """Dense edge-weight matrix of the undirected k-NN graph (inf = no edge)."""
    n = d.shape[0]
    dd = d.astype(np.float64).copy()
    np.fill_diagonal(dd, np.inf)
    g = np.full((n, n), np.inf)
    for i in range(n):
        for j in np.argsort(dd[i], kind="stable")[:k]:
            g[i, j] = dd[i, j]
            g[j, i] = dd[i, j]
    np.fill_diagonal(g, 0.0)
    return g


def test_adp_dissimilarity_identical_zero():
    rng = np.random.default_rng(0)
    a = np.abs(rng.standard_normal((3, 4, 4)))
    assert dis.adp_dissimilarity(a, a) == pytest.approx(0.0, abs=1e-12)


def test_adp_dissimilarity_disjoint_support_one():
    a = np.zeros((2, 2, 2))
    b = np.zeros((2, 2, 2))
    a[:, 0, 0] = 1.0
    b[:, 1, 1] = 1.0
    assert dis.adp_dissimilarity(a, b) == pytest.approx(1.0)


def test_adp_dissimilarity_matches_direct_formula():
    rng = np.random.default_rng(1)
    H1 = rng.standard_normal((3, 4, 16)) + 1j * rng.standard_normal((3, 4, 16))
    H2 = rng.standard_normal((3, 4, 16)) + 1j * rng.standard_normal((3, 4, 16))
    a1 = angle_delay_profile(H1, 8, 8)
    a2 = angle_delay_profile(H2, 8, 8)
    # independent re-evaluation of the definition
    expected = 0.0
    for b in range(3):
        u = a1[b].ravel() / np.linalg.norm(a1[b])
        v = a2[b].ravel() / np.linalg.norm(a2[b])
        expected += 1.0 - float(u @ v)
    expected /= 3.0
    assert dis.adp_dissimilarity(a1, a2) == pytest.approx(expected, rel=1e-12)
    assert 0.0 <= dis.adp_dissimilarity(a1, a2) <= 2.0


def test_adp_dissimilarity_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        dis.adp_dissimilarity(np.zeros((2, 3, 3)), np.zeros((2, 3, 4)))


def test_adp_matrix_matches_pairwise():
    rng = np.random.default_rng(2)
    H = rng.standard_normal((5, 2, 3, 8)) + 1j * rng.standard_normal((5, 2, 3, 8))
    adps = angle_delay_profile(H, 4, 4)
    D = dis.adp_dissimilarity_matrix(adps)
    assert D.dtype == np.float32
    for i in range(5):
        for j in range(5):
            assert D[i, j] == pytest.approx(dis.adp_dissimilarity(adps[i], adps[j]), abs=2e-6)


def test_fuse_time_zero_dt():
    assert dis.fuse_time(0.9, 0.0, alpha=1.0, t_max=1.0) == 0.0


def test_fuse_time_beyond_window_unchanged():
    assert dis.fuse_time(0.9, 5.0, alpha=0.01, t_max=1.0) == 0.9


def test_fuse_time_min_rule():
    assert dis.fuse_time(0.5, 2.0, alpha=0.1, t_max=2.0) == pytest.approx(0.2)


def test_calibrate_time_scale_recovers_slope():
    t = np.arange(20) * 0.5
    dt = np.abs(t[:, None] - t[None, :])
    d_adp = 0.3 * dt  # perfectly linear
    alpha = dis.calibrate_time_scale(d_adp, t, t_max=2.0)
    assert alpha == pytest.approx(0.3, rel=1e-12)


def test_geodesic_two_nodes():
    d = np.array([[0.0, 1.0], [1.0, 0.0]])
    g = dis.geodesic(d, k=1)
    np.testing.assert_allclose(g, [[0.0, 1.0], [1.0, 0.0]])


def test_geodesic_path_shortening():
    d = np.array(
        [
            [0.0, 2.0, 10.0],
            [2.0, 0.0, 2.0],
            [10.0, 2.0, 0.0],
        ]
    )
    g = dis.geodesic(d, k=2)
    assert g[0, 2] == pytest.approx(4.0)
    assert g[2, 0] == pytest.approx(4.0)


def test_geodesic_matches_floyd_warshall_exactly():
    rng = np.random.default_rng(3)
    d = knn_local_matrix(rng, 30, 5)
    g = dis.geodesic(d, k=5)
    oracle = floyd_warshall(graph_matrix(d, 5))
    # integer edge weights keep every path sum exact in both algorithms
    np.testing.assert_array_equal(g.astype(np.float64), oracle)


def test_geodesic_triangle_inequality():
    rng = np.random.default_rng(4)
    d = knn_local_matrix(rng, 60, 6, int_weights=False)
    g = dis.geodesic(d, k=6).astype(np.float64)
    slack = 1e-5 * g.max()
    # g[i, j] <= g[i, k] + g[k, j] for every triple
    assert np.all(g[:, :, None] <= g[:, None, :] + g.T[None, :, :] + slack)


def test_geodesic_not_longer_than_graph_edges():
    rng = np.random.default_rng(5)
    d = knn_local_matrix(rng, 40, 4, int_weights=False)
    g = dis.geodesic(d, k=4).astype(np.float64)
    gm = graph_matrix(d, 4)
    mask = np.isfinite(gm)
    assert np.all(g[mask] <= gm[mask] * (1 + 1e-6))


def test_geodesic_scales_exactly_with_power_of_two():
    rng = np.random.default_rng(6)
    d = knn_local_matrix(rng, 25, 4, int_weights=False)
    g1 = dis.geodesic(d, k=4)
    g2 = dis.geodesic(2.0 * d, k=4)
    np.testing.assert_array_equal(g2, 2.0 * g1)


def test_geodesic_disconnected_names_components():
    # two tight pairs far apart; k=1 keeps them separate
    d = np.array(
        [
            [0.0, 1.0, 50.0, 50.0],
            [1.0, 0.0, 50.0, 50.0],
            [50.0, 50.0, 0.0, 1.0],
            [50.0, 50.0, 1.0, 0.0],
        ]
    )
    with pytest.raises(dis.DisconnectedGraphError, match="2 components"):
        dis.geodesic(d, k=1)


def test_geodesic_numba_and_scipy_agree():
    pytest.importorskip("numba")
    import scipy.sparse.csgraph

    from ccpred import _kernels

    rng = np.random.default_rng(7)
    d = knn_local_matrix(rng, 40, 5, int_weights=False)
    graph = dis._knn_graph(d, 5)
    nb = _kernels.dijkstra_all(
        graph.indptr.astype(np.int64),
        graph.indices.astype(np.int64),
        graph.data.astype(np.float64),
        graph.shape[0],
    )
    sp = scipy.sparse.csgraph.dijkstra(graph, directed=False)
    np.testing.assert_allclose(nb, sp, rtol=1e-12, atol=1e-12)
