"""Pseudo-distances between CSI snapshots and their geodesic completion.

Local dissimilarities fuse two sources: angle-delay-profile similarity and
timestamp differences (a slowly moving user cannot be far from where it just
was).  Shortest paths over the k-nearest-neighbor graph then turn locally
reliable scores into a globally consistent metric, Isomap style.
"""

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from . import accel

DEFAULT_KNN = 20
MAX_POINTS = 2 ** 15


class DisconnectedGraphError(ValueError):
    pass


def adp_dissimilarity(a, b):
    """Mean over arrays of (1 - <a_b, b_b>) with unit-norm profiles."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"profile shapes differ: {a.shape} vs {b.shape}")
    B = a.shape[0]
    av = a.reshape(B, -1)
    bv = b.reshape(B, -1)
    an = np.linalg.norm(av, axis=1)
    bn = np.linalg.norm(bv, axis=1)
    an[an == 0] = 1.0
    bn[bn == 0] = 1.0
    sims = np.einsum("bp,bp->b", av / an[:, None], bv / bn[:, None])
    return float(np.mean(1.0 - sims))


def adp_dissimilarity_matrix(adps):
    """Pairwise ADP dissimilarities for stacked profiles (L, B, ...)."""
    adps = np.asarray(adps, dtype=np.float64)
    L, B = adps.shape[0], adps.shape[1]
    if L > MAX_POINTS:
        raise ValueError(f"L={L} exceeds the desk-scale cap {MAX_POINTS}")
    U = adps.reshape(L, B, -1).astype(np.float32)
    norms = np.linalg.norm(U, axis=2)
    norms[norms == 0] = 1.0
    U /= norms[:, :, None]
    sims = np.zeros((L, L), dtype=np.float32)
    for b in range(B):
        sims += U[:, b] @ U[:, b].T
    d = 1.0 - sims / np.float32(B)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, d.T)


def fuse_time(d_adp, delta_t, alpha, t_max):
    """min(d_adp, alpha*dt) for pairs closer in time than t_max."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    d_adp = np.asarray(d_adp, dtype=np.float64)
    delta_t = np.asarray(delta_t, dtype=np.float64)
    if np.any(delta_t < 0):
        raise ValueError("delta_t must be >= 0")
    fused = np.where(delta_t <= t_max, np.minimum(d_adp, alpha * delta_t), d_adp)
    return float(fused) if fused.ndim == 0 else fused


def calibrate_time_scale(d_adp, t, t_max):
    """Least-squares alpha matching alpha*dt to the ADP scale on close pairs."""
    t = np.asarray(t, dtype=np.float64)
    dt = np.abs(t[:, None] - t[None, :])
    iu = np.triu_indices(len(t), k=1)
    mask = dt[iu] <= t_max
    if not np.any(mask):
        raise ValueError("no snapshot pairs within t_max")
    dts = dt[iu][mask]
    ds = np.asarray(d_adp, dtype=np.float64)[iu][mask]
    denom = float(np.sum(dts * dts))
    if denom == 0.0:
        raise ValueError("all candidate pairs have zero time difference")
    return float(np.sum(ds * dts) / denom)


def fused_local_matrix(d_adp, t, alpha=None, t_max=None, sample_interval=None):
    """Entrywise time fusion of an ADP dissimilarity matrix."""
    if t_max is None:
        if sample_interval is None:
            raise ValueError("need t_max or sample_interval")
        t_max = 5.0 * sample_interval
    if alpha is None:
        alpha = calibrate_time_scale(d_adp, t, t_max)
    t = np.asarray(t, dtype=np.float64)
    dt = np.abs(t[:, None] - t[None, :])
    fused = fuse_time(np.asarray(d_adp, dtype=np.float64), dt, alpha, t_max)
    np.fill_diagonal(fused, 0.0)
    return fused.astype(np.float32), float(alpha)


def _knn_graph(d_local, k):
    L = d_local.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= L:
        raise ValueError(f"k={k} needs at least k+1={k + 1} points, got {L}")
    d = np.array(d_local, dtype=np.float64)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(L), k)
    cols = order.ravel()
    vals = d[rows, cols]
    graph = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(L, L)).tocsr()
    return graph.maximum(graph.T)


def geodesic(d_local, k=DEFAULT_KNN):
    """Shortest-path completion of a local dissimilarity matrix.

    Raises :class:`DisconnectedGraphError` naming the components when the
    k-NN graph does not connect.
    """
    d_local = np.asarray(d_local)
    if d_local.ndim != 2 or d_local.shape[0] != d_local.shape[1]:
        raise ValueError("dissimilarity matrix must be square")
    graph = _knn_graph(d_local, k)
    ncomp, labels = scipy.sparse.csgraph.connected_components(graph, directed=False)
    if ncomp > 1:
        sizes = np.bincount(labels)
        members = [np.flatnonzero(labels == c)[:5].tolist() for c in range(ncomp)]
        raise DisconnectedGraphError(
            f"k-NN graph (k={k}) has {ncomp} components; sizes={sizes.tolist()}, "
            f"first members per component={members}"
        )
    if accel.USE_NUMBA:
        from . import _kernels

        dist = _kernels.dijkstra_all(
            graph.indptr.astype(np.int64),
            graph.indices.astype(np.int64),
            graph.data.astype(np.float64),
            graph.shape[0],
        )
    else:
        dist = scipy.sparse.csgraph.dijkstra(graph, directed=False)
    # path sums can differ by ulps between the two directions
    dist = np.minimum(dist, dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist.astype(np.float32)


def build_dissimilarity(adps, t, k=DEFAULT_KNN, alpha=None, t_max=None, sample_interval=None):
    """ADP matrix -> time fusion -> geodesic completion; returns (D, alpha)."""
    d_adp = adp_dissimilarity_matrix(adps)
    fused, alpha = fused_local_matrix(
        d_adp, t, alpha=alpha, t_max=t_max, sample_interval=sample_interval
    )
    return geodesic(fused, k=k), alpha
