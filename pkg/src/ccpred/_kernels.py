"""Numba hot kernels.

Imported only when :mod:`ccpred.accel` selects the numba path; every function
here has a vectorized numpy/scipy twin next to its call site.  Kernels only
parallelize over independent outputs so results do not depend on scheduling.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _heap_push(keys, nodes, size, key, node):
    i = size
    keys[i] = key
    nodes[i] = node
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] <= keys[i]:
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        nodes[parent], nodes[i] = nodes[i], nodes[parent]
        i = parent
    return size + 1


@njit(cache=True)
def _heap_pop(keys, nodes, size):
    key = keys[0]
    node = nodes[0]
    size -= 1
    keys[0] = keys[size]
    nodes[0] = nodes[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        right = left + 1
        child = left
        if right < size and keys[right] < keys[left]:
            child = right
        if keys[i] <= keys[child]:
            break
        keys[i], keys[child] = keys[child], keys[i]
        nodes[i], nodes[child] = nodes[child], nodes[i]
        i = child
    return key, node, size


@njit(cache=True, parallel=True)
def dijkstra_all(indptr, indices, weights, n):
    """All-pairs shortest paths on a CSR graph, one Dijkstra per source."""
    out = np.empty((n, n), dtype=np.float64)
    cap = indices.shape[0] + 1
    for src in prange(n):
        dist = np.full(n, np.inf)
        final = np.zeros(n, dtype=np.bool_)
        hkeys = np.empty(cap, dtype=np.float64)
        hnodes = np.empty(cap, dtype=np.int64)
        size = _heap_push(hkeys, hnodes, 0, 0.0, src)
        dist[src] = 0.0
        while size > 0:
            d, u, size = _heap_pop(hkeys, hnodes, size)
            if final[u]:
                continue
            final[u] = True
            for ptr in range(indptr[u], indptr[u + 1]):
                v = indices[ptr]
                nd = d + weights[ptr]
                if not final[v] and nd < dist[v]:
                    dist[v] = nd
                    size = _heap_push(hkeys, hnodes, size, nd, v)
        out[src] = dist
    return out


@njit(cache=True, parallel=True)
def corr_lags(H, max_lag):
    """Per-entry temporal autocorrelation of Z = H_{m1} conj(H_{m2}).

    H is (L, B, M, N) complex128; returns (B, M, M, N, max_lag+1) averages
    R(lag) = mean_l Z^(l+lag) conj(Z^(l)).
    """
    L, B, M, N = H.shape
    R = np.empty((B, M, M, N, max_lag + 1), dtype=np.complex128)
    E = B * M * M * N
    for e in prange(E):
        n = e % N
        tmp = e // N
        m2 = tmp % M
        tmp //= M
        m1 = tmp % M
        b = tmp // M
        z = np.empty(L, dtype=np.complex128)
        for l in range(L):
            z[l] = H[l, b, m1, n] * np.conj(H[l, b, m2, n])
        for lag in range(max_lag + 1):
            acc = 0.0 + 0.0j
            for l in range(L - lag):
                acc += z[l + lag] * np.conj(z[l])
            R[b, m1, m2, n, lag] = acc / (L - lag)
    return R


@njit(cache=True, parallel=True)
def wiener_apply(z_hist, v_t, l_idx):
    """Predicted autocorrelation entries for each memory head index.

    z_hist is (L', E), v_t is (K, E) filter taps (tap k multiplies the sample
    k steps back), l_idx the head snapshot index per output row.
    """
    K, E = v_t.shape
    n = l_idx.shape[0]
    out = np.zeros((n, E), dtype=np.complex128)
    for i in prange(n):
        l = l_idx[i]
        for k in range(K):
            row = z_hist[l - k]
            vk = v_t[k]
            for e in range(E):
                out[i, e] += vk[e] * row[e]
    return out


@njit(cache=True, parallel=True)
def reconstruct_batch(Z, v0, tol, max_iter, shifted):
    """Power iteration over a stack of Hermitian matrices (NB, M, M).

    ``shifted`` adds a Frobenius-norm diagonal shift (for possibly indefinite
    symmetrized predictions); PSD callers leave it off for fast convergence.
    """
    nb, m = Z.shape[0], Z.shape[1]
    out = np.zeros((nb, m), dtype=np.complex128)
    failed = 0
    for i in prange(nb):
        fro = 0.0
        for a in range(m):
            for c in range(m):
                re = Z[i, a, c].real
                im = Z[i, a, c].imag
                fro += re * re + im * im
        fro = np.sqrt(fro)
        if fro == 0.0:
            continue
        shift = fro if shifted else 0.0
        v = v0.copy()
        y = np.empty(m, dtype=np.complex128)
        q_prev = np.inf
        ok = False
        q = 0.0
        for _ in range(max_iter):
            for a in range(m):
                acc = 0.0 + 0.0j
                for c in range(m):
                    acc += Z[i, a, c] * v[c]
                y[a] = acc
            q = 0.0
            for a in range(m):
                q += (np.conj(v[a]) * y[a]).real
            if abs(q - q_prev) <= tol * abs(q):
                ok = True
                break
            q_prev = q
            nw = 0.0
            for a in range(m):
                y[a] = y[a] + shift * v[a]
                nw += y[a].real * y[a].real + y[a].imag * y[a].imag
            nw = np.sqrt(nw)
            if nw == 0.0:
                break
            for a in range(m):
                v[a] = y[a] / nw
        if ok:
            s = np.sqrt(q) if q > 0.0 else 0.0
            for a in range(m):
                out[i, a] = s * v[a]
        else:
            failed += 1
    return out, failed
