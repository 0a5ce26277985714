"""Multi-step Wiener predictor on sample-autocorrelation entries.

The random per-snapshot phase kills temporal correlation of the raw channel
coefficients, so prediction runs per entry of ``Z = h h^H`` instead: estimate
normalized temporal correlation coefficients on the training set, solve one
(diagonally loaded) Hermitian Toeplitz system per (array, m1, m2, subcarrier)
and horizon, apply the taps to the memory's autocorrelation entries, then
recover CSI from the principal eigenpair of the symmetrized prediction.
"""

import dataclasses
import struct

import numpy as np

from . import accel, phase_linalg

WNR_MAGIC = b"WNR1"
WNR_VERSION = 1
DEFAULT_LOADING = 1e-6


class WienerError(RuntimeError):
    pass


@dataclasses.dataclass(eq=False)
class CorrelationModel:
    r: np.ndarray  # (B, M, M, N', max_lag+1) complex128, r[..., 0] == 1
    subcarriers: np.ndarray  # indices into the full band
    sample_interval: float

    @property
    def max_lag(self):
        return self.r.shape[-1] - 1


@dataclasses.dataclass(eq=False)
class WienerFilter:
    v: np.ndarray  # (B, M, M, N', K) complex128
    memory: int
    horizon: int


def estimate_correlations(train, subcarriers, max_lag) -> CorrelationModel:
    """Normalized per-entry autocorrelation coefficients from a training set.

    ``train`` is a Dataset (or an (L, B, M, N_sub) array plus dt via kwargs of
    the callers); wide-sense stationarity over the window is assumed.
    """
    H_full, dt = train.H, train.sample_interval
    L = H_full.shape[0]
    if L <= max_lag:
        raise WienerError(f"need more than max_lag={max_lag} snapshots, got {L}")
    subcarriers = np.asarray(subcarriers, dtype=np.int64)
    H = np.ascontiguousarray(H_full[:, :, :, subcarriers].astype(np.complex128))
    if accel.USE_NUMBA:
        from . import _kernels

        R = _kernels.corr_lags(H, max_lag)
    else:
        R = _corr_lags_numpy(H, max_lag)
    R0 = R[..., 0].real
    if np.any(R0 <= 0):
        b, m1, m2, n = [idx[0] for idx in np.nonzero(R0 <= 0)]
        raise WienerError(
            f"zero autocorrelation power at array={b} m1={m1} m2={m2} subcarrier_slot={n}"
        )
    r = R / R0[..., None]
    r[..., 0] = 1.0
    return CorrelationModel(r, subcarriers, float(dt))


def _corr_lags_numpy(H, max_lag):
    L, B, M, N = H.shape
    R = np.empty((B, M, M, N, max_lag + 1), dtype=np.complex128)
    chunk = max(1, int(2e7 // (L * M * M)))
    for n0 in range(0, N, chunk):
        n1 = min(n0 + chunk, N)
        Z = np.einsum("lbmn,lbkn->lbmkn", H[..., n0:n1], H[..., n0:n1].conj())
        for lag in range(max_lag + 1):
            prod = Z[lag:] * Z[: L - lag].conj()
            R[:, :, :, n0:n1, lag] = prod.mean(axis=0)
    return R


def _toeplitz_hermitian(r_head):
    """Hermitian Toeplitz matrices from leading coefficients (..., K)."""
    K = r_head.shape[-1]
    i = np.arange(K)
    lag = i[None, :] - i[:, None]  # j - i
    take = np.abs(lag)
    T = r_head[..., take]
    return np.where(lag >= 0, T, T.conj())


def build_filter(model: CorrelationModel, memory, horizon, loading=DEFAULT_LOADING) -> WienerFilter:
    """Filter taps V = delta (Delta + eps I)^-1 per autocorrelation entry."""
    K, p = int(memory), int(horizon)
    if K < 1 or p < 0:
        raise WienerError("memory must be >= 1 and horizon >= 0")
    if p + K - 1 > model.max_lag:
        raise WienerError(
            f"horizon {p} + memory {K} needs lag {p + K - 1} > max_lag {model.max_lag}"
        )
    delta = model.r[..., p : p + K]
    Delta = _toeplitz_hermitian(model.r[..., :K])
    eps = loading * np.abs(model.r[..., 0])  # == loading, r0 is 1
    Delta = Delta + eps[..., None, None] * np.eye(K)
    # row-vector solve: V (Delta+epsI) = delta  <=>  (Delta+epsI)^T V^T = delta^T
    try:
        v = np.linalg.solve(np.swapaxes(Delta, -1, -2), delta[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise WienerError(f"Toeplitz solve failed even with loading: {exc}") from exc
    if not np.isfinite(v).all():
        raise WienerError("non-finite filter coefficients")
    return WienerFilter(v, K, p)


def predict(filt: WienerFilter, memory) -> np.ndarray:
    """Predicted CSI from the K most recent snapshots (most recent first).

    ``memory`` is (K, B, M, N') on the same subcarrier subset the filter was
    built for.  Returns (B, M, N').
    """
    mem = np.asarray(memory, dtype=np.complex128)
    if mem.ndim != 4 or mem.shape[0] != filt.memory:
        raise WienerError(f"memory must be ({filt.memory}, B, M, N'), got {mem.shape}")
    if mem.shape[1:] != filt.v.shape[:2] + (filt.v.shape[3],):
        raise WienerError(f"memory dims {mem.shape[1:]} do not match filter {filt.v.shape}")
    z_hat = predict_autocorr(filt, mem)
    from .predictors import reconstruct_tensor

    return reconstruct_tensor(z_hat, shifted=True)


def predict_autocorr(filt: WienerFilter, mem) -> np.ndarray:
    """Symmetrized predicted autocorrelation tensor (B, M, M, N')."""
    z_hat = np.einsum("bmknj,jbmn,jbkn->bmkn", filt.v, mem, mem.conj())
    return 0.5 * (z_hat + np.swapaxes(z_hat, 1, 2).conj())


def z_history(H_sub):
    """Autocorrelation entries of each snapshot, flattened to (L, B*M*M*N')."""
    H = np.asarray(H_sub, dtype=np.complex128)
    L, B, M, N = H.shape
    out = np.empty((L, B * M * M * N), dtype=np.complex128)
    chunk = max(1, int(4e7 // (B * M * M * N)))
    for l0 in range(0, L, chunk):
        l1 = min(l0 + chunk, L)
        Z = np.einsum("lbmn,lbkn->lbmkn", H[l0:l1], H[l0:l1].conj())
        out[l0:l1] = Z.reshape(l1 - l0, -1)
    return out


def apply_filter_batch(z_hist, filt: WienerFilter, heads):
    """Predicted flattened autocorrelation rows for many memory heads.

    ``z_hist`` comes from :func:`z_history`; ``heads`` are indices of the most
    recent memory snapshot (head - K + 1 must be valid).
    """
    heads = np.asarray(heads, dtype=np.int64)
    K = filt.memory
    if np.any(heads < K - 1) or np.any(heads >= z_hist.shape[0]):
        raise WienerError("memory window out of range")
    v_t = np.ascontiguousarray(filt.v.reshape(-1, K).T)  # (K, E)
    if v_t.shape[1] != z_hist.shape[1]:
        raise WienerError("filter/history entry count mismatch")
    if accel.USE_NUMBA:
        from . import _kernels

        return _kernels.wiener_apply(z_hist, v_t, heads)
    out = np.zeros((len(heads), z_hist.shape[1]), dtype=np.complex128)
    for k in range(K):
        out += v_t[k][None, :] * z_hist[heads - k]
    return out


def save_correlations(model: CorrelationModel, path):
    """WNR1 container: correlation model; filters are rebuilt on load."""
    B, M, _, N, lags = model.r.shape
    with open(path, "wb") as fh:
        fh.write(WNR_MAGIC)
        fh.write(struct.pack("<BIIIIId", WNR_VERSION, B, M, N, lags - 1, len(model.subcarriers), model.sample_interval))
        fh.write(model.subcarriers.astype("<u4").tobytes())
        fh.write(model.r.astype("<c16").tobytes())


def load_correlations(path) -> CorrelationModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != WNR_MAGIC:
        raise WienerError(f"bad magic {data[:4]!r}")
    version, B, M, N, max_lag, n_sub, dt = struct.unpack_from("<BIIIIId", data, 4)
    if version != WNR_VERSION:
        raise WienerError(f"unsupported WNR version {version}")
    off = 4 + struct.calcsize("<BIIIIId")
    subc = np.frombuffer(data, dtype="<u4", count=n_sub, offset=off).astype(np.int64)
    off += 4 * n_sub
    expect = B * M * M * N * (max_lag + 1)
    r = np.frombuffer(data, dtype="<c16", count=expect, offset=off)
    if off + expect * 16 != len(data):
        raise WienerError("WNR1 payload size mismatch")
    return CorrelationModel(
        r.reshape(B, M, M, N, max_lag + 1).astype(np.complex128), subc, dt
    )
