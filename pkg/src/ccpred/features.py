"""Global-phase-invariant CSI representations.

Both outputs only ever see ``h h^H`` style products or magnitudes, so
multiplying a snapshot by any unit-modulus scalar leaves them unchanged up to
floating rounding.
"""

import numpy as np

DEFAULT_T_TAPS = 16
DEFAULT_BEAM_BINS = 16
DEFAULT_DELAY_BINS = 32


def feature_length(num_arrays, num_antennas, t_taps):
    # per (array, tap): M real diagonal entries + 2 * M*(M-1)/2 off-diagonal parts
    return num_arrays * t_taps * num_antennas * num_antennas


def csi_feature(H, t_taps=DEFAULT_T_TAPS):
    """Real feature vector of spatial sample autocorrelations per delay tap.

    Per array: IDFT across subcarriers, keep the first ``t_taps`` delay taps,
    and for each tap emit the upper triangle of ``h h^H`` in fixed
    (array, tap, m1 <= m2) order: real part always, imaginary part only off
    the diagonal.
    """
    H = np.asarray(H)
    if H.ndim == 3:
        return _csi_feature_batch(H[None], t_taps)[0]
    return _csi_feature_batch(H, t_taps)


def _csi_feature_batch(H, t_taps):
    L, B, M, N = H.shape
    if t_taps > N:
        raise ValueError(f"t_taps={t_taps} exceeds num_subcarriers={N}")
    h_delay = np.fft.ifft(H.astype(np.complex128), axis=3)[..., :t_taps]  # (L,B,M,T)
    # R[l,b,t,m1,m2] = h[m1] * conj(h[m2])
    R = np.einsum("lbmt,lbnt->lbtmn", h_delay, h_delay.conj())
    iu, ju = np.triu_indices(M)
    upper = R[..., iu, ju]  # (L,B,T,P)
    parts = np.empty(upper.shape + (2,), dtype=np.float64)
    parts[..., 0] = upper.real
    parts[..., 1] = upper.imag
    # real part for every pair, imaginary part only off the diagonal
    p_idx, c_idx = [], []
    for k in range(len(iu)):
        p_idx.append(k)
        c_idx.append(0)
        if iu[k] != ju[k]:
            p_idx.append(k)
            c_idx.append(1)
    feat = parts[..., p_idx, c_idx]
    return feat.reshape(L, -1)


def angle_delay_profile(H, beam_bins=DEFAULT_BEAM_BINS, delay_bins=DEFAULT_DELAY_BINS):
    """Per-array beamspace/delay energy map, unit Frobenius norm per array.

    DFT across the antenna axis (zero-padded to ``beam_bins``), IDFT across
    subcarriers truncated to ``delay_bins``, magnitudes only.  All-zero arrays
    stay all-zero.
    """
    H = np.asarray(H)
    squeeze = H.ndim == 3
    if squeeze:
        H = H[None]
    L, B, M, N = H.shape
    if not np.isfinite(H).all():
        raise ValueError("non-finite CSI")
    delay = np.fft.ifft(H.astype(np.complex128), axis=3)[..., : min(delay_bins, N)]
    beams = np.fft.fft(delay, n=beam_bins, axis=2)
    adp = np.zeros((L, B, beam_bins, delay_bins), dtype=np.float64)
    adp[..., : delay.shape[3]] = np.abs(beams)
    norms = np.linalg.norm(adp.reshape(L, B, -1), axis=2)
    nz = norms > 0
    adp[nz] /= norms[nz][:, None, None]
    return adp[0] if squeeze else adp
