"""Future chart positions by linear extrapolation of the recent track.

A least-squares line over all buffered points (not just the endpoints) damps
charting jitter; sample spacing is uniform by dataset construction, so the
fit runs over the sample index.
"""

import collections

import numpy as np


class LatentTrack:
    """Ring buffer of (t, z) chart positions, capacity K, strictly increasing t."""

    def __init__(self, capacity):
        if capacity < 2:
            raise ValueError("capacity must be >= 2")
        self.capacity = capacity
        self._buf = collections.deque(maxlen=capacity)

    def push(self, t, z):
        if self._buf and t <= self._buf[-1][0]:
            raise ValueError(f"timestamp {t} not after {self._buf[-1][0]}")
        self._buf.append((float(t), np.asarray(z, dtype=np.float64)))

    def __len__(self):
        return len(self._buf)

    def positions(self):
        return np.array([z for _, z in self._buf])


def extrapolation_weights(window, p):
    """Weights w with prediction = w . window (window oldest-first).

    Least-squares line through (i, z_i), i = 0..window-1, evaluated at index
    window-1+p; linearity of the fit makes the prediction a fixed linear
    functional of the window.
    """
    i = np.arange(window, dtype=np.float64)
    ibar = i.mean()
    sxx = np.sum((i - ibar) ** 2)
    target = window - 1.0 + p
    return 1.0 / window + (i - ibar) * (target - ibar) / sxx


def extrapolate(track, p, dt=None):
    """Chart position p steps past the newest buffered sample."""
    if isinstance(track, LatentTrack):
        z = track.positions()
    else:
        z = np.asarray(track, dtype=np.float64)
    if z.ndim != 2 or len(z) < 2:
        raise ValueError("need at least 2 buffered positions")
    w = extrapolation_weights(len(z), p)
    return w @ z


def extrapolate_batch(positions, window, p, heads):
    """Extrapolations for many memory windows of one position sequence.

    ``heads[s]`` is the index of the newest sample of window ``s``; the window
    covers ``positions[head-window+1 .. head]``.
    """
    positions = np.asarray(positions, dtype=np.float64)
    heads = np.asarray(heads)
    if np.any(heads < window - 1) or np.any(heads >= len(positions)):
        raise ValueError("window head out of range")
    w = extrapolation_weights(window, p)
    sw = np.lib.stride_tricks.sliding_window_view(positions, window, axis=0)  # (L-K+1, 2, K)
    return sw[heads - window + 1] @ w
