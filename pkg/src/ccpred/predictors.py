"""The three CSI predictors: outdated baseline, CC-interp, CC-NN.

CC-interp locates the predicted chart position in the training Delaunay mesh,
averages the vertex autocorrelation matrices with barycentric weights (times
the conventional 1/3, harmless because the beamformer is scale invariant) and
reconstructs CSI from the principal eigenpair.  Outside the mesh the sample is
flagged; the caller either excludes it or falls back to CC-NN.
"""

import dataclasses

import numpy as np

from . import geometry, phase_linalg


@dataclasses.dataclass
class Prediction:
    H_hat: np.ndarray | None
    method: str
    z_hat: np.ndarray | None = None
    in_triangulation: bool = True


def outdated(memory) -> Prediction:
    """Most recent CSI, unchanged (memory is most-recent-first)."""
    memory = np.asarray(memory)
    if memory.size == 0:
        raise ValueError("empty memory")
    return Prediction(memory[0], "outdated")


def interpolate_autocorr(c, vertex_csi):
    """(1/3) sum_i c_i h_i h_i^H per (array, subcarrier).

    vertex_csi is (3, B, M, N); returns (B, M, M, N) Hermitian.
    """
    h = np.asarray(vertex_csi, dtype=np.complex128)
    c = np.asarray(c, dtype=np.float64)
    return np.einsum("i,ibmn,ibkn->bmkn", c / 3.0, h, h.conj())


def reconstruct_tensor(z_hat_tensor, shifted=False):
    """Per-(array, subcarrier) rank-1 reconstruction of (B, M, M, N) -> (B, M, N)."""
    B, M, _, N = z_hat_tensor.shape
    batch = np.ascontiguousarray(np.moveaxis(z_hat_tensor, 3, 1)).reshape(B * N, M, M)
    h = phase_linalg.reconstruct_batch(batch, shifted=shifted)
    return np.moveaxis(h.reshape(B, N, M), 2, 1)


def cc_interp(z_hat, tri: geometry.Triangulation, train_csi) -> Prediction:
    """Barycentric CSI interpolation at a predicted chart position.

    ``train_csi`` is (L, B, M, N) indexed by dataset row; the triangulation
    must come from the chart positions of the same training set.
    """
    t = tri.locate(z_hat)
    if t == geometry.OUTSIDE:
        return Prediction(None, "cc_interp", np.asarray(z_hat), False)
    c = tri.barycentric_of(t, z_hat)
    rows = tri.dataset_indices[tri.triangles[t]]
    z_tensor = interpolate_autocorr(c, np.asarray(train_csi)[rows])
    return Prediction(reconstruct_tensor(z_tensor), "cc_interp", np.asarray(z_hat), True)


def cc_nn(z_hat, train_chart, train_csi) -> Prediction:
    """CSI of the nearest training chart position (ties to the lowest index)."""
    train_chart = np.asarray(train_chart, dtype=np.float64)
    if len(train_chart) == 0:
        raise ValueError("empty training chart")
    d2 = np.sum((train_chart - np.asarray(z_hat, dtype=np.float64)) ** 2, axis=1)
    i_nn = int(np.argmin(d2))
    return Prediction(np.asarray(train_csi)[i_nn], "cc_nn", np.asarray(z_hat))
