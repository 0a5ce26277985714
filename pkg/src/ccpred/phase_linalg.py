"""Sample autocorrelation matrices and rank-1 eigen-reconstruction.

``Z = h h^H`` is invariant to a global phase on ``h``; the closed-form
minimizer of ``|| Z - v v^H ||_F^2`` is ``sqrt(lambda_max) * v_max``, which is
how CSI is recovered from predicted autocorrelation matrices.  Only the
principal eigenpair is ever needed, so the implementation is a power iteration
(shifted by the Frobenius norm so it tracks the largest *signed* eigenvalue
even when a predicted matrix is slightly indefinite); the full eigensolver
appears only as an oracle in the test suite.
"""

import numpy as np

from . import accel

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000
_HERMITIAN_SLACK = 1e-6
_START_SEED = 0x5EED


class ConvergenceError(RuntimeError):
    pass


def _start_vector(m):
    rng = np.random.default_rng(_START_SEED)
    v = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return v / np.linalg.norm(v)


def sample_autocorr(h):
    """Rank-1 autocorrelation ``h h^H`` of one antenna vector."""
    h = np.asarray(h, dtype=np.complex128)
    return np.outer(h, h.conj())


def _check_hermitian(Z):
    fro = np.linalg.norm(Z)
    if fro > 0 and np.linalg.norm(Z - Z.conj().T) > _HERMITIAN_SLACK * fro:
        raise ValueError("matrix is not Hermitian within slack")
    return fro


def principal_eigpair(Z, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, shifted=False):
    """Largest eigenvalue and a unit eigenvector of a Hermitian PSD matrix.

    Power iteration from a fixed seeded start vector; stops when successive
    Rayleigh quotients agree to ``tol`` (relative).  ``Z = 0`` returns
    ``(0, e_1)`` by convention.  ``shifted=True`` adds a Frobenius-norm shift
    so slightly indefinite inputs still track the largest signed eigenvalue.
    """
    Z = np.asarray(Z, dtype=np.complex128)
    m = Z.shape[0]
    fro = _check_hermitian(Z)
    e1 = np.zeros(m, dtype=np.complex128)
    e1[0] = 1.0
    if fro == 0.0:
        return 0.0, e1
    shift = fro if shifted else 0.0
    v = _start_vector(m)
    q_prev = np.inf
    for _ in range(max_iter):
        y = Z @ v
        q = float(np.real(np.vdot(v, y)))
        if abs(q - q_prev) <= tol * abs(q):
            return q, v
        q_prev = q
        w = y + shift * v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, e1
        v = w / nw
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def reconstruct_csi(Z, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, shifted=False):
    """Antenna vector minimizing ``|| Z - h h^H ||_F^2`` (up to global phase)."""
    lam, v = principal_eigpair(Z, tol=tol, max_iter=max_iter, shifted=shifted)
    if lam <= 0.0:
        return np.zeros(Z.shape[0], dtype=np.complex128)
    return np.sqrt(lam) * v


def reconstruct_batch(Z, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, shifted=False):
    """``reconstruct_csi`` over a stack of Hermitian matrices (NB, M, M)."""
    Z = np.ascontiguousarray(Z, dtype=np.complex128)
    nb, m = Z.shape[0], Z.shape[1]
    if nb == 0:
        return np.zeros((0, m), dtype=np.complex128)
    v0 = _start_vector(m)
    if accel.USE_NUMBA:
        from . import _kernels

        out, bad = _kernels.reconstruct_batch(Z, v0, tol, max_iter, shifted)
        if bad:
            raise ConvergenceError(
                f"power iteration failed on {bad} of {nb} matrices after {max_iter} iterations"
            )
        return out
    return _reconstruct_batch_numpy(Z, v0, tol, max_iter, shifted)


def _reconstruct_batch_numpy(Z, v0, tol, max_iter, shifted=False):
    nb, m = Z.shape[0], Z.shape[1]
    out = np.zeros((nb, m), dtype=np.complex128)
    norms = np.linalg.norm(Z.reshape(nb, -1), axis=1)
    shift = norms if shifted else np.zeros(nb)
    active = np.flatnonzero(norms > 0)
    v = np.broadcast_to(v0, (len(active), m)).copy()
    q_prev = np.full(len(active), np.inf)
    for _ in range(max_iter):
        if len(active) == 0:
            return out
        Za = Z[active]
        y = np.matmul(Za, v[..., None])[..., 0]
        q = np.einsum("bi,bi->b", v.conj(), y).real
        done = np.abs(q - q_prev) <= tol * np.abs(q)
        if np.any(done):
            idx = active[done]
            out[idx] = np.sqrt(np.maximum(q[done], 0.0))[:, None] * v[done]
            keep = ~done
            active, v, q, y = active[keep], v[keep], q[keep], y[keep]
        q_prev = q
        w = y + shift[active][:, None] * v
        nw = np.linalg.norm(w, axis=1, keepdims=True)
        nw[nw == 0.0] = 1.0
        v = w / nw
    raise ConvergenceError(
        f"power iteration failed on {len(active)} matrices after {max_iter} iterations"
    )
