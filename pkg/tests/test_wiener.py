import numpy as np
import pytest

from ccpred import dataset as dmod
from ccpred import wiener
from ccpred.dataset import ArrayPose, ScenarioConfig, Trajectory, generate_scenario
from ccpred.phase_linalg import sample_autocorr


def make_dataset(H, dt=0.25):
    H = np.asarray(H, dtype=np.complex64)
    L = H.shape[0]
    x = np.full((L, 2), np.nan)
    t = np.arange(L) * dt
    return dmod.Dataset(H.shape[1], H.shape[2], H.shape[3], dt, H, x, t)


def static_dataset(L=64, seed=0):
    cfg = ScenarioConfig(
        num_arrays=1,
        antennas_per_array=(1, 2),
        num_subcarriers=4,
        bandwidth=20e6,
        carrier_frequency=1e9,
        array_poses=(ArrayPose((0.0, 0.0), 0.0),),
        scatterers=(),
        trajectory=Trajectory(((3.0, 4.0),), 0.0),
        sample_interval=0.25,
        noise_std=0.0,
        seed=seed,
        num_snapshots=L,
    )
    return generate_scenario(cfg)


def test_static_channel_unit_correlations():
    ds = static_dataset()
    corr = wiener.estimate_correlations(ds, np.arange(4), max_lag=6)
    np.testing.assert_allclose(corr.r, 1.0, atol=1e-5)
    assert np.all(corr.r[..., 0] == 1.0)


def test_iid_channel_correlations_vanish():
    rng = np.random.default_rng(1)
    L = 10_000
    H = (rng.standard_normal((L, 1, 2, 1)) + 1j * rng.standard_normal((L, 1, 2, 1))) / np.sqrt(2)
    corr = wiener.estimate_correlations(make_dataset(H), np.arange(1), max_lag=4)
    # zero-mean entries (m1 != m2) decorrelate; |h|^2 diagonals keep their DC term
    assert np.all(np.abs(corr.r[0, 0, 1, :, 1:]) < 0.05)
    assert np.all(np.abs(corr.r[0, 1, 0, :, 1:]) < 0.05)


def test_ar1_correlations_match_pole():
    rng = np.random.default_rng(2)
    L, rho = 20_000, 0.9
    g = np.empty(L, dtype=np.complex128)
    g[0] = rng.standard_normal() + 1j * rng.standard_normal()
    w = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2)
    for l in range(1, L):
        g[l] = rho * g[l - 1] + np.sqrt(1 - rho**2) * w[l]
    # Z entry (0, 1) becomes exactly g_l when the second antenna is constant 1
    H = np.ones((L, 1, 2, 1), dtype=np.complex128)
    H[:, 0, 0, 0] = g
    corr = wiener.estimate_correlations(make_dataset(H), np.arange(1), max_lag=8)
    lags = np.arange(9)
    np.testing.assert_allclose(corr.r[0, 0, 1, 0, :], rho**lags, atol=0.05)


def test_dead_antenna_pair_raises():
    H = np.zeros((32, 1, 2, 2), dtype=np.complex128)
    H[:, 0, 1, :] = 1.0  # antenna 0 completely dead
    with pytest.raises(wiener.WienerError, match="m1=0"):
        wiener.estimate_correlations(make_dataset(H), np.arange(2), max_lag=2)


def test_numpy_and_numba_corr_paths_agree():
    pytest.importorskip("numba")
    from ccpred import _kernels

    rng = np.random.default_rng(3)
    H = rng.standard_normal((200, 2, 2, 3)) + 1j * rng.standard_normal((200, 2, 2, 3))
    nb = _kernels.corr_lags(np.ascontiguousarray(H), 5)
    np_ = wiener._corr_lags_numpy(H, 5)
    np.testing.assert_allclose(nb, np_, rtol=1e-12, atol=1e-12)


def unit_correlation_model(max_lag=8):
    r = np.ones((1, 2, 2, 1, max_lag + 1), dtype=np.complex128)
    return wiener.CorrelationModel(r, np.arange(1), 0.25)


def test_build_filter_k1_closed_form():
    rng = np.random.default_rng(4)
    r = rng.standard_normal((1, 2, 2, 1, 6)) + 1j * rng.standard_normal((1, 2, 2, 1, 6))
    r[..., 0] = 1.0
    model = wiener.CorrelationModel(r, np.arange(1), 0.25)
    filt = wiener.build_filter(model, memory=1, horizon=3)
    np.testing.assert_allclose(filt.v[..., 0], r[..., 3], rtol=1e-5)


def test_build_filter_static_k2():
    filt = wiener.build_filter(unit_correlation_model(), memory=2, horizon=1)
    np.testing.assert_allclose(filt.v, 0.5, atol=1e-3)


def test_build_filter_matches_dense_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        # correlations of an actual stationary sequence are always consistent
        x = rng.standard_normal(400) + 1j * rng.standard_normal(400)
        kernel = np.exp(-np.arange(8) / rng.uniform(1.0, 4.0))
        seq = np.convolve(x, kernel)[: 300]
        lags = np.arange(10)
        R = np.array([np.mean(seq[l:] * seq[: len(seq) - l].conj()) for l in lags])
        r = (R / R[0]).reshape(1, 1, 1, 1, -1)
        r[..., 0] = 1.0
        model = wiener.CorrelationModel(r, np.arange(1), 1.0)
        K, p = 5, 2
        filt = wiener.build_filter(model, K, p)
        # independent construction: explicit loops + matrix inverse
        rr = r[0, 0, 0, 0]
        Delta = np.empty((K, K), dtype=np.complex128)
        for i in range(K):
            for j in range(K):
                Delta[i, j] = rr[j - i] if j >= i else np.conj(rr[i - j])
        Delta += wiener.DEFAULT_LOADING * np.eye(K)
        delta = rr[p : p + K]
        v_oracle = delta @ np.linalg.inv(Delta)
        np.testing.assert_allclose(filt.v[0, 0, 0, 0], v_oracle, rtol=1e-8, atol=1e-10)


def test_build_filter_lag_bound():
    with pytest.raises(wiener.WienerError, match="max_lag"):
        wiener.build_filter(unit_correlation_model(max_lag=4), memory=4, horizon=2)


def test_predict_static_all_information():
    ds = static_dataset(L=40)
    sub = np.arange(4)
    corr = wiener.estimate_correlations(ds, sub, max_lag=10)
    filt = wiener.build_filter(corr, memory=4, horizon=2)
    mem = ds.H[10:14][::-1].astype(np.complex128)  # most recent first: l=13 down to 10
    mem = np.ascontiguousarray(mem[:, :, :, sub])
    h_hat = wiener.predict(filt, mem)
    h_ref = mem[0]
    for b in range(h_ref.shape[0]):
        for n in range(h_ref.shape[2]):
            zh = sample_autocorr(h_hat[b, :, n])
            zr = sample_autocorr(h_ref[b, :, n])
            np.testing.assert_allclose(zh, zr, rtol=1e-5, atol=1e-8 * np.abs(zr).max())


def test_predict_phase_rotation_invariance():
    rng = np.random.default_rng(6)
    ds = static_dataset(L=40)
    sub = np.arange(4)
    corr = wiener.estimate_correlations(ds, sub, max_lag=10)
    filt = wiener.build_filter(corr, memory=5, horizon=1)
    mem = np.ascontiguousarray(ds.H[20:25][::-1, :, :, sub].astype(np.complex128))
    z0 = wiener.predict_autocorr(filt, mem)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, size=5))
    z1 = wiener.predict_autocorr(filt, mem * phases[:, None, None, None])
    assert np.linalg.norm(z1 - z0) <= 1e-12 * np.linalg.norm(z0)


def test_predict_k1_identity_filter():
    rng = np.random.default_rng(7)
    mem = rng.standard_normal((1, 2, 3, 2)) + 1j * rng.standard_normal((1, 2, 3, 2))
    v = np.ones((2, 3, 3, 2, 1), dtype=np.complex128)
    filt = wiener.WienerFilter(v, 1, 0)
    z = wiener.predict_autocorr(filt, mem)
    for b in range(2):
        for n in range(2):
            np.testing.assert_allclose(
                z[b, :, :, n], sample_autocorr(mem[0, b, :, n]), rtol=1e-12
            )


def test_apply_filter_batch_matches_predict():
    rng = np.random.default_rng(8)
    L, B, M, N = 30, 2, 2, 3
    H = rng.standard_normal((L, B, M, N)) + 1j * rng.standard_normal((L, B, M, N))
    r = np.ones((B, M, M, N, 12), dtype=np.complex128) * 0.5
    r[..., 0] = 1.0
    model = wiener.CorrelationModel(r, np.arange(N), 1.0)
    filt = wiener.build_filter(model, memory=4, horizon=3)
    z_hist = wiener.z_history(H)
    heads = np.array([5, 11, 20])
    batch = wiener.apply_filter_batch(z_hist, filt, heads)
    for row, head in zip(batch, heads):
        mem = H[head - 3 : head + 1][::-1]
        direct = np.einsum("bmknj,jbmn,jbkn->bmkn", filt.v, mem, mem.conj())
        np.testing.assert_allclose(row.reshape(B, M, M, N), direct, rtol=1e-10, atol=1e-12)


def test_apply_filter_numpy_numba_agree():
    pytest.importorskip("numba")
    from ccpred import _kernels

    rng = np.random.default_rng(9)
    z_hist = rng.standard_normal((40, 16)) + 1j * rng.standard_normal((40, 16))
    v_t = rng.standard_normal((6, 16)) + 1j * rng.standard_normal((6, 16))
    heads = np.arange(5, 39, dtype=np.int64)
    nb = _kernels.wiener_apply(z_hist, v_t, heads)
    np_out = np.zeros_like(nb)
    for k in range(6):
        np_out += v_t[k][None, :] * z_hist[heads - k]
    np.testing.assert_allclose(nb, np_out, rtol=1e-12, atol=1e-12)


def test_correlations_roundtrip(tmp_path):
    ds = static_dataset(L=30)
    corr = wiener.estimate_correlations(ds, np.arange(2), max_lag=5)
    path = tmp_path / "model.wnr"
    wiener.save_correlations(corr, path)
    loaded = wiener.load_correlations(path)
    np.testing.assert_array_equal(loaded.r, corr.r)
    np.testing.assert_array_equal(loaded.subcarriers, corr.subcarriers)
    assert loaded.sample_interval == corr.sample_interval


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.wnr"
    path.write_bytes(b"JUNK" + b"\x00" * 64)
    with pytest.raises(wiener.WienerError, match="magic"):
        wiener.load_correlations(path)
