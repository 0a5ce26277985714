import numpy as np
import pytest

from ccpred.features import angle_delay_profile, csi_feature, feature_length


def random_csi(rng, B=2, M=3, N=16):
    return rng.standard_normal((B, M, N)) + 1j * rng.standard_normal((B, M, N))


def test_phase_invariance():
    rng = np.random.default_rng(0)
    H = random_csi(rng)
    f0 = csi_feature(H, 4)
    for theta in rng.uniform(0, 2 * np.pi, size=5):
        f1 = csi_feature(np.exp(1j * theta) * H, 4)
        assert np.linalg.norm(f1 - f0) <= 1e-12 * max(np.linalg.norm(f0), 1.0)


def test_zero_csi_zero_feature():
    f = csi_feature(np.zeros((2, 3, 8), dtype=complex), 4)
    assert f.shape == (feature_length(2, 3, 4),)
    assert np.all(f == 0)


def test_single_tap_hand_computed():
    # constant across subcarriers: IDFT puts everything in tap 0
    h = np.array([1.0 + 2.0j, -0.5 + 0.25j])
    N = 8
    H = np.tile(h[None, :, None], (1, 1, N))
    f = csi_feature(H, 3)
    expected_tap0 = np.array(
        [
            abs(h[0]) ** 2,
            (h[0] * np.conj(h[1])).real,
            (h[0] * np.conj(h[1])).imag,
            abs(h[1]) ** 2,
        ]
    )
    np.testing.assert_allclose(f[:4], expected_tap0, rtol=1e-12)
    np.testing.assert_allclose(f[4:], 0.0, atol=1e-12)


def test_feature_order_batched_matches_single():
    rng = np.random.default_rng(1)
    H = np.stack([random_csi(rng), random_csi(rng)])
    batch = csi_feature(H, 5)
    np.testing.assert_array_equal(batch[0], csi_feature(H[0], 5))
    np.testing.assert_array_equal(batch[1], csi_feature(H[1], 5))


def test_t_taps_too_large():
    with pytest.raises(ValueError, match="t_taps"):
        csi_feature(np.zeros((1, 2, 4), dtype=complex), 5)


def test_feature_lipschitz_on_bounded_inputs():
    rng = np.random.default_rng(2)
    H = random_csi(rng)
    scale = np.abs(H).max()
    f0 = csi_feature(H, 4)
    C = 10.0 * np.linalg.norm(H.ravel())
    for _ in range(10):
        dH = 1e-4 * scale * (rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape))
        f1 = csi_feature(H + dH, 4)
        assert np.linalg.norm(f1 - f0) <= C * np.linalg.norm(dH.ravel())


def test_adp_phase_invariant():
    rng = np.random.default_rng(3)
    H = random_csi(rng)
    a0 = angle_delay_profile(H, 8, 8)
    a1 = angle_delay_profile(np.exp(0.77j) * H, 8, 8)
    np.testing.assert_allclose(a0, a1, atol=1e-12)
    assert np.all(a0 >= 0)


def test_adp_zero_stays_zero():
    a = angle_delay_profile(np.zeros((2, 3, 8), dtype=complex), 8, 8)
    assert np.all(a == 0)


def test_adp_unit_norm_per_array():
    rng = np.random.default_rng(4)
    a = angle_delay_profile(random_csi(rng), 8, 8)
    norms = np.linalg.norm(a.reshape(a.shape[0], -1), axis=1)
    np.testing.assert_allclose(norms, 1.0, rtol=1e-12)


def test_adp_broadside_zero_delay_peaks_at_origin():
    # constant over antennas and subcarriers: all energy in beam 0, delay 0
    H = np.ones((1, 4, 16), dtype=complex)
    a = angle_delay_profile(H, 8, 8)
    peak = np.unravel_index(np.argmax(a[0]), a[0].shape)
    assert peak == (0, 0)


def test_adp_superposition_differs_from_single_paths():
    N = 32
    n = np.arange(N)
    h1 = np.exp(-2j * np.pi * 3 * n / N)[None, None, :] * np.ones((1, 4, 1))
    phase = np.exp(2j * np.pi * np.arange(4) * 0.3)
    h2 = np.exp(-2j * np.pi * 9 * n / N)[None, None, :] * phase[None, :, None]
    a1 = angle_delay_profile(h1, 8, 16)
    a2 = angle_delay_profile(h2, 8, 16)
    a12 = angle_delay_profile(h1 + h2, 8, 16)
    assert np.linalg.norm(a12 - a1) > 1e-3
    assert np.linalg.norm(a12 - a2) > 1e-3
