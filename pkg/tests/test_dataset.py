import io

import numpy as np
import pytest
import scipy.stats

from ccpred import dataset as dmod
from ccpred.dataset import (
    ArrayPose,
    CsidDimensionError,
    CsidMagicError,
    CsidTruncatedError,
    Scatterer,
    ScenarioConfig,
    ScenarioError,
    Trajectory,
    generate_scenario,
    geometric_channel,
    read_dataset,
    subcarrier_frequencies,
    write_dataset,
)

C0 = 299_792_458.0


def small_config(**overrides):
    cfg = dict(
        num_arrays=2,
        antennas_per_array=(1, 2),
        num_subcarriers=8,
        bandwidth=20e6,
        carrier_frequency=1e9,
        array_poses=(ArrayPose((0.0, 0.0), 0.0), ArrayPose((10.0, 0.0), np.pi)),
        scatterers=(Scatterer((3.0, 4.0), 1.0),),
        trajectory=Trajectory(((2.0, 2.0), (6.0, 5.0)), 0.5),
        sample_interval=0.25,
        noise_std=1e-3,
        seed=7,
    )
    cfg.update(overrides)
    return ScenarioConfig(**cfg)


def test_same_seed_same_bytes():
    cfg = small_config()
    d1 = generate_scenario(cfg)
    d2 = generate_scenario(cfg)
    assert np.array_equal(d1.H, d2.H)
    assert np.array_equal(d1.t, d2.t)
    assert np.array_equal(d1.x, d2.x)
    assert d1 == d2


def test_different_seed_differs():
    d1 = generate_scenario(small_config(seed=1))
    d2 = generate_scenario(small_config(seed=2))
    assert not np.array_equal(d1.H, d2.H)


def test_single_los_path_matches_hand_formula():
    # one antenna, one LoS path, no scatterers: amplitude 1/d, phase -2 pi f d / c
    cfg = small_config(
        num_arrays=1,
        antennas_per_array=(1, 1),
        array_poses=(ArrayPose((0.0, 0.0), 0.3),),
        scatterers=(),
        num_subcarriers=4,
    )
    x = np.array([3.0, 4.0])  # d = 5 exactly
    H = geometric_channel(cfg, x[None])[0]
    d = 5.0
    freqs = subcarrier_frequencies(cfg.carrier_frequency, cfg.bandwidth, 4)
    expected = (1.0 / d) * np.exp(-2j * np.pi * freqs * d / C0)
    np.testing.assert_allclose(H[0, 0], expected, rtol=1e-12)
    np.testing.assert_allclose(np.abs(H[0, 0]), 1.0 / d, rtol=1e-12)


def test_static_noiseless_equal_up_to_phase():
    cfg = small_config(
        trajectory=Trajectory(((4.0, 3.0),), 0.0),
        noise_std=0.0,
        num_snapshots=16,
    )
    ds = generate_scenario(cfg)
    v0 = ds.H[0].ravel()
    for l in range(1, len(ds)):
        vl = ds.H[l].ravel()
        corr = np.abs(np.vdot(v0, vl))
        assert corr == pytest.approx(np.linalg.norm(v0) * np.linalg.norm(vl), rel=1e-6)


def test_phase_rotation_preserves_magnitudes():
    cfg = small_config(noise_std=0.0)
    ds = generate_scenario(cfg)
    pos = dmod.sample_trajectory(cfg.trajectory, cfg.sample_interval)
    H_geo = geometric_channel(cfg, pos).astype(np.complex64)
    np.testing.assert_allclose(np.abs(ds.H), np.abs(H_geo), rtol=2e-5)


def test_phase_marginal_uniform():
    cfg = small_config(
        num_arrays=1,
        array_poses=(ArrayPose((0.0, 0.0), 0.0),),
        scatterers=(),
        num_subcarriers=1,
        trajectory=Trajectory(((4.0, 3.0),), 0.0),
        noise_std=0.0,
        num_snapshots=10_000,
        seed=11,
    )
    ds = generate_scenario(cfg)
    ref = geometric_channel(cfg, np.array([[4.0, 3.0]]))[0]
    theta = np.angle(ds.H[:, 0, 0, 0] / ref[0, 0, 0]) % (2 * np.pi)
    counts, _ = np.histogram(theta, bins=16, range=(0.0, 2 * np.pi))
    expected = len(ds) / 16
    stat = np.sum((counts - expected) ** 2 / expected)
    assert stat < scipy.stats.chi2.ppf(0.999, df=15)


def test_timestamps_exactly_spaced_for_dyadic_dt():
    ds = generate_scenario(small_config(sample_interval=0.25))
    assert np.all(np.diff(ds.t) == 0.25)


def test_timestamps_near_exact_for_paper_dt():
    # 0.192 s is not dyadic; spacing is exact to one ulp of the largest timestamp
    ds = generate_scenario(small_config(sample_interval=0.192))
    diffs = np.diff(ds.t)
    assert np.all(np.abs(diffs - 0.192) <= np.spacing(ds.t[-1]))


def test_trajectory_through_array_rejected():
    cfg = small_config(trajectory=Trajectory(((0.0, 0.0), (1.0, 1.0)), 0.5))
    with pytest.raises(ScenarioError, match="array"):
        generate_scenario(cfg)


def test_scatterer_on_array_rejected():
    cfg = small_config(scatterers=(Scatterer((10.0, 0.0), 1.0),))
    with pytest.raises(ScenarioError, match="scatterer"):
        generate_scenario(cfg)


def test_config_invariants():
    with pytest.raises(ScenarioError):
        small_config(num_arrays=0).validate()
    with pytest.raises(ScenarioError):
        small_config(antennas_per_array=(1, 1)).validate()
    with pytest.raises(ScenarioError):
        small_config(sample_interval=0.0).validate()
    with pytest.raises(ScenarioError):
        small_config(trajectory=Trajectory(((1.0, 1.0), (2.0, 2.0)), -1.0)).validate()


def test_roundtrip_two_snapshots():
    ds = generate_scenario(small_config(num_snapshots=2))
    buf = io.BytesIO()
    write_dataset(ds, buf)
    buf.seek(0)
    assert read_dataset(buf) == ds


def test_roundtrip_without_ground_truth():
    ds = generate_scenario(small_config(num_snapshots=3))
    x = ds.x.copy()
    x[:] = np.nan
    stripped = dmod.Dataset(
        ds.num_arrays, ds.num_antennas, ds.num_subcarriers, ds.sample_interval,
        ds.H.copy(), x, ds.t.copy(),
    )
    buf = io.BytesIO()
    write_dataset(stripped, buf)
    buf.seek(0)
    assert read_dataset(buf) == stripped


def test_bad_magic():
    ds = generate_scenario(small_config(num_snapshots=2))
    buf = io.BytesIO()
    write_dataset(ds, buf)
    raw = bytearray(buf.getvalue())
    raw[:4] = b"NOPE"
    with pytest.raises(CsidMagicError):
        read_dataset(io.BytesIO(bytes(raw)))


def test_truncated_mid_snapshot():
    ds = generate_scenario(small_config(num_snapshots=2))
    buf = io.BytesIO()
    write_dataset(ds, buf)
    raw = buf.getvalue()[:-7]
    with pytest.raises(CsidTruncatedError):
        read_dataset(io.BytesIO(raw))


def test_header_payload_dimension_mismatch():
    # header keeps L but a whole record is missing: dimension error, not truncation
    ds = generate_scenario(small_config(num_snapshots=3))
    buf = io.BytesIO()
    write_dataset(ds, buf)
    raw = buf.getvalue()
    rec_size = 24 + ds.num_arrays * ds.num_antennas * ds.num_subcarriers * 8
    with pytest.raises(CsidDimensionError):
        read_dataset(io.BytesIO(raw[:-rec_size]))


def test_snapshots_view():
    ds = generate_scenario(small_config(num_snapshots=3))
    snaps = ds.snapshots
    assert len(snaps) == 3
    assert snaps[1].t == ds.t[1]
    np.testing.assert_array_equal(snaps[2].H, ds.H[2])
