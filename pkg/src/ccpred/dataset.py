"""Synthetic distributed massive MIMO scenarios and the CSID dataset container.

The generator produces frequency-domain CSI tensors ``H[b, m, n]`` for a
single user moving through a 2-D arena observed by ``B`` distributed planar
arrays.  The channel is a geometric multipath model: line of sight plus
single-bounce scatterers, far-field steering across each array, per-path
amplitude ``gain / path_length``.  Every snapshot is multiplied by a global
random unit-modulus phase (the arrays are mutually synchronized, the user is
not), then complex Gaussian noise is added.

Subcarrier ``n`` sits at ``f_n = carrier - bandwidth/2 + n * bandwidth / n_sub``.
"""

import dataclasses
import io
import json
import struct

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

CSID_MAGIC = b"CSID"
CSID_VERSION = 1
_HEADER = struct.Struct("<4sBIIIQd")

# positions closer than this to an array (or to a scatterer) have no defined
# steering direction and are rejected
MIN_PATH_DISTANCE = 1e-6


class ScenarioError(ValueError):
    """Invalid scenario configuration or degenerate geometry."""


class CsidError(ValueError):
    """Malformed CSID container."""


class CsidMagicError(CsidError):
    pass


class CsidTruncatedError(CsidError):
    pass


class CsidDimensionError(CsidError):
    pass


@dataclasses.dataclass(frozen=True)
class ArrayPose:
    position: tuple
    orientation: float


@dataclasses.dataclass(frozen=True)
class Scatterer:
    position: tuple
    gain: float


@dataclasses.dataclass(frozen=True)
class Trajectory:
    waypoints: tuple
    speed: float


@dataclasses.dataclass(frozen=True)
class ScenarioConfig:
    num_arrays: int
    antennas_per_array: tuple  # (rows, cols) of the planar array
    num_subcarriers: int
    bandwidth: float
    carrier_frequency: float
    array_poses: tuple
    scatterers: tuple
    trajectory: Trajectory
    sample_interval: float
    noise_std: float
    seed: int
    num_snapshots: int | None = None  # cap / required when speed == 0

    @property
    def num_antennas(self):
        rows, cols = self.antennas_per_array
        return rows * cols

    def validate(self):
        rows, cols = self.antennas_per_array
        if self.num_arrays < 1:
            raise ScenarioError("num_arrays must be >= 1")
        if rows * cols < 2:
            raise ScenarioError("antennas_per_array must give at least 2 antennas")
        if self.num_subcarriers < 1:
            raise ScenarioError("num_subcarriers must be >= 1")
        if self.sample_interval <= 0:
            raise ScenarioError("sample_interval must be > 0")
        if self.trajectory.speed < 0:
            raise ScenarioError("speed must be >= 0")
        if self.bandwidth < 0 or self.carrier_frequency <= 0:
            raise ScenarioError("bad bandwidth / carrier_frequency")
        if self.noise_std < 0:
            raise ScenarioError("noise_std must be >= 0")
        if len(self.array_poses) != self.num_arrays:
            raise ScenarioError("array_poses length != num_arrays")
        if len(self.trajectory.waypoints) < 1:
            raise ScenarioError("trajectory needs at least one waypoint")
        if self.trajectory.speed == 0 and self.num_snapshots is None:
            raise ScenarioError("static trajectory requires num_snapshots")

    def to_dict(self):
        return {
            "num_arrays": self.num_arrays,
            "antennas_per_array": list(self.antennas_per_array),
            "num_subcarriers": self.num_subcarriers,
            "bandwidth": self.bandwidth,
            "carrier_frequency": self.carrier_frequency,
            "array_poses": [
                {"position": list(p.position), "orientation": p.orientation}
                for p in self.array_poses
            ],
            "scatterers": [
                {"position": list(s.position), "gain": s.gain} for s in self.scatterers
            ],
            "trajectory": {
                "waypoints": [list(w) for w in self.trajectory.waypoints],
                "speed": self.trajectory.speed,
            },
            "sample_interval": self.sample_interval,
            "noise_std": self.noise_std,
            "seed": self.seed,
            "num_snapshots": self.num_snapshots,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                num_arrays=int(d["num_arrays"]),
                antennas_per_array=tuple(int(v) for v in d["antennas_per_array"]),
                num_subcarriers=int(d["num_subcarriers"]),
                bandwidth=float(d["bandwidth"]),
                carrier_frequency=float(d["carrier_frequency"]),
                array_poses=tuple(
                    ArrayPose(tuple(float(v) for v in p["position"]), float(p["orientation"]))
                    for p in d["array_poses"]
                ),
                scatterers=tuple(
                    Scatterer(tuple(float(v) for v in s["position"]), float(s["gain"]))
                    for s in d["scatterers"]
                ),
                trajectory=Trajectory(
                    waypoints=tuple(tuple(float(v) for v in w) for w in d["trajectory"]["waypoints"]),
                    speed=float(d["trajectory"]["speed"]),
                ),
                sample_interval=float(d["sample_interval"]),
                noise_std=float(d["noise_std"]),
                seed=int(d["seed"]),
                num_snapshots=None if d.get("num_snapshots") is None else int(d["num_snapshots"]),
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"bad scenario config: {exc}") from exc

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclasses.dataclass
class Snapshot:
    H: np.ndarray  # (B, M, N_sub) complex64
    x: np.ndarray | None  # (2,) ground-truth position, or None
    t: float


@dataclasses.dataclass
class Dataset:
    """L snapshots sharing one (B, M, N_sub, dt) layout.

    Stored as stacked arrays; ``snapshots`` materializes the per-instant view.
    ``x`` rows are NaN when ground truth is absent.
    """

    num_arrays: int
    num_antennas: int
    num_subcarriers: int
    sample_interval: float
    H: np.ndarray  # (L, B, M, N_sub) complex64
    x: np.ndarray  # (L, 2) float64, NaN if unknown
    t: np.ndarray  # (L,) float64

    def __post_init__(self):
        self.H.flags.writeable = False
        self.x.flags.writeable = False
        self.t.flags.writeable = False

    def __len__(self):
        return self.H.shape[0]

    @property
    def snapshots(self):
        has_x = ~np.isnan(self.x[:, 0])
        return [
            Snapshot(self.H[l], self.x[l] if has_x[l] else None, float(self.t[l]))
            for l in range(len(self))
        ]

    def validate(self):
        L = len(self)
        if self.H.shape != (L, self.num_arrays, self.num_antennas, self.num_subcarriers):
            raise ValueError("H shape inconsistent with metadata")
        if not np.all(np.isfinite(self.H.view(np.float32))):
            raise ValueError("non-finite CSI entries")
        if L > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("timestamps not strictly increasing")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_arrays == other.num_arrays
            and self.num_antennas == other.num_antennas
            and self.num_subcarriers == other.num_subcarriers
            and self.sample_interval == other.sample_interval
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x, equal_nan=True)
            and np.array_equal(self.H, other.H)
        )


def subcarrier_frequencies(carrier, bandwidth, n_sub):
    n = np.arange(n_sub)
    return carrier - bandwidth / 2.0 + n * (bandwidth / n_sub)


def antenna_offsets(config, pose):
    """2-D horizontal offsets of all antennas of one planar array.

    Columns are spaced half a carrier wavelength along the array tangent
    (perpendicular to the boresight); rows are stacked vertically and project
    onto the same horizontal point.  Row-major (row, col) flattening.
    """
    rows, cols = config.antennas_per_array
    spacing = SPEED_OF_LIGHT / config.carrier_frequency / 2.0
    tangent = np.array([-np.sin(pose.orientation), np.cos(pose.orientation)])
    col_off = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    offsets = col_off[None, :, None] * tangent[None, None, :]  # (1, cols, 2)
    return np.broadcast_to(offsets, (rows, cols, 2)).reshape(rows * cols, 2)


def sample_trajectory(trajectory, dt, num_snapshots=None):
    """Positions at t = l*dt along the piecewise-linear waypoint path."""
    wp = np.asarray(trajectory.waypoints, dtype=np.float64)
    if wp.ndim != 2 or wp.shape[1] != 2:
        raise ScenarioError("waypoints must be (W, 2)")
    if len(wp) == 1 or trajectory.speed == 0:
        if num_snapshots is None:
            raise ScenarioError("static trajectory requires num_snapshots")
        return np.repeat(wp[:1], num_snapshots, axis=0)
    seg = np.diff(wp, axis=0)
    seglen = np.hypot(seg[:, 0], seg[:, 1])
    keep = seglen > 0
    seg, seglen, starts = seg[keep], seglen[keep], wp[:-1][keep]
    if seglen.size == 0:
        if num_snapshots is None:
            raise ScenarioError("zero-length trajectory requires num_snapshots")
        return np.repeat(wp[:1], num_snapshots, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    total = cum[-1]
    L = int(np.floor(total / (trajectory.speed * dt))) + 1
    if num_snapshots is not None:
        L = min(L, num_snapshots)
    s = np.arange(L) * (trajectory.speed * dt)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seglen) - 1)
    frac = (s - cum[idx]) / seglen[idx]
    return starts[idx] + frac[:, None] * seg[idx]


def geometric_channel(config, positions, dtype=np.complex128):
    """Noise-free, phase-free multipath CSI for each position.

    Returns (L, B, M, N_sub).  Far-field model per array: the path delay seen
    by antenna m is ``(path_length - offset_m . direction) / c`` where
    ``direction`` points from the array to the last bounce (scatterer or user),
    and the path amplitude is ``gain / path_length``.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    L = pos.shape[0]
    B, M, N = config.num_arrays, config.num_antennas, config.num_subcarriers
    freqs = subcarrier_frequencies(config.carrier_frequency, config.bandwidth, N)
    scat = np.array([s.position for s in config.scatterers], dtype=np.float64).reshape(-1, 2)
    scat_gain = np.array([s.gain for s in config.scatterers], dtype=np.float64)

    H = np.empty((L, B, M, N), dtype=dtype)
    for b, pose in enumerate(config.array_poses):
        pb = np.asarray(pose.position, dtype=np.float64)
        offsets = antenna_offsets(config, pose)  # (M, 2)

        # LoS leg
        r_los = pos - pb[None, :]  # (L, 2)
        d_los = np.hypot(r_los[:, 0], r_los[:, 1])
        if np.any(d_los < MIN_PATH_DISTANCE):
            raise ScenarioError(f"trajectory crosses array {b}")
        u_los = r_los / d_los[:, None]
        amp_los = 1.0 / d_los  # (L,)
        plen_los = d_los

        if len(scat):
            r_sc = scat - pb[None, :]  # (S, 2)
            d_sc = np.hypot(r_sc[:, 0], r_sc[:, 1])
            if np.any(d_sc < MIN_PATH_DISTANCE):
                raise ScenarioError(f"scatterer coincides with array {b}")
            u_sc = r_sc / d_sc[:, None]  # (S, 2) direction array -> scatterer
            d_ue_sc = np.linalg.norm(pos[:, None, :] - scat[None, :, :], axis=2)  # (L, S)
            if np.any(d_ue_sc < MIN_PATH_DISTANCE):
                raise ScenarioError("trajectory crosses a scatterer")
            plen_sc = d_ue_sc + d_sc[None, :]  # (L, S)
            amp_sc = scat_gain[None, :] / plen_sc

            plen = np.concatenate([plen_los[:, None], plen_sc], axis=1)  # (L, P)
            amps = np.concatenate([amp_los[:, None], amp_sc], axis=1)
            # direction of arrival at the array per path, (L, P, 2)
            dirs = np.concatenate(
                [u_los[:, None, :], np.broadcast_to(u_sc[None], (L,) + u_sc.shape)], axis=1
            )
        else:
            plen = plen_los[:, None]
            amps = amp_los[:, None]
            dirs = u_los[:, None, :]

        proj = np.einsum("md,lpd->lmp", offsets, dirs)  # (L, M, P)
        delay = (plen[:, None, :] - proj) / SPEED_OF_LIGHT
        phase = (-2.0 * np.pi) * delay[..., None] * freqs[None, None, None, :]
        H[:, b] = np.einsum("lp,lmpn->lmn", amps.astype(complex), np.exp(1j * phase))
    return H


def generate_scenario(config: ScenarioConfig) -> Dataset:
    """Deterministic synthetic dataset for one scenario.

    Draw order (fixed per seed): global snapshot phases first, then the noise
    tensor, both from ``default_rng(config.seed)``.
    """
    config.validate()
    pos = sample_trajectory(config.trajectory, config.sample_interval, config.num_snapshots)
    L = pos.shape[0]
    B, M, N = config.num_arrays, config.num_antennas, config.num_subcarriers

    rng = np.random.default_rng(config.seed)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=L)
    rot = np.exp(1j * theta)

    H = np.empty((L, B, M, N), dtype=np.complex64)
    chunk = max(1, int(16e6 // (B * M * N)))
    for start in range(0, L, chunk):
        sl = slice(start, min(start + chunk, L))
        Hc = geometric_channel(config, pos[sl])
        Hc *= rot[sl, None, None, None]
        if config.noise_std > 0:
            nshape = Hc.shape + (2,)
            noise = rng.standard_normal(nshape) * (config.noise_std / np.sqrt(2.0))
            Hc += noise[..., 0] + 1j * noise[..., 1]
        H[sl] = Hc.astype(np.complex64)

    t = np.arange(L, dtype=np.float64) * config.sample_interval
    ds = Dataset(B, M, N, config.sample_interval, H, pos, t)
    ds.validate()
    return ds


def random_waypoints(bounds, count, seed, margin=0.0):
    """Uniform waypoints inside ``bounds = (xmin, xmax, ymin, ymax)``."""
    xmin, xmax, ymin, ymax = bounds
    rng = np.random.default_rng(seed)
    xs = rng.uniform(xmin + margin, xmax - margin, size=count)
    ys = rng.uniform(ymin + margin, ymax - margin, size=count)
    return tuple((float(x), float(y)) for x, y in zip(xs, ys))


def noise_std_for_snr(config, snr_db, probe=64):
    """noise_std giving the target per-entry SNR, probed on noiseless CSI."""
    pos = sample_trajectory(config.trajectory, config.sample_interval, config.num_snapshots)
    step = max(1, len(pos) // probe)
    Hp = geometric_channel(config, pos[::step])
    mean_pow = float(np.mean(np.abs(Hp) ** 2))
    return float(np.sqrt(mean_pow * 10.0 ** (-snr_db / 10.0)))


def default_scenario(seed=0, **overrides):
    """Defaults mirroring the measurement geometry: 4 corner arrays, 15 x 13 m."""
    arena = (0.0, 15.0, 0.0, 13.0)
    cx, cy = 7.5, 6.5
    poses = []
    for x, y in [(0.5, 0.5), (14.5, 0.5), (14.5, 12.5), (0.5, 12.5)]:
        poses.append(ArrayPose((x, y), float(np.arctan2(cy - y, cx - x))))
    scat_pts = random_waypoints(arena, 10, seed=977, margin=1.0)
    cfg = dict(
        num_arrays=4,
        antennas_per_array=(2, 4),
        num_subcarriers=64,
        bandwidth=50e6,
        carrier_frequency=500e6,
        array_poses=tuple(poses),
        scatterers=tuple(Scatterer(p, 1.0) for p in scat_pts),
        trajectory=Trajectory(random_waypoints(arena, 40, seed=seed + 1, margin=1.0), 0.3),
        sample_interval=0.192,
        noise_std=6e-3,
        seed=seed,
    )
    cfg.update(overrides)
    return ScenarioConfig(**cfg)


def write_dataset(dataset: Dataset, sink):
    """Serialize to the CSID container (see README for the layout)."""
    if hasattr(sink, "write"):
        _write_stream(dataset, sink)
    else:
        with open(sink, "wb") as fh:
            _write_stream(dataset, fh)


def _write_stream(ds, fh):
    L = len(ds)
    fh.write(
        _HEADER.pack(
            CSID_MAGIC,
            CSID_VERSION,
            ds.num_arrays,
            ds.num_antennas,
            ds.num_subcarriers,
            L,
            ds.sample_interval,
        )
    )
    rec = np.empty(L, dtype=_record_dtype(ds.num_arrays, ds.num_antennas, ds.num_subcarriers))
    rec["t"] = ds.t
    rec["x"] = ds.x
    rec["h"] = ds.H.view(np.float32).reshape(rec["h"].shape)
    fh.write(rec.tobytes())


def _record_dtype(B, M, N):
    return np.dtype([("t", "<f8"), ("x", "<f8", (2,)), ("h", "<f4", (B, M, N, 2))])


def read_dataset(source) -> Dataset:
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    if len(data) < _HEADER.size:
        raise CsidTruncatedError("file shorter than the CSID header")
    magic, version, B, M, N, L, dt = _HEADER.unpack_from(data, 0)
    if magic != CSID_MAGIC:
        raise CsidMagicError(f"bad magic {magic!r}")
    if version != CSID_VERSION:
        raise CsidError(f"unsupported CSID version {version}")
    if min(B, M, N) < 1:
        raise CsidDimensionError(f"bad dimensions B={B} M={M} N={N}")
    rdtype = _record_dtype(B, M, N)
    payload = len(data) - _HEADER.size
    expected = L * rdtype.itemsize
    if payload != expected:
        if payload % rdtype.itemsize == 0:
            raise CsidDimensionError(
                f"header claims {L} records of {rdtype.itemsize} bytes "
                f"(B={B} M={M} N_sub={N}), payload holds {payload // rdtype.itemsize}"
            )
        raise CsidTruncatedError(f"payload of {payload} bytes cut mid-snapshot")
    rec = np.frombuffer(data, dtype=rdtype, count=L, offset=_HEADER.size)
    H = rec["h"].copy().view(np.complex64).reshape(L, B, M, N)
    return Dataset(B, M, N, dt, H, rec["x"].copy(), rec["t"].copy())
