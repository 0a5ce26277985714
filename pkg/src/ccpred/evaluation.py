"""Array selection, sum rate, and the horizon-sweep experiment.

One downlink array is picked per prediction (largest predicted channel
energy); the reported rate assumes matched-filter beamforming with the
predicted CSI against the true CSI on an evenly spaced subcarrier subset,
with noise power calibrated so perfect prediction hits the target mean SNR.
Samples whose predicted chart position falls outside the training mesh are
excluded from every method (or optionally routed to CC-NN).
"""

import dataclasses
import json

import numpy as np

from . import charting, chart_metrics, dissimilarity, features, geometry
from . import latent_predict, phase_linalg, predictors, wiener

METHODS = ("outdated", "wiener", "cc_interp", "cc_nn")


class EvalError(RuntimeError):
    pass


@dataclasses.dataclass
class NoiseModel:
    n0: float
    mu: float = 100.0

    def __post_init__(self):
        if self.n0 <= 0:
            raise ValueError("N0 must be > 0")


def subcarrier_subset(n_sub, n_eval):
    """n_eval indices evenly spaced over the whole band."""
    if not 1 <= n_eval <= n_sub:
        raise ValueError(f"n_eval={n_eval} outside 1..{n_sub}")
    idx = np.unique(np.round(np.linspace(0, n_sub - 1, n_eval)).astype(np.int64))
    if len(idx) != n_eval:
        raise ValueError(f"subcarrier subset collapsed to {len(idx)} unique indices")
    return idx


def received_power(h_true, h_hat, n_sub_eff):
    """Matched-filter downlink power |h^H h_hat|^2 / (N * ||h_hat||^2)."""
    h_true = np.asarray(h_true, dtype=np.complex128)
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    den = float(np.sum(np.abs(h_hat) ** 2))
    if den == 0.0:
        raise EvalError("zero predicted channel: beamformer undefined")
    return float(np.abs(np.vdot(h_true, h_hat)) ** 2) / (n_sub_eff * den)


def sum_rate(H_true, H_hat, b, noise: NoiseModel):
    """Mean over subcarriers of log2(1 + P_bn / N0) at array b."""
    H_true = np.asarray(H_true)
    H_hat = np.asarray(H_hat)
    n_eff = H_true.shape[-1]
    acc = 0.0
    for n in range(n_eff):
        p = received_power(H_true[b, :, n], H_hat[b, :, n], n_eff)
        acc += np.log2(1.0 + p / noise.n0)
    return float(acc / n_eff)


def select_array(H_hat):
    """Array index with the largest predicted channel energy (ties: lowest b)."""
    H_hat = np.asarray(H_hat)
    energy = np.sum(np.abs(H_hat) ** 2, axis=(1, 2))
    return int(np.argmax(energy))


def calibrate_noise(train, mu=100.0, subcarriers=None) -> NoiseModel:
    """N0 = E[P] / mu with P the matched-beamforming power on the training set."""
    H = train.H if hasattr(train, "H") else np.asarray(train)
    if subcarriers is not None:
        H = H[:, :, :, np.asarray(subcarriers)]
    n_eff = H.shape[-1]
    power = np.mean(np.sum(np.abs(H.astype(np.complex128)) ** 2, axis=2)) / n_eff
    if power == 0.0:
        raise EvalError("all-zero dataset: cannot calibrate noise")
    return NoiseModel(float(power / mu), mu)


@dataclasses.dataclass
class ExperimentConfig:
    memory: int = 25
    horizons: tuple = tuple(range(26))
    n_sub_eval: int = 32
    t_taps: int = 16
    knn: int = 20
    mu: float = 100.0
    max_lag: int | None = None
    loading: float = wiener.DEFAULT_LOADING
    route_outside_to_nn: bool = False
    dump_samples: bool = False
    train_cfg: charting.TrainConfig = dataclasses.field(default_factory=charting.TrainConfig)

    def validate(self):
        if self.memory < 2:
            raise ValueError("memory K must be >= 2")
        if len(self.horizons) == 0:
            raise ValueError("horizons must be non-empty")
        if any(p < 0 for p in self.horizons):
            raise ValueError("horizons must be >= 0")


@dataclasses.dataclass
class HorizonReport:
    rows: list  # dicts: method, p, mean_sr, n_samples, excluded_frac
    n0: float
    mu: float
    samples: list | None = None  # dicts: l, p, method, b, sr
    meta: dict | None = None

    def mean_sr(self, method, p):
        for row in self.rows:
            if row["method"] == method and row["p"] == p:
                return row["mean_sr"]
        raise KeyError(f"no row for {method} p={p}")

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("method,p,mean_sr,n_samples,excluded_frac\n")
            for r in self.rows:
                fh.write(
                    f"{r['method']},{r['p']},{r['mean_sr']!r},"
                    f"{r['n_samples']},{r['excluded_frac']!r}\n"
                )

    def write_json(self, path):
        payload = {"n0": self.n0, "mu": self.mu, "rows": self.rows, "meta": self.meta or {}}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")

    def write_samples_csv(self, path):
        if self.samples is None:
            raise ValueError("run with dump_samples=True to get a per-sample dump")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("l,p,method,b,sr\n")
            for s in self.samples:
                fh.write(f"{s['l']},{s['p']},{s['method']},{s['b']},{s['sr']!r}\n")

    @staticmethod
    def read_csv(path):
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "method,p,mean_sr,n_samples,excluded_frac":
                raise EvalError(f"unexpected results header: {header}")
            for line in fh:
                m, p, sr, n, ex = line.strip().split(",")
                rows.append(
                    {
                        "method": m,
                        "p": int(p),
                        "mean_sr": float(sr),
                        "n_samples": int(n),
                        "excluded_frac": float(ex),
                    }
                )
        return rows


def batch_sum_rates(H_true, H_hat, noise: NoiseModel):
    """(b_selected, sum_rate) per sample for stacked (n, B, M, N') tensors.

    A prediction may come out as the zero vector on some (array, subcarrier)
    slot (e.g. a negative-definite predicted autocorrelation); without a
    beamforming direction it simply earns zero received power there.
    """
    H_true = np.asarray(H_true)
    H_hat = np.asarray(H_hat)
    n, B, M, n_eff = H_hat.shape
    energy = np.sum(np.abs(H_hat) ** 2, axis=(2, 3))  # (n, B)
    b_sel = np.argmax(energy, axis=1)
    rows = np.arange(n)
    hh = H_hat[rows, b_sel]  # (n, M, N')
    ht = H_true[rows, b_sel]
    num = np.abs(np.einsum("smn,smn->sn", ht.conj(), hh)) ** 2
    den = n_eff * np.sum(np.abs(hh) ** 2, axis=1)  # (n, N')
    power = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    sr = np.mean(np.log2(1.0 + power / noise.n0), axis=1)
    return b_sel, sr


def _barycentric_batch(tri, t_idx, points):
    verts = tri.points[tri.triangles[t_idx]]  # (n, 3, 2)
    x1, y1 = verts[:, 0, 0], verts[:, 0, 1]
    x2, y2 = verts[:, 1, 0], verts[:, 1, 1]
    x3, y3 = verts[:, 2, 0], verts[:, 2, 1]
    px, py = points[:, 0], points[:, 1]
    det = (x1 - x3) * (y2 - y3) - (x2 - x3) * (y1 - y3)
    if np.any(det == 0.0):
        raise geometry.GeometryError("zero-area triangle in batch")
    c1 = ((y2 - y3) * (px - x3) + (x3 - x2) * (py - y3)) / det
    c2 = ((y3 - y1) * (px - x3) + (x1 - x3) * (py - y3)) / det
    return np.stack([c1, c2, 1.0 - c1 - c2], axis=1)


def _cc_interp_batch(tri, t_idx, z_hat, H_train_sub, chunk=192):
    """Stacked CC-interp reconstructions for located samples."""
    n = len(t_idx)
    B, M, n_eff = H_train_sub.shape[1:]
    coeffs = _barycentric_batch(tri, t_idx, z_hat)
    rows = tri.dataset_indices[tri.triangles[t_idx]]  # (n, 3)
    out = np.empty((n, B, M, n_eff), dtype=np.complex128)
    for s0 in range(0, n, chunk):
        s1 = min(s0 + chunk, n)
        h = H_train_sub[rows[s0:s1]]  # (c, 3, B, M, N')
        z = np.einsum("si,sibmn,sibkn->sbmkn", coeffs[s0:s1] / 3.0, h, h.conj())
        out[s0:s1] = _reconstruct_stack(z)
    return out


def _reconstruct_stack(z, shifted=False):
    """(n, B, M, M, N') Hermitian stack -> (n, B, M, N') reconstructions."""
    n, B, M, _, n_eff = z.shape
    batch = np.ascontiguousarray(np.moveaxis(z, 4, 2)).reshape(-1, M, M)
    h = phase_linalg.reconstruct_batch(batch, shifted=shifted)
    return np.moveaxis(h.reshape(n, B, n_eff, M), 3, 2)


def run_experiment(train, pred, cfg: ExperimentConfig, model=None, corr=None) -> HorizonReport:
    """Full horizon sweep of every prediction method over the prediction set.

    ``model`` (FCF) and ``corr`` (Wiener correlations) are trained on the fly
    from ``train`` when not supplied.  The same exclusion set (predictions
    outside the training mesh) applies to all methods at each horizon.
    """
    cfg.validate()
    K = cfg.memory
    p_max = max(cfg.horizons)
    L_pred = len(pred)
    if L_pred < K + p_max:
        raise EvalError(
            f"prediction set too short: need at least memory+max_horizon={K + p_max} "
            f"snapshots, got {L_pred}"
        )
    if (train.num_arrays, train.num_antennas, train.num_subcarriers) != (
        pred.num_arrays,
        pred.num_antennas,
        pred.num_subcarriers,
    ):
        raise EvalError("train/pred dimension mismatch")

    sub = subcarrier_subset(train.num_subcarriers, cfg.n_sub_eval)
    feats_train = features.csi_feature(train.H, cfg.t_taps)
    if model is None:
        adps = features.angle_delay_profile(train.H)
        D, _ = dissimilarity.build_dissimilarity(
            adps, train.t, k=cfg.knn, sample_interval=train.sample_interval
        )
        model, _ = charting.train(feats_train, D, cfg.train_cfg)
    z_train = charting.forward(model, feats_train)
    try:
        tri = geometry.delaunay(z_train)
    except geometry.GeometryError:
        tri = None  # degenerate chart: every prediction counts as outside

    feats_pred = features.csi_feature(pred.H, cfg.t_taps)
    z_pred = charting.forward(model, feats_pred)

    max_lag = cfg.max_lag if cfg.max_lag is not None else p_max + K - 1
    if corr is None:
        corr = wiener.estimate_correlations(train, sub, max_lag)
    if not np.array_equal(np.asarray(corr.subcarriers), sub):
        raise EvalError("correlation model subcarriers do not match the eval subset")

    noise = calibrate_noise(train, cfg.mu, sub)
    H_pred_sub = np.ascontiguousarray(pred.H[:, :, :, sub].astype(np.complex128))
    H_train_sub = np.ascontiguousarray(train.H[:, :, :, sub].astype(np.complex128))
    z_hist = wiener.z_history(H_pred_sub)

    rows = []
    dump = [] if cfg.dump_samples else None
    for p in cfg.horizons:
        heads = np.arange(K - 1, L_pred - p)
        z_hat = latent_predict.extrapolate_batch(z_pred, K, p, heads)
        if tri is None:
            loc = np.full(len(heads), geometry.OUTSIDE, dtype=np.int64)
        else:
            loc = np.array([tri.locate(z) for z in z_hat], dtype=np.int64)
        inside = loc != geometry.OUTSIDE
        excluded_frac = float(1.0 - np.mean(inside))
        if cfg.route_outside_to_nn:
            keep = np.ones(len(heads), dtype=bool)
        else:
            keep = inside
        if not np.any(keep):
            raise EvalError(f"all samples excluded at horizon p={p}")
        hk = heads[keep]
        zk = z_hat[keep]
        lock = loc[keep]
        insidek = inside[keep]
        H_true = H_pred_sub[hk + p]

        filt = wiener.build_filter(corr, K, p, cfg.loading)
        zw = wiener.apply_filter_batch(z_hist, filt, hk).reshape(
            len(hk), *corr.r.shape[:4]
        )
        zw = 0.5 * (zw + np.swapaxes(zw, 2, 3).conj())

        nn_idx = _nearest_train(zk, z_train)
        predicted = {
            "outdated": H_pred_sub[hk],
            "wiener": _reconstruct_stack(zw, shifted=True),
            "cc_nn": H_train_sub[nn_idx],
        }
        cc = np.empty_like(predicted["cc_nn"])
        if np.any(insidek):
            cc[insidek] = _cc_interp_batch(tri, lock[insidek], zk[insidek], H_train_sub)
        if np.any(~insidek):
            cc[~insidek] = predicted["cc_nn"][~insidek]  # routed fallback
        predicted["cc_interp"] = cc

        for method in METHODS:
            b_sel, sr = batch_sum_rates(H_true, predicted[method], noise)
            rows.append(
                {
                    "method": method,
                    "p": int(p),
                    "mean_sr": float(np.mean(sr)),
                    "n_samples": int(len(sr)),
                    "excluded_frac": excluded_frac,
                }
            )
            if dump is not None:
                for l, b, s in zip(hk, b_sel, sr):
                    dump.append(
                        {"l": int(l), "p": int(p), "method": method, "b": int(b), "sr": float(s)}
                    )

    meta = {
        "memory": K,
        "horizons": list(cfg.horizons),
        "n_sub_eval": cfg.n_sub_eval,
        "subcarriers": sub.tolist(),
        "t_taps": cfg.t_taps,
        "knn": cfg.knn,
        "mu": cfg.mu,
        "route_outside_to_nn": cfg.route_outside_to_nn,
        "mesh_triangles": 0 if tri is None else tri.num_triangles,
    }
    return HorizonReport(rows, noise.n0, noise.mu, dump, meta)


def _nearest_train(z_hat, z_train):
    from scipy.spatial import cKDTree

    d, idx = cKDTree(z_train).query(z_hat)
    # KD query breaks ties arbitrarily; enforce lowest-index on exact ties
    d2 = np.sum((z_train[idx] - z_hat) ** 2, axis=1)
    ties = np.flatnonzero(d2 == 0.0)
    for s in ties:
        exact = np.flatnonzero(
            (z_train[:, 0] == z_hat[s, 0]) & (z_train[:, 1] == z_hat[s, 1])
        )
        if len(exact):
            idx[s] = exact[0]
    return idx


def chart_report(truth, chart, k=None) -> chart_metrics.MetricReport:
    return chart_metrics.evaluate_chart(truth, chart, k)
