"""Forward charting function: features -> 2-D chart positions.

A small dense network (tanh hidden layers, linear head) trained as a Siamese
twin pair on the distance-matching loss

    sum over pairs of (d_ij - ||z_i - z_j||)^2 / (d_ij + beta),

which weights absolute vs. normalized squared error through ``beta``.  Forward
and reverse passes are hand-rolled numpy so gradients can be verified against
finite differences; the optimizer keeps per-parameter first/second moments
(Adam).  Inputs are standardized with statistics frozen into the model.
"""

import dataclasses
import struct

import numpy as np

DEFAULT_HIDDEN = (256, 128, 64)
FCF_MAGIC = b"FCF1"
FCF_VERSION = 1
_STD_FLOOR = 1e-12
_R_FLOOR = 1e-30


class ChartingError(RuntimeError):
    pass


@dataclasses.dataclass(eq=False)
class FcfModel:
    weights: list  # per layer, (fan_out, fan_in) float64
    biases: list  # per layer, (fan_out,) float64
    feat_mean: np.ndarray
    feat_std: np.ndarray

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def hidden(self):
        return tuple(w.shape[0] for w in self.weights[:-1])

    def copy(self):
        return FcfModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.feat_mean.copy(),
            self.feat_std.copy(),
        )


@dataclasses.dataclass
class TrainConfig:
    beta: float | None = None  # None: median off-diagonal dissimilarity
    epochs: int = 50
    batch_pairs: int = 512
    learning_rate: float = 1e-3
    seed: int = 0
    pairs_per_epoch: int = 50_000
    hidden: tuple = DEFAULT_HIDDEN

    def validate(self):
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0 or self.batch_pairs < 1 or self.pairs_per_epoch < 1:
            raise ValueError("bad epoch/batch configuration")


def init_model(input_dim, hidden=DEFAULT_HIDDEN, output_dim=2, rng=0, feat_mean=None, feat_std=None):
    """Glorot-uniform initialized model; identity standardization by default."""
    if not hasattr(rng, "uniform"):
        rng = np.random.default_rng(rng)
    dims = [input_dim, *hidden, output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    mean = np.zeros(input_dim) if feat_mean is None else np.asarray(feat_mean, dtype=np.float64)
    std = np.ones(input_dim) if feat_std is None else np.asarray(feat_std, dtype=np.float64)
    return FcfModel(weights, biases, mean, std)


def forward(model, feats):
    """Chart positions for one feature vector (F,) or a batch (N, F)."""
    feats = np.asarray(feats, dtype=np.float64)
    single = feats.ndim == 1
    X = feats[None] if single else feats
    if X.shape[1] != model.input_dim:
        raise ValueError(f"feature length {X.shape[1]} != model input_dim {model.input_dim}")
    z = _forward_cached(model, X)[0]
    return z[0] if single else z


def _forward_cached(model, X):
    a = (X - model.feat_mean) / np.maximum(model.feat_std, _STD_FLOOR)
    acts = [a]
    n_layers = len(model.weights)
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        s = a @ W.T + b
        a = s if i == n_layers - 1 else np.tanh(s)
        acts.append(a)
    return acts[-1], acts


def _backward(model, acts, dZ):
    """Gradients of a scalar loss wrt weights/biases given dLoss/dOutput."""
    gw = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    delta = dZ
    for i in range(len(model.weights) - 1, -1, -1):
        a_prev = acts[i]
        gw[i] = delta.T @ a_prev
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * (1.0 - acts[i] ** 2)
    return gw, gb


def siamese_loss(z_i, z_j, d, beta):
    """Batch Siamese loss (see module docstring); summed over the given pairs."""
    z_i = np.atleast_2d(np.asarray(z_i, dtype=np.float64))
    z_j = np.atleast_2d(np.asarray(z_j, dtype=np.float64))
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    if np.any(d < 0):
        raise ValueError("dissimilarities must be >= 0")
    denom = d + beta
    if np.any(denom <= 0):
        raise ValueError("d_ij + beta must be > 0 for every pair")
    r = np.linalg.norm(z_i - z_j, axis=1)
    return float(np.sum((d - r) ** 2 / denom))


def siamese_loss_pairs(pairs, beta):
    z_i = np.array([p[0] for p in pairs], dtype=np.float64)
    z_j = np.array([p[1] for p in pairs], dtype=np.float64)
    d = np.array([p[2] for p in pairs], dtype=np.float64)
    return siamese_loss(z_i, z_j, d, beta)


def _loss_and_grads(model, Xi, Xj, d, beta):
    zi, acts_i = _forward_cached(model, Xi)
    zj, acts_j = _forward_cached(model, Xj)
    delta = zi - zj
    r = np.linalg.norm(delta, axis=1)
    denom = d + beta
    loss = float(np.sum((d - r) ** 2 / denom))
    safe_r = np.maximum(r, _R_FLOOR)
    coeff = -2.0 * (d - r) / (denom * safe_r)
    dzi = coeff[:, None] * delta
    gw_i, gb_i = _backward(model, acts_i, dzi)
    gw_j, gb_j = _backward(model, acts_j, -dzi)
    gw = [a + b for a, b in zip(gw_i, gw_j)]
    gb = [a + b for a, b in zip(gb_i, gb_j)]
    return loss, gw, gb


def default_beta(D):
    iu = np.triu_indices(D.shape[0], k=1)
    return float(np.median(np.asarray(D, dtype=np.float64)[iu]))


def train(features, D, cfg: TrainConfig):
    """Fit the charting model to a dissimilarity matrix.

    Pairs are sampled uniformly over unordered index pairs.  Returns
    ``(model, history)`` where history holds the mean per-pair loss per epoch.
    Deterministic for a fixed ``cfg.seed``.
    """
    cfg.validate()
    feats = np.asarray(features, dtype=np.float64)
    L = feats.shape[0]
    D = np.asarray(D)
    if D.shape != (L, L):
        raise ValueError(f"dissimilarity matrix {D.shape} does not match {L} features")
    if L < 2:
        raise ValueError("need at least 2 snapshots to train")

    rng = np.random.default_rng(cfg.seed)
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    model = init_model(feats.shape[1], hidden=cfg.hidden, rng=rng, feat_mean=mean, feat_std=std)
    beta = default_beta(D) if cfg.beta is None else float(cfg.beta)
    if cfg.epochs == 0:
        return model, []

    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    nw = len(model.weights)
    steps = max(1, int(np.ceil(cfg.pairs_per_epoch / cfg.batch_pairs)))
    history = []
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for _ in range(steps):
            i = rng.integers(0, L, size=cfg.batch_pairs)
            j = rng.integers(0, L - 1, size=cfg.batch_pairs)
            j = j + (j >= i)
            d = np.asarray(D[i, j], dtype=np.float64)
            loss, gw, gb = _loss_and_grads(model, feats[i], feats[j], d, beta)
            if not np.isfinite(loss):
                raise ChartingError(
                    f"non-finite loss at epoch {epoch}, step {t}: {loss!r}"
                )
            t += 1
            corr1 = 1.0 - b1 ** t
            corr2 = 1.0 - b2 ** t
            for p, g, mm, vv in zip(params, gw + gb, m1, m2):
                mm *= b1
                mm += (1.0 - b1) * g
                vv *= b2
                vv += (1.0 - b2) * g * g
                p -= cfg.learning_rate * (mm / corr1) / (np.sqrt(vv / corr2) + eps)
            total += loss
            count += cfg.batch_pairs
        history.append(total / count)
    return model, history


def gradient_check(model, Xi, Xj, d, beta, step=1e-4):
    """Max relative disagreement of reverse-mode vs. central finite differences."""
    Xi = np.atleast_2d(np.asarray(Xi, dtype=np.float64))
    Xj = np.atleast_2d(np.asarray(Xj, dtype=np.float64))
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    _, gw, gb = _loss_and_grads(model, Xi, Xj, d, beta)
    analytic = gw + gb
    params = model.weights + model.biases
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.ravel()
        gflat = g.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            lp = _loss_only(model, Xi, Xj, d, beta)
            flat[idx] = orig - step
            lm = _loss_only(model, Xi, Xj, d, beta)
            flat[idx] = orig
            num = (lp - lm) / (2.0 * step)
            denom = max(abs(gflat[idx]), abs(num), 1e-6)
            worst = max(worst, abs(gflat[idx] - num) / denom)
    return worst


def _loss_only(model, Xi, Xj, d, beta):
    zi = _forward_cached(model, Xi)[0]
    zj = _forward_cached(model, Xj)[0]
    r = np.linalg.norm(zi - zj, axis=1)
    return float(np.sum((d - r) ** 2 / (d + beta)))


def save_model(model: FcfModel, path):
    """FCF1 container: architecture, f32 standardization vectors and layers."""
    dims = [model.input_dim, *model.hidden, model.output_dim]
    with open(path, "wb") as fh:
        fh.write(FCF_MAGIC)
        fh.write(struct.pack("<BI", FCF_VERSION, len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(model.feat_mean.astype("<f4").tobytes())
        fh.write(model.feat_std.astype("<f4").tobytes())
        for W, b in zip(model.weights, model.biases):
            fh.write(W.astype("<f4").tobytes())
            fh.write(b.astype("<f4").tobytes())


def load_model(path) -> FcfModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FCF_MAGIC:
        raise ChartingError(f"bad model magic {data[:4]!r}")
    version, ndims = struct.unpack_from("<BI", data, 4)
    if version != FCF_VERSION:
        raise ChartingError(f"unsupported FCF version {version}")
    dims = struct.unpack_from(f"<{ndims}I", data, 9)
    off = 9 + 4 * ndims

    def take(n):
        nonlocal off
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64)
        off += 4 * n
        return arr

    try:
        mean = take(dims[0])
        std = take(dims[0])
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(take(fan_in * fan_out).reshape(fan_out, fan_in))
            biases.append(take(fan_out))
    except ValueError as exc:
        raise ChartingError(f"truncated FCF model file: {exc}") from exc
    if off != len(data):
        raise ChartingError("trailing bytes in FCF model file")
    return FcfModel(weights, biases, mean, std)


def write_chart_csv(path, positions):
    positions = np.asarray(positions)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,z1,z2\n")
        for idx, (z1, z2) in enumerate(positions):
            fh.write(f"{idx},{z1!r},{z2!r}\n")
