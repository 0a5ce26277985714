"""Dimensionality-reduction quality metrics for channel charts.

Continuity / trustworthiness (rank-based neighborhood preservation), Kruskal
stress with an optimal uniform scale, mean absolute error after the best
affine map from chart to ground truth, and the per-sample latent prediction
error.  Rank ties always break by index so every metric is reproducible.
"""

import dataclasses
import json

import numpy as np
from scipy.spatial.distance import cdist


@dataclasses.dataclass
class MetricReport:
    ct: float
    tw: float
    ks: float
    mae: float
    k_neighbors: int

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    def to_csv_row(self):
        return f"{self.ct!r},{self.tw!r},{self.ks!r},{self.mae!r},{self.k_neighbors}"

    @staticmethod
    def csv_header():
        return "ct,tw,ks,mae,k_neighbors"


def default_k(L):
    return max(1, round(0.05 * L))


def _rank_matrix(points):
    """ranks[i, j] = rank of j among i's neighbors (1 = nearest, self excluded)."""
    d = cdist(points, points)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    L = len(points)
    ranks = np.empty_like(order)
    ranks[np.arange(L)[:, None], order] = np.arange(1, L + 1)[None, :]
    return ranks


def neighborhood_metrics(truth, chart, k=None):
    """(continuity, trustworthiness) with neighborhood size k."""
    truth = np.asarray(truth, dtype=np.float64)
    chart = np.asarray(chart, dtype=np.float64)
    L = len(truth)
    if len(chart) != L:
        raise ValueError("truth/chart lengths differ")
    if k is None:
        k = default_k(L)
    if L < k + 2:
        raise ValueError(f"need at least k+2={k + 2} points")
    if k >= L / 2:
        raise ValueError(f"k={k} must be below L/2 for the usual normalization")
    r_true = _rank_matrix(truth)
    r_chart = _rank_matrix(chart)
    in_true = r_true <= k
    in_chart = r_chart <= k
    # trustworthiness: chart neighbors that are not true neighbors, ranked in truth
    tw_pen = np.sum(r_true[in_chart & ~in_true] - k)
    # continuity: true neighbors missing from the chart, ranked in the chart
    ct_pen = np.sum(r_chart[in_true & ~in_chart] - k)
    norm = 2.0 / (L * k * (2.0 * L - 3.0 * k - 1.0))
    return float(1.0 - norm * ct_pen), float(1.0 - norm * tw_pen)


def kruskal_stress(truth, chart):
    """Global distance distortion in [0, 1] after the optimal uniform scale."""
    truth = np.asarray(truth, dtype=np.float64)
    chart = np.asarray(chart, dtype=np.float64)
    if len(truth) != len(chart):
        raise ValueError("truth/chart lengths differ")
    iu = np.triu_indices(len(truth), k=1)
    dt = cdist(truth, truth)[iu]
    dc = cdist(chart, chart)[iu]
    denom = float(np.sum(dt * dt))
    if denom == 0.0:
        raise ValueError("all ground-truth points are identical")
    dc2 = float(np.sum(dc * dc))
    s = float(np.sum(dt * dc)) / dc2 if dc2 > 0 else 0.0
    return float(np.sqrt(np.sum((dt - s * dc) ** 2) / denom))


def affine_mae(truth, chart):
    """Mean residual after the least-squares affine map chart -> truth."""
    truth = np.asarray(truth, dtype=np.float64)
    chart = np.asarray(chart, dtype=np.float64)
    L = len(truth)
    if len(chart) != L:
        raise ValueError("truth/chart lengths differ")
    if L < 3:
        raise ValueError("need at least 3 points")
    A = np.hstack([chart, np.ones((L, 1))])
    sol, _, rank, _ = np.linalg.lstsq(A, truth, rcond=None)
    if rank < chart.shape[1] + 1:
        raise ValueError("degenerate (rank-deficient) chart positions")
    resid = A @ sol - truth
    return float(np.mean(np.linalg.norm(resid, axis=1)))


def latent_error(z_hat, z_true):
    """Euclidean latent prediction error per sample."""
    z_hat = np.asarray(z_hat, dtype=np.float64)
    z_true = np.asarray(z_true, dtype=np.float64)
    return float(np.linalg.norm(z_hat - z_true)) if z_hat.ndim == 1 else np.linalg.norm(
        z_hat - z_true, axis=-1
    )


def evaluate_chart(truth, chart, k=None) -> MetricReport:
    if k is None:
        k = default_k(len(truth))
    ct, tw = neighborhood_metrics(truth, chart, k)
    return MetricReport(
        ct=ct,
        tw=tw,
        ks=kruskal_stress(truth, chart),
        mae=affine_mae(truth, chart),
        k_neighbors=k,
    )
