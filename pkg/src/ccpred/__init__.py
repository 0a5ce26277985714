"""Channel-charting based CSI prediction workbench (desk-scale, synthetic)."""

__version__ = "0.1.0"

from .dataset import (  # noqa: F401
    Dataset,
    ScenarioConfig,
    Snapshot,
    generate_scenario,
    read_dataset,
    write_dataset,
)
from .features import angle_delay_profile, csi_feature  # noqa: F401
from .dissimilarity import build_dissimilarity, geodesic  # noqa: F401
from .charting import FcfModel, TrainConfig, forward, siamese_loss, train  # noqa: F401
from .chart_metrics import (  # noqa: F401
    MetricReport,
    affine_mae,
    kruskal_stress,
    latent_error,
    neighborhood_metrics,
)
from .geometry import OUTSIDE, Triangulation, barycentric, delaunay  # noqa: F401
from .phase_linalg import principal_eigpair, reconstruct_csi, sample_autocorr  # noqa: F401
from .wiener import CorrelationModel, WienerFilter, build_filter, estimate_correlations  # noqa: F401
from .latent_predict import LatentTrack, extrapolate  # noqa: F401
from .predictors import Prediction, cc_interp, cc_nn, outdated  # noqa: F401
from .evaluation import (  # noqa: F401
    ExperimentConfig,
    HorizonReport,
    NoiseModel,
    calibrate_noise,
    received_power,
    run_experiment,
    select_array,
    sum_rate,
)
