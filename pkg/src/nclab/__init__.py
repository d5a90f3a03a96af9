"""Contrastive-learning geometry lab.

Generalized contrastive losses, tilted (hard) negative sampling, simplex-frame
collapse metrics, closed-form loss lower bounds, and a small from-scratch
encoder trained with Adam to exercise all of it on synthetic data.
"""

from .bounds import (
    BoundResult,
    SweepRow,
    lb_sweep,
    scl_lower_bound,
    ucl_lb_closed_form_k1,
    ucl_lower_bound,
)
from .geometry import (
    DcSpectrum,
    NcMetrics,
    NormalizationMode,
    class_means,
    dc_spectrum,
    make_etf,
    nc_metrics,
    normalize,
)
from .losses import LossSpec, LossValue, batch_loss, cl_loss_sample, psi
from .sampling import (
    HardeningSpec,
    LabeledDataset,
    PositiveStrategy,
    draw_negatives,
    draw_positive,
    gamma_estimate,
    gen_synthetic,
    hardening_weight,
)
from .train import MetricsRow, TrainConfig, TrainResult, train
from .util import ConfigurationError
from .verify import (
    InequalityReport,
    check_batched_equality,
    check_harris,
    check_nc_optimality,
    check_theorem1,
)

__version__ = "0.1.0"

__all__ = [
    "BoundResult",
    "ConfigurationError",
    "DcSpectrum",
    "HardeningSpec",
    "InequalityReport",
    "LabeledDataset",
    "LossSpec",
    "LossValue",
    "MetricsRow",
    "NcMetrics",
    "NormalizationMode",
    "PositiveStrategy",
    "SweepRow",
    "TrainConfig",
    "TrainResult",
    "batch_loss",
    "check_batched_equality",
    "check_harris",
    "check_nc_optimality",
    "check_theorem1",
    "cl_loss_sample",
    "class_means",
    "dc_spectrum",
    "draw_negatives",
    "draw_positive",
    "gamma_estimate",
    "gen_synthetic",
    "hardening_weight",
    "lb_sweep",
    "make_etf",
    "nc_metrics",
    "normalize",
    "psi",
    "scl_lower_bound",
    "train",
    "ucl_lb_closed_form_k1",
    "ucl_lower_bound",
]
