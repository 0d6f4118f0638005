"""Estimators for the column sum of a column-sparse Gaussian mean matrix and
for the inlier mean of Gaussian vectors with outliers, plus the Monte Carlo
machinery to benchmark them."""

from .core import (
    EstimateResult,
    NoiseModel,
    SparsityPattern,
    ValidationError,
    center_columns,
    column_norms,
    linear_functional,
    normalized_functional,
)
from .functional import (
    GssConfig,
    ThresholdConfig,
    adgss_estimate,
    ewht_estimate,
    ewht_threshold,
    ght_estimate,
    ght_threshold,
    gss_estimate,
    gst_estimate,
    gst_gamma,
    naive_estimate,
    oracle_estimate,
)
from .robust import (
    GroupLassoResult,
    IstState,
    RobustInstanceView,
    coordinatewise_median,
    group_lasso_fit,
    group_lasso_lambda,
    group_lasso_mu_deviation_check,
    ist_epsilon_a,
    ist_estimate,
    ist_gamma,
    robust_shrink,
    sample_mean,
)

__version__ = "0.1.0"
