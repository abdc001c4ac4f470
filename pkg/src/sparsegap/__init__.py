"""Sparse regression on hard designs: the exact-cover reduction, RE estimation and the l0/Lasso gap."""
from .errors import *  # noqa: F401,F403
from .estimators import (
    Estimate,
    RegressionProblem,
    l0_estimate,
    lasso,
    threshold_topk,
    thresholded_lasso,
)
from .experiments import (
    ExperimentReport,
    compute_reduction_params,
    gap_experiment,
    reduction_params,
    sample_theta_star,
    simulate_mse,
)
from .hard_design import HardDesign, HardDesignParams, build_hard_design, calibrate_x, quantize
from .re_cond import check_normalization, re_upper_bound, zero_re_certificate
from .x3c import (
    ExactCover,
    X3CInstance,
    build_cover_matrix,
    build_response,
    decode_cover,
    encode_cover,
    solve_x3c_bruteforce,
)

__version__ = "0.1.0"
