"""Robust matrix regression with tube loss, nuclear-norm regularization,
ADMM-with-restart training, and sparse-outlier signal recovery."""

from ._kernels import NUMBA_ENABLED
from .data_bench import (NoiseSpec, ShapeKind, d100, generate_shape,
                         generate_synthetic, laplacian_sample, pcp, rae)
from .grmr import GrmrHyperParams, fit_grmr, solve_decomposition
from .linalg import (SvdFactors, norms, singular_value_shrink,
                     soft_threshold, svd, trace_inner)
from .qp_smo import DualQp, DualState, build_rmr_qp, recover_bias, solve, \
    solve_linear_svr
from .rmr import (AdmmState, MatrixSample, RmrHyperParams, RmrModel, fit,
                  hinge_residual, objective, predict, update_s, update_w_b)

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "AdmmState",
    "DualQp",
    "DualState",
    "GrmrHyperParams",
    "MatrixSample",
    "NoiseSpec",
    "RmrHyperParams",
    "RmrModel",
    "ShapeKind",
    "SvdFactors",
    "build_rmr_qp",
    "d100",
    "fit",
    "fit_grmr",
    "generate_shape",
    "generate_synthetic",
    "hinge_residual",
    "laplacian_sample",
    "norms",
    "objective",
    "pcp",
    "predict",
    "rae",
    "recover_bias",
    "singular_value_shrink",
    "soft_threshold",
    "solve",
    "solve_decomposition",
    "solve_linear_svr",
    "svd",
    "trace_inner",
    "update_s",
    "update_w_b",
]
