"""Learnable spectral graph wavelets for dynamic graphs."""

import os as _os

# DEFT_THREADS caps BLAS worker threads; it has to be applied before numpy loads
if _os.environ.get("DEFT_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["DEFT_THREADS"])

from .chebyshev import ChebyshevFilter, ScaleSet, apply_filter, evaluate_filter, fit_chebyshev, wavelet_vector  # noqa: E402
from .config import DeftConfig  # noqa: E402
from .data import SbmConfig, generate_dynamic_sbm, load_snapshots, save_snapshots  # noqa: E402
from .graph import DynamicGraph, GraphSnapshot, SparseMatrix, build_laplacian, estimate_lambda_max  # noqa: E402
from .model import DeftModel  # noqa: E402
from .oracle import SpectralOracle, exact_filter_apply  # noqa: E402
from .tasks import TaskSpec, attach_head, evaluate, fit, train_epoch  # noqa: E402

__all__ = [
    "ChebyshevFilter", "ScaleSet", "apply_filter", "evaluate_filter", "fit_chebyshev", "wavelet_vector",
    "DeftConfig", "SbmConfig", "generate_dynamic_sbm", "load_snapshots", "save_snapshots",
    "DynamicGraph", "GraphSnapshot", "SparseMatrix", "build_laplacian", "estimate_lambda_max",
    "DeftModel", "SpectralOracle", "exact_filter_apply", "TaskSpec", "attach_head", "evaluate", "fit", "train_epoch",
]
