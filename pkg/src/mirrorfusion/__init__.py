"""Video mirror segmentation: short-term and long-term cross-frame attention,
gated fusion, and a self-contained autodiff training stack."""

import os as _os

# MF_THREADS caps BLAS worker threads; must be exported before numpy loads.
if "MF_THREADS" in _os.environ:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["MF_THREADS"])

from .tensor import Tensor, Tape, no_grad, precision, set_default_dtype
from .config import EncoderConfig, TrainConfig, build_train_config
from .network import MirrorDetectionNet, PredictionSet, model_forward

__all__ = [
    "Tensor", "Tape", "no_grad", "precision", "set_default_dtype",
    "EncoderConfig", "TrainConfig", "build_train_config",
    "MirrorDetectionNet", "PredictionSet", "model_forward",
]
__version__ = "0.1.0"
