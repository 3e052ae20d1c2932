"""Visually attentive splice localization: a from-scratch numpy implementation.

Submodules
----------
tensor      rank-4 tensors with tape-based reverse-mode autodiff
layers      convolution, transposed convolution, batch norm, pooling, Z-pool
attention   triplet attention
extractor   per-domain dense-backbone feature extractor
fusion      multi-domain fusion and multi-receptive-field upsampling
model       full network and parameter store
train       focal loss, Adam, schedule, training loop
checkpoint  binary checkpoint format
data        synthetic samples, edge/depth planes, pixmap I/O
metrics     IoU, pixel accuracy, F1, AUC and reports
gradcheck   finite-difference gradient verification
"""

from .config import ModelConfig
from .model import ParamStore, SpliceNet, build_model
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = ["ModelConfig", "ParamStore", "SpliceNet", "Tape", "Tensor", "backward", "build_model"]
