from .tensor import Parameter, Tensor
from .functional import (
    BN_EPS,
    BN_MOMENTUM,
    BNStats,
    batch_norm,
    conv2d,
    cross_entropy,
    global_avg_pool,
    linear,
    relu,
    scaled_noise_add,
    slice_features,
    slice_filters,
)
from .optim import OptimizerConfig, cosine_lr, sgd_step

__all__ = [
    "BN_EPS",
    "BN_MOMENTUM",
    "BNStats",
    "OptimizerConfig",
    "Parameter",
    "Tensor",
    "batch_norm",
    "conv2d",
    "cosine_lr",
    "cross_entropy",
    "global_avg_pool",
    "linear",
    "relu",
    "scaled_noise_add",
    "sgd_step",
    "slice_features",
    "slice_filters",
]
