"""Minimal numpy neural-network engine: layers with explicit backward passes,
momentum SGD with value clipping, and a finite-difference gradient checker."""

from .functional import (ShapeError, UninitializedStatisticsError, avg_pool_time,
                         batch_norm_forward, brnn_layer_forward, cce_loss, dense_forward,
                         dropout_forward, elu, softmax, softmax_cce)
from .gradcheck import GradCheckReport, grad_check, standard_suite
from .layers import (BRNN, Activation, AvgPoolTime, BatchNorm, Dense, Dropout, Flatten, Layer,
                     ParameterSet, Sequential, sgd_step)

__all__ = [
    "Activation", "AvgPoolTime", "BRNN", "BatchNorm", "Dense", "Dropout", "Flatten",
    "GradCheckReport", "Layer", "ParameterSet", "Sequential", "ShapeError",
    "UninitializedStatisticsError", "avg_pool_time", "batch_norm_forward",
    "brnn_layer_forward", "cce_loss", "dense_forward", "dropout_forward", "elu",
    "grad_check", "sgd_step", "softmax", "softmax_cce", "standard_suite",
]
