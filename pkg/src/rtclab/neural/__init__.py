"""From-scratch neural stack: autodiff, layers, recurrent policy, Adam."""

from .adam import Adam, clip_grad_norm, global_grad_norm
from .autodiff import Var, backward, concat_rows, const, grad_of
from .checkpoint import CheckpointError, load_params, save_params
from .layers import (GruCellParams, fan_in_uniform, gru_cell, gru_cell_tape,
                     gru_init, leaky_relu, linear, linear_tape, linear_init,
                     orthogonal, sigmoid)
from .policy import MEAN_EPS, PolicyConfig, RecurrentPolicy, squashed_logp

__all__ = [
    "Adam",
    "CheckpointError",
    "GruCellParams",
    "MEAN_EPS",
    "PolicyConfig",
    "RecurrentPolicy",
    "Var",
    "backward",
    "clip_grad_norm",
    "concat_rows",
    "const",
    "fan_in_uniform",
    "global_grad_norm",
    "grad_of",
    "gru_cell",
    "gru_cell_tape",
    "gru_init",
    "leaky_relu",
    "linear",
    "linear_init",
    "linear_tape",
    "load_params",
    "orthogonal",
    "save_params",
    "sigmoid",
    "squashed_logp",
]
