"""Minimal reverse-mode differentiation core used by the model and objective.

Covers exactly the operation set the model needs: dense layers, elu / sigmoid
/ tanh / softmax nonlinearities, a vanilla RNN cell with full backpropagation
through time, pathwise Gaussian and gumbel-softmax sampling, Adam with
decoupled weight decay, finite-difference gradient verification, and a
portable JSON checkpoint container. Float64 throughout; no GPU, no
higher-order derivatives.
"""

from skillseg.diffcore.adam import AdamState
from skillseg.diffcore.checkpoint import load_checkpoint, save_checkpoint
from skillseg.diffcore.gradcheck import grad_check
from skillseg.diffcore.params import ParameterSet, glorot_uniform
from skillseg.diffcore.tensor import (
    Tensor,
    affine,
    backward,
    concat,
    const,
    dotsum,
    elu,
    exp,
    gaussian_reparam,
    gumbel_softmax,
    log,
    log_softmax,
    logsumexp,
    matmul,
    mean,
    relu_mask,
    repeat_rows,
    reshape,
    rnn_cell,
    sigmoid,
    softmax,
    tanh,
    tsum,
    weighted_colsum,
)

__all__ = [
    "AdamState",
    "ParameterSet",
    "Tensor",
    "affine",
    "backward",
    "concat",
    "const",
    "dotsum",
    "elu",
    "exp",
    "gaussian_reparam",
    "glorot_uniform",
    "grad_check",
    "gumbel_softmax",
    "load_checkpoint",
    "log",
    "log_softmax",
    "logsumexp",
    "matmul",
    "mean",
    "relu_mask",
    "repeat_rows",
    "reshape",
    "rnn_cell",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "tanh",
    "tsum",
    "weighted_colsum",
]
