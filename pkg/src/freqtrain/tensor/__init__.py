from .core import GraphConsumedError, Tensor, TensorError, as_tensor, concat, no_grad, stack, tensor, zero_grads
from .functional import (
    batchnorm1d,
    bilstm,
    conv1d,
    conv_output_length,
    dense,
    dropout,
    lstm,
    maxpool1d,
    relu,
    same_padding,
    sigmoid,
    softmax,
    tanh,
)
from .optim import AdamState, adam_step, clip_grad_norm, global_grad_norm
from .serialize import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "AdamState",
    "CheckpointError",
    "GraphConsumedError",
    "Tensor",
    "TensorError",
    "adam_step",
    "as_tensor",
    "batchnorm1d",
    "bilstm",
    "clip_grad_norm",
    "concat",
    "conv1d",
    "conv_output_length",
    "dense",
    "dropout",
    "global_grad_norm",
    "load_checkpoint",
    "lstm",
    "maxpool1d",
    "no_grad",
    "relu",
    "same_padding",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "stack",
    "tanh",
    "tensor",
    "zero_grads",
]
