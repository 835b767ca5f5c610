import numpy as np

from . import ops
from .gradcheck import GradCheckReport, check_gradients, numeric_gradient
from .ops import (
    bmm,
    concat,
    conv2d_3x3,
    cross_entropy_logits,
    detach,
    leaky_relu,
    log_softmax_rows,
    lstm_cell,
    masked_softmax_rows,
    matmul,
    relu,
    segment_softmax,
    segment_sum,
    sigmoid,
    softmax_rows,
    take,
    tanh,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tape, Tensor, backward, parameter


def glorot(rng, shape, name=None) -> Tensor:
    fan_in, fan_out = shape[0], shape[-1]
    if len(shape) > 2:
        receptive = 1
        for s in shape[2:]:
            receptive *= s
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    limit = (6.0 / (fan_in + fan_out)) ** 0.5
    return parameter(rng.uniform(-limit, limit, size=shape), name=name)


def zeros(shape, name=None) -> Tensor:
    return parameter(np.zeros(shape), name=name)
