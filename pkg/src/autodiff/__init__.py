from src.autodiff.ops import (
    concat,
    cross_entropy,
    dropout,
    layer_norm,
    max_over_axis,
    normalize,
    one_hot,
    relu,
    sigmoid,
    softmax,
    stack_rows,
    tanh,
)
from src.autodiff.optim import AdamState, adam_step, collect_grads, learning_rate_at, zero_grad
from src.autodiff.tensor import (
    Tape,
    Tensor,
    active_tape,
    as_tensor,
    default_dtype,
    matmul,
    mean,
    reshape,
    set_precision,
    tensor_sum,
    transpose,
)


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from `loss` on the tape it was recorded on."""
    if loss.tape is None:
        raise ValueError("Loss is not on a tape; build it inside `with Tape():`")
    loss.tape.backward(loss)


__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "as_tensor",
    "backward",
    "collect_grads",
    "concat",
    "cross_entropy",
    "default_dtype",
    "dropout",
    "layer_norm",
    "learning_rate_at",
    "matmul",
    "max_over_axis",
    "mean",
    "normalize",
    "one_hot",
    "relu",
    "reshape",
    "set_precision",
    "sigmoid",
    "softmax",
    "stack_rows",
    "tanh",
    "tensor_sum",
    "transpose",
    "zero_grad",
]
