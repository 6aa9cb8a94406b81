"""Numerical substrate: autodiff tensors, gradient checking, Adam, PRNG."""

from .adam import Adam
from .gradcheck import grad_check, max_relative_error, numerical_gradient
from .rng import Rng, gaussian
from .tensor import (
    DomainError,
    NumericalError,
    Parameter,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    exp,
    expand,
    grouped_linear,
    leaky_relu,
    linear,
    log,
    log_softmax,
    matmul,
    max_with_index,
    mean,
    mul,
    neg,
    no_grad,
    pick,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    square,
    sub,
    sum,
    sum_squares,
    take,
    tanh,
    transpose,
)
