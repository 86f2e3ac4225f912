"""
Momentum SGD for contrastive pretraining and Adam for fine-tuning.

Both update a ModelParams in place from a gradient ModelParams of the same
architecture.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List

import numpy as np

from fcl_sim.exceptions import ShapeError, ValidationError
from fcl_sim.numeric_core.main import ModelParams


class OptimizerKind(str, Enum):
    SGD = "sgd-momentum"
    ADAM = "adam"


@dataclass
class OptimizerState:
    kind: OptimizerKind
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    velocity: List[np.ndarray] = field(default_factory=list)
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)
    step: int = 0


def init_sgd(
    params: ModelParams, lr: float = 0.03, momentum: float = 0.9, weight_decay: float = 0.0
) -> OptimizerState:
    return OptimizerState(
        OptimizerKind.SGD,
        lr=lr,
        momentum=momentum,
        weight_decay=weight_decay,
        velocity=[np.zeros_like(p) for p in params.arrays()],
    )


def init_adam(
    params: ModelParams,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> OptimizerState:
    return OptimizerState(
        OptimizerKind.ADAM,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        first_moment=[np.zeros_like(p) for p in params.arrays()],
        second_moment=[np.zeros_like(p) for p in params.arrays()],
    )


def _aligned(params: ModelParams, grads: ModelParams, buffers: List[np.ndarray]):
    names = params.array_names()
    p_arrays, g_arrays = params.arrays(), grads.arrays()

    if len(g_arrays) != len(p_arrays) or len(buffers) != len(p_arrays):
        raise ShapeError(
            f"{len(p_arrays)} parameters, {len(g_arrays)} gradients, {len(buffers)} buffers"
        )
    for name, p, g, b in zip(names, p_arrays, g_arrays, buffers):
        if p.shape != g.shape or p.shape != b.shape:
            raise ShapeError(
                f"param {p.shape}, grad {g.shape}, buffer {b.shape}", layer=name
            )

    return zip(p_arrays, g_arrays)


def sgd_step(
    params: ModelParams, grads: ModelParams, state: OptimizerState, lr: float = None
) -> ModelParams:
    """
    One momentum-SGD update with optional L2 weight decay: v = mu*v + (g + wd*p); p -= lr*v.
    """
    lr = state.lr if lr is None else lr

    for (p, g), v in zip(_aligned(params, grads, state.velocity), state.velocity):
        d = g + state.weight_decay * p if state.weight_decay else g
        v *= state.momentum
        v += d
        p -= lr * v

    state.step += 1
    return params


def adam_step(
    params: ModelParams, grads: ModelParams, state: OptimizerState, lr: float = None
) -> ModelParams:
    """
    One bias-corrected Adam update.
    """
    lr = state.lr if lr is None else lr
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step

    pairs = _aligned(params, grads, state.first_moment)
    for (p, g), m, v in zip(pairs, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)

    return params


def optimizer_step(
    params: ModelParams, grads: ModelParams, state: OptimizerState, lr: float = None
) -> ModelParams:
    if state.kind == OptimizerKind.SGD:
        return sgd_step(params, grads, state, lr)
    if state.kind == OptimizerKind.ADAM:
        return adam_step(params, grads, state, lr)
    raise ValidationError(f"unknown optimizer kind {state.kind!r}")
