from fcl_sim.numeric_core.main import (
    ArchitectureConfig,
    ForwardStash,
    Layer,
    ModelParams,
    attach_classifier,
    backward,
    check_same_architecture,
    cross_entropy,
    forward,
    init_params,
    l2_normalize,
)
from fcl_sim.numeric_core.optimizers import (
    OptimizerKind,
    OptimizerState,
    adam_step,
    init_adam,
    init_sgd,
    optimizer_step,
    sgd_step,
)
from fcl_sim.numeric_core.schedules import cosine_lr, step_lr
from fcl_sim.numeric_core.grad_check import GradCheckResult, LossEvaluation, grad_check
