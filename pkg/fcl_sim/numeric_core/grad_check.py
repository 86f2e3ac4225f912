"""
Central finite-difference verification of analytic gradients.
"""
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Sequence, Tuple

import numpy as np

from fcl_sim.logger import get_logger
from fcl_sim.numeric_core.main import ForwardStash, ModelParams

logger = get_logger(__name__)


class LossEvaluation(NamedTuple):
    loss: float
    grads: ModelParams
    stashes: Sequence[ForwardStash] = ()


@dataclass
class GradCheckResult:
    max_relative_error: float
    n_checked: int
    skipped: List[Tuple[str, int]] = field(default_factory=list)

    def __float__(self):
        return self.max_relative_error


def _evaluate(loss_closure, params) -> LossEvaluation:
    out = loss_closure(params)
    if isinstance(out, LossEvaluation):
        return out
    return LossEvaluation(*out)


def _masks(evaluation: LossEvaluation) -> List[np.ndarray]:
    return [mask for stash in evaluation.stashes for mask in stash.relu_masks()]


def _crosses_kink(base, plus, minus) -> bool:
    for b, p, m in zip(_masks(base), _masks(plus), _masks(minus)):
        if not (np.array_equal(b, p) and np.array_equal(b, m)):
            return True
    return False


def grad_check(
    params: ModelParams,
    loss_closure: Callable[[ModelParams], LossEvaluation],
    n_probes: int = 20,
    seed: int = 0,
    eps: float = 1e-5,
    abs_floor: float = 1e-5,
) -> GradCheckResult:
    """
    Compares analytic gradients against central differences on sampled coordinates.

    Parameters
    ----------
    params : ModelParams
        Perturbed in place during the check and restored afterwards.
    loss_closure : callable
        Maps params to ``LossEvaluation(loss, grads, stashes)`` (a plain
        ``(loss, grads)`` tuple also works). Stashes let the check detect ReLU
        kinks; probes whose perturbation flips any ReLU are skipped.
    n_probes : int
        Number of parameter coordinates to sample without replacement.
    seed : int
    eps : float
        Finite-difference step.
    abs_floor : float
        Lower bound on the relative-error denominator.

    Returns
    ----------
    result : GradCheckResult
        Worst relative error over the checked probes plus the skipped coordinates.
    """
    base = _evaluate(loss_closure, params)
    arrays, names = params.arrays(), params.array_names()
    grad_arrays = base.grads.arrays()

    sizes = np.array([a.size for a in arrays])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    flat = rng.choice(offsets[-1], size=min(n_probes, offsets[-1]), replace=False)

    worst, checked, skipped = 0.0, 0, []
    for coordinate in np.sort(flat):
        a = int(np.searchsorted(offsets, coordinate, side="right") - 1)
        i = int(coordinate - offsets[a])
        array = arrays[a]
        original = array.flat[i]

        array.flat[i] = original + eps
        plus = _evaluate(loss_closure, params)
        array.flat[i] = original - eps
        minus = _evaluate(loss_closure, params)
        array.flat[i] = original

        if _crosses_kink(base, plus, minus):
            skipped.append((names[a], i))
            continue

        numeric = (plus.loss - minus.loss) / (2.0 * eps)
        analytic = grad_arrays[a].flat[i]
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), abs_floor)
        worst = max(worst, error)
        checked += 1

    if skipped:
        logger.info(f"Skipped {len(skipped)} probes next to a ReLU kink: {skipped}")

    return GradCheckResult(worst, checked, skipped)
