import math
from typing import Sequence

from fcl_sim.exceptions import ValidationError


def cosine_lr(round: int, total_rounds: int, lr0: float) -> float:
    """
    Cosine decay from lr0 at round 0 to 0 at total_rounds.
    """
    if total_rounds < 1:
        raise ValidationError(f"total_rounds must be >= 1, got {total_rounds}")
    if not 0 <= round <= total_rounds:
        raise ValidationError(f"round {round} outside [0, {total_rounds}]")

    return lr0 * 0.5 * (1.0 + math.cos(math.pi * round / total_rounds))


def step_lr(
    epoch: int, lr0: float, milestones: Sequence[int] = (12, 16), gamma: float = 0.2
) -> float:
    """
    Multiplies lr0 by gamma once for every milestone already reached.
    """
    if epoch < 0:
        raise ValidationError(f"epoch must be >= 0, got {epoch}")

    return lr0 * gamma ** sum(1 for m in milestones if epoch >= m)
