"""
Per-round pretraining log and its CSV form.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from fcl_sim.exceptions import ValidationError
from fcl_sim.logger import get_logger

logger = get_logger(__name__)

CSV_COLUMNS = [
    "round",
    "device_id",
    "mean_loss",
    "lr",
    "qcl_size",
    "agg_weight",
    "policy",
    "qcl_own_origin",
]


@dataclass
class RoundRecord:
    """
    Parameters
    ----------
    round : int
    lr : float
        Learning rate used by every device this round.
    device_losses : dict
        Mean contrastive loss per active device.
    qcl_sizes : dict
        Size of each device's Q_CL at the end of the round.
    policies : dict
        Negatives policy each device actually trained with; differs from the
        configured one on cold start.
    own_origin_in_qcl : dict
        Count of the device's own features in its Q_CL at round end.
    agg_weights : dict, optional
        FedAvg weights; None when the round did not aggregate.
    """

    round: int
    lr: float
    device_losses: Dict[int, float]
    qcl_sizes: Dict[int, int]
    policies: Dict[int, str]
    own_origin_in_qcl: Dict[int, int] = field(default_factory=dict)
    agg_weights: Optional[Dict[int, float]] = None

    def __post_init__(self):
        if self.agg_weights is not None:
            total = float(np.sum(list(self.agg_weights.values())))
            if abs(total - 1.0) > 1e-12:
                raise ValidationError(f"aggregation weights sum to {total}, not 1")

    @property
    def mean_loss(self) -> float:
        return float(np.mean(list(self.device_losses.values())))

    def rows(self) -> List[dict]:
        return [
            {
                "round": self.round,
                "device_id": device_id,
                "mean_loss": loss,
                "lr": self.lr,
                "qcl_size": self.qcl_sizes[device_id],
                "agg_weight": None if self.agg_weights is None else self.agg_weights[device_id],
                "policy": self.policies[device_id],
                "qcl_own_origin": self.own_origin_in_qcl.get(device_id, 0),
            }
            for device_id, loss in sorted(self.device_losses.items())
        ]


def records_to_frame(records: List[RoundRecord]) -> pd.DataFrame:
    rows = [row for record in records for row in record.rows()]
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def write_round_log(records: List[RoundRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records_to_frame(records).to_csv(path, index=False)
    logger.info(f"Round log written to {path}")
    return path
