from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import logsumexp, softmax

from fcl_sim.contrastive.features import FeatureBatch, FeatureVec, MemoryBank
from fcl_sim.exceptions import ConfigError, ShapeError, ValidationError
from fcl_sim.numeric_core import ModelParams, check_same_architecture


@dataclass
class ContrastiveConfig:
    """
    Parameters
    ----------
    tau : float
        Softmax temperature of the contrastive loss.
    feature_dim : int
        Dimension d of the projected features.
    batch_size : int
        Minibatch size B; also the number of remote features sampled per step.
    bank_capacity : int
        Capacity K of each device's local feature bank.
    ema_momentum : float
        Momentum m of the EMA model update, in [0, 1).
    """

    tau: float = 0.07
    feature_dim: int = 128
    batch_size: int = 128
    bank_capacity: int = 4096
    ema_momentum: float = 0.99

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"contrastive.tau must be positive, got {self.tau}")
        for name in ("feature_dim", "batch_size", "bank_capacity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"contrastive.{name} must be positive")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ConfigError(
                f"contrastive.ema_momentum must be in [0, 1), got {self.ema_momentum}"
            )


def _rows(x) -> np.ndarray:
    if isinstance(x, FeatureVec):
        return x.values[None, :]
    if isinstance(x, (FeatureBatch, MemoryBank)):
        return x.values
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def _negatives_matrix(negatives, dim: int) -> np.ndarray:
    if isinstance(negatives, (FeatureBatch, MemoryBank)):
        return negatives.values
    if isinstance(negatives, np.ndarray):
        return negatives.reshape(-1, dim)
    if len(negatives) == 0:
        return np.zeros((0, dim))
    return np.stack([_rows(n)[0] for n in negatives])


def info_nce_batch(q: np.ndarray, k: np.ndarray, negatives, tau: float):
    """
    Mean contrastive loss of a minibatch of anchors against a shared set of negatives.

    Parameters
    ----------
    q : np.ndarray
        Anchors of shape (B, d) from the main model.
    k : np.ndarray
        Positives of shape (B, d) from the momentum model.
    negatives : np.ndarray, FeatureBatch or MemoryBank
        Negatives of shape (K, d); treated as constants.
    tau : float

    Returns
    ----------
    loss : float
        Mean over the batch of -log softmax of the positive logit.
    grad_q, grad_k : np.ndarray
        Gradients of the mean loss with respect to q and k.
    """
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")

    q, k = _rows(q), _rows(k)
    if q.shape != k.shape or q.shape[1] == 0:
        raise ShapeError(f"anchors {q.shape} and positives {k.shape} disagree")
    negatives = _negatives_matrix(negatives, q.shape[1])
    if negatives.shape[1] != q.shape[1]:
        raise ShapeError(f"negatives are {negatives.shape[1]}-d, anchors {q.shape[1]}-d")

    batch = q.shape[0]
    if negatives.shape[0] == 0:
        return 0.0, np.zeros_like(q), np.zeros_like(k)

    positive = np.sum(q * k, axis=1) / tau
    logits = np.concatenate([positive[:, None], q @ negatives.T / tau], axis=1)
    loss = float(np.mean(logsumexp(logits, axis=1) - positive))

    probs = softmax(logits, axis=1)
    pull = (probs[:, 0] - 1.0)[:, None]
    grad_q = (pull * k + probs[:, 1:] @ negatives) / (tau * batch)
    grad_k = pull * q / (tau * batch)

    return loss, grad_q, grad_k


def info_nce(
    q: Union[FeatureVec, np.ndarray],
    k_pos: Union[FeatureVec, np.ndarray],
    negatives: Union[Sequence[FeatureVec], FeatureBatch, np.ndarray],
    tau: float,
):
    """
    Contrastive loss of one anchor/positive pair against a set of negatives.

    Returns
    ----------
    loss : float
    grad_q, grad_k : np.ndarray
        Vectors of dimension d.
    """
    loss, grad_q, grad_k = info_nce_batch(_rows(q), _rows(k_pos), negatives, tau)
    return loss, grad_q[0], grad_k[0]


def momentum_update(main: ModelParams, momentum_model: ModelParams, m: float) -> ModelParams:
    """
    EMA update p_mom = m * p_mom + (1 - m) * p_main, in place on momentum_model.
    """
    check_same_architecture(main, momentum_model)
    if not 0.0 <= m <= 1.0:
        raise ValidationError(f"momentum must be in [0, 1], got {m}")

    for p_main, p_mom in zip(main.arrays(), momentum_model.arrays()):
        p_mom *= m
        p_mom += (1.0 - m) * p_main

    return momentum_model
