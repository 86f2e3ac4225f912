"""
Negatives bank Q_CL used by the contrastive loss, under three policies:

- ``local_only``: plain MoCo queue of the device's own momentum features.
- ``local_plus_remote``: starts from the local bank; every step enqueues the local
  keys plus B features sampled uniformly from the remote bank.
- ``remote_only``: starts from the remote bank; every step enqueues only B
  sampled remote features, so the device never contrasts against itself.
"""
from enum import Enum

import numpy as np

from fcl_sim.contrastive import FeatureBatch, MemoryBank, bank_push, bank_sample_uniform
from fcl_sim.exceptions import EmptyBankError


class NegativesPolicy(str, Enum):
    LOCAL_ONLY = "local_only"
    LOCAL_PLUS_REMOTE = "local_plus_remote"
    REMOTE_ONLY = "remote_only"

    @property
    def uses_remote(self) -> bool:
        return self is not NegativesPolicy.LOCAL_ONLY


def _require_remote(policy: NegativesPolicy, remote_bank: MemoryBank):
    if remote_bank is None or not len(remote_bank):
        raise EmptyBankError(f"policy {policy.value} needs a nonempty remote bank")


def init_qcl(
    policy, local_bank: MemoryBank, remote_bank: MemoryBank = None, capacity: int = None
) -> MemoryBank:
    """
    Q_CL at the start of a round: a copy of the remote bank under remote_only,
    otherwise a copy of the local bank.
    """
    policy = NegativesPolicy(policy)
    if policy.uses_remote:
        _require_remote(policy, remote_bank)

    source = remote_bank if policy is NegativesPolicy.REMOTE_ONLY else local_bank
    return source.copy(capacity=capacity or source.capacity)


def qcl_update(
    policy,
    qcl: MemoryBank,
    q_local_batch: FeatureBatch,
    remote_bank: MemoryBank,
    batch_size: int,
    rng: np.random.Generator,
) -> MemoryBank:
    """
    Enqueues the step's features into Q_CL with FIFO eviction.

    Parameters
    ----------
    policy : NegativesPolicy or str
    qcl : MemoryBank
        Updated in place.
    q_local_batch : FeatureBatch
        Momentum-model features of the current minibatch.
    remote_bank : MemoryBank
        Q_{r,i}; unused under local_only.
    batch_size : int
        Number of remote features to sample.
    rng : np.random.Generator
    """
    policy = NegativesPolicy(policy)
    if policy is NegativesPolicy.LOCAL_ONLY:
        return bank_push(qcl, q_local_batch)

    _require_remote(policy, remote_bank)
    remote = bank_sample_uniform(remote_bank, batch_size, rng)
    if policy is NegativesPolicy.LOCAL_PLUS_REMOTE:
        return bank_push(qcl, FeatureBatch.concat([q_local_batch, remote], qcl.dim))
    return bank_push(qcl, remote)
