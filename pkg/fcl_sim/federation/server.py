"""
Server side of a round: FedAvg aggregation and the feature registry that
de-identifies uploads and redistributes them as remote negatives.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from fcl_sim.contrastive import FeatureBatch, FeatureVec, MemoryBank
from fcl_sim.exceptions import ColdStartError, IntegrityError, ValidationError
from fcl_sim.numeric_core import ModelParams, check_same_architecture


@dataclass
class ServerState:
    global_params: ModelParams
    feature_registry: Dict[int, FeatureBatch] = field(default_factory=dict)
    round_index: int = 0


def fedavg_weights(sizes: Sequence[int]) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0 or np.any(sizes <= 0):
        raise ValidationError(f"aggregation needs positive sample counts, got {sizes.tolist()}")
    return sizes / sizes.sum()


def fedavg(updates: List[Tuple[ModelParams, int]]) -> ModelParams:
    """
    Sample-count-weighted mean of device models.

    Parameters
    ----------
    updates : list of (ModelParams, int)
        Device parameters with the number of samples they were trained on.

    Returns
    ----------
    params : ModelParams
        Every array is sum_c (n_c / sum_i n_i) * theta_c.
    """
    if not updates:
        raise ValidationError("fedavg needs at least one update")

    first = updates[0][0]
    for params, _ in updates[1:]:
        check_same_architecture(first, params)
    weights = fedavg_weights([n for _, n in updates])

    averaged = first.zeros_like()
    for (params, _), weight in zip(updates, weights):
        for total, array in zip(averaged.arrays(), params.arrays()):
            total += weight * array

    return averaged


def collect_and_deidentify(
    server: ServerState,
    uploads: List[Tuple[int, Union[FeatureBatch, Sequence[FeatureVec]]]],
) -> Dict[int, FeatureBatch]:
    """
    Replaces each uploading device's registry entry with its new features.

    Origin tags stay in the registry so Q_{r,i} can exclude device i's own
    features; they never leave the server (see ``download_payload``).

    Raises
    ----------
    IntegrityError
        When a feature's origin differs from the device that uploaded it.
    """
    dim = server.global_params.feature_dim
    for device_id, feats in uploads:
        batch = feats if isinstance(feats, FeatureBatch) else FeatureBatch.from_vectors(list(feats), dim)
        foreign = np.flatnonzero(batch.origins != device_id)
        if foreign.size:
            raise IntegrityError(
                f"device {device_id} uploaded {foreign.size} features tagged with "
                f"origins {sorted(set(batch.origins[foreign].tolist()))}"
            )
        server.feature_registry[device_id] = batch.copy()

    return server.feature_registry


def build_remote_bank(server: ServerState, device_id: int, rng: np.random.Generator) -> MemoryBank:
    """
    Q_{r,i}: the shuffled union of every other device's registered features.

    Raises
    ----------
    ColdStartError
        When no other device has uploaded yet.
    """
    others = [
        server.feature_registry[c] for c in sorted(server.feature_registry) if c != device_id
    ]
    dim = server.global_params.feature_dim
    pooled = FeatureBatch.concat(others, dim)
    if not len(pooled):
        raise ColdStartError(f"no remote features available for device {device_id}")

    return MemoryBank(len(pooled), dim, pooled.take(rng.permutation(len(pooled))))


def download_payload(server: ServerState, device_id: int, rng: np.random.Generator) -> dict:
    """
    Wire form of the remote features sent to a device: anonymous vectors only.
    """
    bank = build_remote_bank(server, device_id, rng)
    return {"round": server.round_index, "features": bank.values.tolist()}
