"""
Federated contrastive pretraining: local MoCo-style rounds on every device,
feature exchange through the server and FedAvg of the main models.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from fcl_sim.contrastive import (
    AugmentationSpec,
    ContrastiveConfig,
    FeatureBatch,
    MemoryBank,
    augment,
    augment_batch,
    bank_push,
    info_nce_batch,
    momentum_update,
)
from fcl_sim.data import Dataset
from fcl_sim.exceptions import (
    ColdStartError,
    ConfigError,
    PolicyViolationError,
    ValidationError,
)
from fcl_sim.federation.qcl import NegativesPolicy, init_qcl, qcl_update
from fcl_sim.federation.records import RoundRecord
from fcl_sim.federation.server import (
    ServerState,
    build_remote_bank,
    collect_and_deidentify,
    fedavg,
    fedavg_weights,
)
from fcl_sim.logger import get_logger
from fcl_sim.numeric_core import (
    ArchitectureConfig,
    ModelParams,
    OptimizerState,
    backward,
    check_same_architecture,
    cosine_lr,
    forward,
    init_params,
    init_sgd,
    sgd_step,
)

logger = get_logger(__name__)


@dataclass
class FederationConfig:
    """
    Parameters
    ----------
    n_devices : int
        Number of simulated devices |C|.
    rounds : int
        Communication rounds T; 0 returns the initial model.
    active_ratio : float
        Fraction of devices selected per round, in (0, 1].
    local_epochs : int
        Local epochs E before each aggregation.
    negatives_policy : str
        ``local_only``, ``local_plus_remote`` or ``remote_only``.
    share_count : int
        Features each device uploads per round.
    global_seed : int
        Root of every RNG stream in the run.
    lr : float
        Initial pretraining learning rate of the cosine schedule.
    sgd_momentum, weight_decay : float
        Momentum-SGD hyperparameters.
    qcl_capacity : int, optional
        Overrides the default Q_CL capacity.
    aggregate : bool
        False trains every device independently (the local CL baseline).
    share_features : bool
        False disables the feature exchange and forces local_only.
    workers : int
        Devices trained concurrently within a round.
    """

    n_devices: int = 10
    rounds: int = 30
    active_ratio: float = 1.0
    local_epochs: int = 1
    negatives_policy: str = "remote_only"
    share_count: int = 64
    global_seed: int = 0
    lr: float = 0.03
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    qcl_capacity: Optional[int] = None
    aggregate: bool = True
    share_features: bool = True
    workers: int = 1

    def __post_init__(self):
        for name in ("n_devices", "local_epochs", "share_count", "workers"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"federation.{name} must be positive")
        if self.rounds < 0:
            raise ConfigError(f"federation.rounds must be non-negative, got {self.rounds}")
        if not 0.0 < self.active_ratio <= 1.0:
            raise ConfigError(
                f"federation.active_ratio must be in (0, 1], got {self.active_ratio}"
            )
        if self.lr <= 0:
            raise ConfigError("federation.lr must be positive")
        if self.qcl_capacity is not None and self.qcl_capacity <= 0:
            raise ConfigError("federation.qcl_capacity must be positive")
        try:
            self.negatives_policy = NegativesPolicy(self.negatives_policy).value
        except ValueError:
            raise ConfigError(
                f"unknown federation.negatives_policy {self.negatives_policy!r}; "
                f"expected one of {[p.value for p in NegativesPolicy]}"
            )

    @property
    def policy(self) -> NegativesPolicy:
        if not self.share_features:
            return NegativesPolicy.LOCAL_ONLY
        return NegativesPolicy(self.negatives_policy)

    @property
    def n_active(self) -> int:
        return max(1, math.ceil(self.active_ratio * self.n_devices - 1e-9))


@dataclass
class DeviceState:
    device_id: int
    train_partition: Dataset
    main_params: ModelParams
    momentum_params: ModelParams
    local_bank: MemoryBank
    optimizer_state: OptimizerState

    def __post_init__(self):
        check_same_architecture(self.main_params, self.momentum_params)
        if np.any(self.local_bank.origins != self.device_id):
            raise ValidationError(f"local bank of device {self.device_id} holds foreign features")


def device_rng(global_seed: int, *stream: int) -> np.random.Generator:
    """Independent stream keyed by (global_seed, *stream), e.g. (device_id, round)."""
    return np.random.default_rng(np.random.SeedSequence(global_seed, spawn_key=stream))


def local_cl_round(
    device: DeviceState,
    qcl: MemoryBank,
    contrastive: ContrastiveConfig,
    federation: FederationConfig,
    lr: float,
    rng: np.random.Generator,
    remote_bank: MemoryBank = None,
    policy=NegativesPolicy.LOCAL_ONLY,
    augmentation: AugmentationSpec = None,
    round_index: int = 0,
) -> Tuple[DeviceState, float]:
    """
    Local contrastive epochs on one device.

    Every step: two augmented views, q from the main model and k from the
    momentum model, InfoNCE of q against Q_CL, an SGD step on the main model,
    the EMA update, then k enters Q_CL (per policy) and the local bank.

    Returns
    ----------
    device : DeviceState
        The same object, updated in place.
    mean_loss : float
        Mean InfoNCE loss over all steps.

    Raises
    ----------
    PolicyViolationError
        If the device's own features reach Q_CL under remote_only.
    """
    policy = NegativesPolicy(policy)
    augmentation = augmentation or AugmentationSpec()
    data = device.train_partition
    if federation.local_epochs < 1:
        raise ValidationError("local_cl_round needs at least one local epoch")
    if not len(data):
        raise ValidationError(f"device {device.device_id} has no training samples")

    batch_size = contrastive.batch_size
    losses = []
    for _ in range(federation.local_epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), batch_size):
            index = order[start : start + batch_size]
            x_q, x_k = augment_batch(data.samples[index], augmentation, rng)

            q, stash = forward(device.main_params, x_q, "project")
            k, _ = forward(device.momentum_params, x_k, "project")
            loss, grad_q, _ = info_nce_batch(q, k, qcl, contrastive.tau)

            sgd_step(device.main_params, backward(stash, grad_q), device.optimizer_state, lr)
            momentum_update(device.main_params, device.momentum_params, contrastive.ema_momentum)

            keys = FeatureBatch.from_values(k, device.device_id, round_index)
            qcl_update(policy, qcl, keys, remote_bank, len(index), rng)
            bank_push(device.local_bank, keys)

            if policy is NegativesPolicy.REMOTE_ONLY and np.any(qcl.origins == device.device_id):
                raise PolicyViolationError(
                    f"device {device.device_id} found its own features in Q_CL "
                    f"in round {round_index}"
                )
            losses.append(loss)

    return device, float(np.mean(losses))


def share_features(
    device: DeviceState,
    share_count: int,
    rng: np.random.Generator,
    round_index: int = 0,
    augmentation: AugmentationSpec = None,
) -> FeatureBatch:
    """
    Momentum-model features of a seeded subsample of the device's training data.

    With ``augmentation`` the features are taken from one random view of each
    sample, the same kind of input the device's own keys are computed from.
    """
    data = device.train_partition
    index = np.sort(rng.choice(len(data), size=min(share_count, len(data)), replace=False))
    inputs = data.flat()[index]
    if augmentation is not None:
        views = [augment(x, augmentation, rng) for x in data.samples[index]]
        inputs = np.stack(views).reshape(len(index), -1)
    values, _ = forward(device.momentum_params, inputs, "project")
    return FeatureBatch.from_values(values, device.device_id, round_index)


class _DeviceOutcome(NamedTuple):
    device_id: int
    loss: float
    qcl_size: int
    policy: NegativesPolicy
    own_origin: int
    upload: Optional[FeatureBatch]


class FederatedPretrainer:
    """
    Round-by-round driver of federated contrastive pretraining.

    ``run_round`` advances one communication round; ``run`` drives all of them.
    With ``aggregate=False`` and ``share_features=False`` it trains every device
    in isolation (the local CL baseline) and ``device_params`` holds the result.

    Example
    ----------
    pretrainer = FederatedPretrainer(device_datasets, ContrastiveConfig(), FederationConfig())
    global_params, records = pretrainer.run()
    """

    def __init__(
        self,
        datasets: Sequence[Dataset],
        contrastive: ContrastiveConfig,
        federation: FederationConfig,
        augmentation: AugmentationSpec = None,
        arch: ArchitectureConfig = None,
        init: ModelParams = None,
    ):
        if len(datasets) != federation.n_devices:
            raise ConfigError(
                f"got {len(datasets)} device datasets for federation.n_devices={federation.n_devices}"
            )
        for device_id, dataset in enumerate(datasets):
            if not len(dataset):
                raise ValidationError(f"device {device_id} has an empty training partition")

        self.contrastive = contrastive
        self.federation = federation
        self.augmentation = augmentation or AugmentationSpec()

        if init is None:
            init = init_params(
                datasets[0].input_dim, arch, contrastive.feature_dim, seed=federation.global_seed
            )
        if init.feature_dim != contrastive.feature_dim:
            raise ConfigError(
                f"model emits {init.feature_dim}-d features, contrastive.feature_dim is "
                f"{contrastive.feature_dim}"
            )

        self.server = ServerState(init.copy())
        self.devices = [
            DeviceState(
                device_id,
                dataset,
                init.copy(),
                init.copy(),
                MemoryBank(contrastive.bank_capacity, contrastive.feature_dim),
                self._fresh_optimizer(init),
            )
            for device_id, dataset in enumerate(datasets)
        ]
        self.records: List[RoundRecord] = []

    @property
    def round_index(self) -> int:
        return self.server.round_index

    @property
    def device_params(self) -> List[ModelParams]:
        return [device.main_params for device in self.devices]

    def _fresh_optimizer(self, params: ModelParams) -> OptimizerState:
        return init_sgd(
            params,
            lr=self.federation.lr,
            momentum=self.federation.sgd_momentum,
            weight_decay=self.federation.weight_decay,
        )

    def qcl_capacity(self, policy: NegativesPolicy) -> int:
        if self.federation.qcl_capacity:
            return self.federation.qcl_capacity
        if policy.uses_remote:
            return (self.federation.n_devices - 1) * self.federation.share_count
        return self.contrastive.bank_capacity

    def select_devices(self, round_index: int) -> List[int]:
        n_devices, n_active = self.federation.n_devices, self.federation.n_active
        if n_active >= n_devices:
            return list(range(n_devices))
        rng = device_rng(self.federation.global_seed, round_index)
        return sorted(rng.choice(n_devices, size=n_active, replace=False).tolist())

    def _train_device(self, device_id: int, round_index: int, lr: float) -> _DeviceOutcome:
        federation = self.federation
        device = self.devices[device_id]
        rng = device_rng(federation.global_seed, device_id, round_index)

        if federation.aggregate:
            device.main_params = self.server.global_params.copy()
            device.momentum_params = self.server.global_params.copy()
            device.optimizer_state = self._fresh_optimizer(device.main_params)

        policy = federation.policy
        remote_bank = None
        if policy.uses_remote:
            try:
                remote_bank = build_remote_bank(self.server, device_id, rng)
            except ColdStartError:
                policy = NegativesPolicy.LOCAL_ONLY

        qcl = init_qcl(policy, device.local_bank, remote_bank, self.qcl_capacity(policy))
        _, loss = local_cl_round(
            device,
            qcl,
            self.contrastive,
            federation,
            lr,
            rng,
            remote_bank=remote_bank,
            policy=policy,
            augmentation=self.augmentation,
            round_index=round_index,
        )

        upload = None
        if federation.share_features:
            upload = share_features(
                device, federation.share_count, rng, round_index, self.augmentation
            )

        return _DeviceOutcome(
            device_id,
            loss,
            len(qcl),
            policy,
            int(np.sum(qcl.origins == device_id)),
            upload,
        )

    def run_round(self) -> RoundRecord:
        federation = self.federation
        t = self.server.round_index
        if t >= federation.rounds:
            raise ValidationError(f"all {federation.rounds} rounds have already run")

        lr = cosine_lr(t, federation.rounds, federation.lr)
        active = self.select_devices(t)

        if federation.workers > 1:
            with ThreadPoolExecutor(max_workers=federation.workers) as pool:
                outcomes = list(pool.map(lambda d: self._train_device(d, t, lr), active))
        else:
            outcomes = [self._train_device(d, t, lr) for d in active]

        fallbacks = [o.device_id for o in outcomes if o.policy is not federation.policy]
        if fallbacks:
            logger.info(
                f"Round {t}: no remote features yet, devices {fallbacks} fell back to local_only"
            )

        if federation.share_features:
            self.server.feature_registry.clear()
            collect_and_deidentify(self.server, [(o.device_id, o.upload) for o in outcomes])

        agg_weights = None
        if federation.aggregate:
            sizes = [len(self.devices[d].train_partition) for d in active]
            weights = fedavg_weights(sizes)
            self.server.global_params = fedavg(
                [(self.devices[d].main_params, n) for d, n in zip(active, sizes)]
            )
            agg_weights = {d: float(w) for d, w in zip(active, weights)}

        record = RoundRecord(
            round=t,
            lr=lr,
            device_losses={o.device_id: o.loss for o in outcomes},
            qcl_sizes={o.device_id: o.qcl_size for o in outcomes},
            policies={o.device_id: o.policy.value for o in outcomes},
            own_origin_in_qcl={o.device_id: o.own_origin for o in outcomes},
            agg_weights=agg_weights,
        )
        self.records.append(record)
        self.server.round_index += 1

        logger.info(
            f"Round {t + 1}/{federation.rounds} lr={lr:.5f} "
            f"loss={record.mean_loss:.4f} policy={federation.policy.value}"
        )
        return record

    def run(self) -> Tuple[ModelParams, List[RoundRecord]]:
        while self.server.round_index < self.federation.rounds:
            self.run_round()
        return self.server.global_params, self.records


def run_pretraining(
    datasets: Sequence[Dataset],
    contrastive: ContrastiveConfig,
    federation: FederationConfig,
    augmentation: AugmentationSpec = None,
    arch: ArchitectureConfig = None,
    init: ModelParams = None,
) -> Tuple[ModelParams, List[RoundRecord]]:
    """
    Runs every pretraining round and returns the final global model with the round log.
    """
    pretrainer = FederatedPretrainer(datasets, contrastive, federation, augmentation, arch, init)
    return pretrainer.run()
