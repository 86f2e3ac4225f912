"""
Supervised fine-tuning of a pretrained encoder with a small labelled subset,
either independently per device or with FedAvg across devices.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from fcl_sim.data import Dataset
from fcl_sim.exceptions import ConfigError, ValidationError
from fcl_sim.federation import fedavg
from fcl_sim.logger import get_logger
from fcl_sim.numeric_core import (
    ModelParams,
    OptimizerState,
    adam_step,
    attach_classifier,
    backward,
    cross_entropy,
    forward,
    init_adam,
    step_lr,
)

logger = get_logger(__name__)

MODES = ("local", "federated")


@dataclass
class FinetuneConfig:
    """
    Parameters
    ----------
    mode : str
        ``local`` or ``federated``.
    label_fraction : float
        Fraction L of each device's training set that carries labels.
    epochs : int
        Local fine-tuning epochs.
    rounds : int
        Federated fine-tuning rounds.
    local_batch_size, federated_batch_size : int
    lr : float
        Adam learning rate.
    lr_decay : float
        Factor applied at every milestone epoch in local mode.
    milestones : tuple of int
    local_epochs : int
        Epochs per device between aggregations in federated mode.
    linear_probe : bool
        Freeze the encoder and train only the classifier.
    seed : int
        Seeds the classifier initialization and minibatch order.
    """

    mode: str = "local"
    label_fraction: float = 0.1
    epochs: int = 20
    rounds: int = 100
    local_batch_size: int = 256
    federated_batch_size: int = 128
    lr: float = 1e-4
    lr_decay: float = 0.2
    milestones: Tuple[int, ...] = (12, 16)
    local_epochs: int = 1
    linear_probe: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"finetune.mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ConfigError(
                f"finetune.label_fraction must be in (0, 1], got {self.label_fraction}"
            )
        if self.epochs < 0 or self.rounds < 0:
            raise ConfigError("finetune.epochs and finetune.rounds must be non-negative")
        for name in ("local_batch_size", "federated_batch_size", "local_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"finetune.{name} must be positive")
        if self.lr <= 0 or not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("finetune.lr must be positive and finetune.lr_decay in (0, 1]")
        self.milestones = tuple(int(m) for m in self.milestones)


def _stream(seed: int, device_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(device_id,)))


def _freeze_encoder(grads: ModelParams) -> ModelParams:
    for layer in grads.encoder_layers:
        layer.weight.fill(0.0)
        layer.bias.fill(0.0)
    return grads


def supervised_epoch(
    model: ModelParams,
    state: OptimizerState,
    data: Dataset,
    batch_size: int,
    lr: float,
    rng: np.random.Generator,
    linear_probe: bool = False,
) -> float:
    """
    One shuffled pass of cross-entropy Adam steps; returns the mean minibatch loss.

    Under ``linear_probe`` the encoder gradients are zeroed, so Adam leaves the
    encoder weights untouched.
    """
    x, y = data.flat(), data.labels
    order = rng.permutation(len(data))
    losses = []

    for start in range(0, len(data), batch_size):
        index = order[start : start + batch_size]
        logits, stash = forward(model, x[index], "classify")
        loss, grad = cross_entropy(logits, y[index])
        grads = backward(stash, grad)
        if linear_probe:
            _freeze_encoder(grads)
        adam_step(model, grads, state, lr)
        losses.append(loss)

    return float(np.mean(losses))


def finetune_local(
    labeled: Dataset,
    pretrained: ModelParams,
    cfg: FinetuneConfig,
    device_id: int = 0,
    history: List[dict] = None,
) -> ModelParams:
    """
    Fine-tunes one device's copy of the pretrained encoder on its labelled subset.

    The projection head is dropped and a fresh linear classifier is attached to the
    encoder. Adam runs with a step schedule decaying by ``lr_decay`` at each milestone.

    Parameters
    ----------
    labeled : Dataset
        The device's labelled training subset; test data never enters here.
    pretrained : ModelParams
    cfg : FinetuneConfig
    device_id : int
        Selects the device's RNG stream for minibatch order.
    history : list, optional
        Receives one ``{"epoch", "lr", "loss"}`` entry per epoch.

    Returns
    ----------
    model : ModelParams
        Encoder plus trained classifier.
    """
    if not len(labeled):
        raise ValidationError(f"device {device_id} has no labelled samples")

    model = attach_classifier(pretrained, labeled.n_classes, seed=cfg.seed)
    state = init_adam(model, lr=cfg.lr)
    rng = _stream(cfg.seed, device_id)

    for epoch in range(cfg.epochs):
        lr = step_lr(epoch, cfg.lr, cfg.milestones, cfg.lr_decay)
        loss = supervised_epoch(
            model, state, labeled, cfg.local_batch_size, lr, rng, cfg.linear_probe
        )
        logger.debug(f"Device {device_id} epoch {epoch + 1}/{cfg.epochs} lr={lr:.2e} loss={loss:.4f}")
        if history is not None:
            history.append({"epoch": epoch, "lr": lr, "loss": loss})

    return model


def finetune_federated(
    devices: Sequence[Dataset],
    pretrained: ModelParams,
    cfg: FinetuneConfig,
    history: List[dict] = None,
) -> ModelParams:
    """
    Supervised FedAvg: every round each device trains the downloaded global model
    for ``local_epochs`` on its labelled subset with a constant Adam rate; the
    server averages the results weighted by labelled counts.

    Each device keeps its own Adam state across rounds. Devices without labels
    sit out.
    """
    labelled = [(device_id, data) for device_id, data in enumerate(devices) if len(data)]
    if not labelled:
        raise ValidationError("no device has labelled samples")

    n_classes = labelled[0][1].n_classes
    global_model = attach_classifier(pretrained, n_classes, seed=cfg.seed)
    states = {device_id: init_adam(global_model, lr=cfg.lr) for device_id, _ in labelled}
    rngs = {device_id: _stream(cfg.seed, device_id) for device_id, _ in labelled}

    for round_index in range(cfg.rounds):
        updates, losses = [], []
        for device_id, data in labelled:
            local = global_model.copy()
            for _ in range(cfg.local_epochs):
                loss = supervised_epoch(
                    local,
                    states[device_id],
                    data,
                    cfg.federated_batch_size,
                    cfg.lr,
                    rngs[device_id],
                    cfg.linear_probe,
                )
            updates.append((local, len(data)))
            losses.append(loss)

        global_model = fedavg(updates)
        mean_loss = float(np.average(losses, weights=[n for _, n in updates]))
        logger.debug(f"Fine-tune round {round_index + 1}/{cfg.rounds} loss={mean_loss:.4f}")
        if history is not None:
            history.append({"round": round_index, "lr": cfg.lr, "loss": mean_loss})

    return global_model
