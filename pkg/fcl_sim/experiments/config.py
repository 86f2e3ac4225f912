"""
Experiment configuration: every module config under one roof, read from and
written to flat ``section.key=value`` files.
"""
import ast
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from fcl_sim.contrastive import AugmentationSpec, ContrastiveConfig
from fcl_sim.data import PartitionSpec, SyntheticSpec
from fcl_sim.evaluation import FinetuneConfig
from fcl_sim.evaluation.main import MODES as FINETUNE_MODES
from fcl_sim.exceptions import ConfigError
from fcl_sim.federation import FederationConfig, NegativesPolicy
from fcl_sim.numeric_core import ArchitectureConfig

METHODS = ("random_init", "local_cl", "fcl")

SECTIONS = {
    "synthetic": SyntheticSpec,
    "partition": PartitionSpec,
    "model": ArchitectureConfig,
    "contrastive": ContrastiveConfig,
    "augment": AugmentationSpec,
    "federation": FederationConfig,
    "finetune": FinetuneConfig,
}


@dataclass
class ExperimentConfig:
    """
    Parameters
    ----------
    method : str
        ``random_init``, ``local_cl`` or ``fcl``.
    label_fractions : tuple of float
        Label fractions L swept by finetune-eval.
    seeds : tuple of int
        Each seed drives pretraining, label subsets and fine-tuning.
    finetune_modes : tuple of str
    split_ratio : float
        Train share of every device's data.
    ablation_fraction : float
        Label fraction the ablation evaluates at.
    ablation_mode : str
        Fine-tuning mode the ablation table reports.
    output_dir : str
    data_dir : str, optional
        Defaults to ``<output_dir>/data``.
    """

    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    model: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    contrastive: ContrastiveConfig = field(
        default_factory=lambda: ContrastiveConfig(
            feature_dim=32, batch_size=16, bank_capacity=256
        )
    )
    augment: AugmentationSpec = field(default_factory=AugmentationSpec.mild)
    federation: FederationConfig = field(default_factory=lambda: FederationConfig(rounds=30))
    finetune: FinetuneConfig = field(default_factory=lambda: FinetuneConfig(lr=1e-3))

    method: str = "fcl"
    label_fractions: Tuple[float, ...] = (0.1, 0.2, 0.4, 0.8)
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    finetune_modes: Tuple[str, ...] = ("local", "federated")
    split_ratio: float = 0.6
    ablation_fraction: float = 0.1
    ablation_mode: str = "federated"
    output_dir: str = "runs"
    data_dir: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"experiment.method must be one of {METHODS}, got {self.method!r}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("experiment.seeds must not be empty")
        self.label_fractions = tuple(float(f) for f in self.label_fractions)
        for fraction in self.label_fractions + (self.ablation_fraction,):
            if not 0.0 < fraction <= 1.0:
                raise ConfigError(f"label fractions must be in (0, 1], got {fraction}")
        self.finetune_modes = tuple(self.finetune_modes)
        for mode in self.finetune_modes + (self.ablation_mode,):
            if mode not in FINETUNE_MODES:
                raise ConfigError(f"unknown fine-tuning mode {mode!r}; expected {FINETUNE_MODES}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("experiment.split_ratio must be in (0, 1)")
        if self.partition.n_devices != self.federation.n_devices:
            raise ConfigError(
                f"partition.n_devices={self.partition.n_devices} and "
                f"federation.n_devices={self.federation.n_devices} disagree"
            )

    @property
    def policy(self) -> str:
        return self.federation.negatives_policy

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else self.output_path / "data"

    def for_seed(self, seed: int) -> "ExperimentConfig":
        """Copy whose pretraining and fine-tuning streams are keyed by ``seed``."""
        return replace(
            self,
            federation=replace(self.federation, global_seed=seed),
            finetune=replace(self.finetune, seed=seed),
            seeds=(seed,),
        )

    def with_overrides(
        self, seed: int = None, out: str = None, policy: str = None, method: str = None
    ) -> "ExperimentConfig":
        """Applies command-line flags on top of the file config."""
        changes = {}
        if seed is not None:
            changes["seeds"] = (seed,)
        if out is not None:
            changes["output_dir"] = out
        if method is not None:
            changes["method"] = method
        if policy is not None:
            try:
                NegativesPolicy(policy)
            except ValueError:
                raise ConfigError(f"unknown policy {policy!r}")
            changes["federation"] = replace(self.federation, negatives_policy=policy)
        return replace(self, **changes) if changes else self


def _experiment_fields():
    return {f.name for f in fields(ExperimentConfig) if f.name not in SECTIONS}


def _coerce(text: str, current):
    if isinstance(current, str):
        return text

    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered == "none":
        return None
    try:
        value = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if isinstance(current, tuple):
            return tuple(part.strip() for part in text.split(",") if part.strip())
        return text

    if isinstance(current, tuple) and not isinstance(value, tuple):
        value = (value,)
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    return value


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """
    Parses ``section.key=value`` lines; ``#`` starts a comment.

    Raises
    ----------
    ConfigError
        On malformed lines, unknown keys or values a config rejects.
    """
    defaults = ExperimentConfig()
    overrides: Dict[str, dict] = {name: {} for name in SECTIONS}
    overrides["experiment"] = {}

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"{source}:{number}: expected section.key=value, got {raw!r}")

        if section in SECTIONS:
            current_section = getattr(defaults, section)
            known = {f.name for f in fields(SECTIONS[section])}
        elif section == "experiment":
            current_section = defaults
            known = _experiment_fields()
        else:
            raise ConfigError(f"{source}:{number}: unknown section {section!r}")
        if name not in known:
            raise ConfigError(f"{source}:{number}: unknown key {key.strip()!r}")

        overrides[section][name] = _coerce(value.strip(), getattr(current_section, name))

    try:
        sections = {
            name: replace(getattr(defaults, name), **overrides[name]) for name in SECTIONS
        }
        return ExperimentConfig(**sections, **overrides["experiment"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{source}: {e}") from e


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), source=str(path))


def _format(value) -> str:
    return value if isinstance(value, str) else repr(value)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section in SECTIONS:
        for f in fields(SECTIONS[section]):
            lines.append(f"{section}.{f.name}={_format(getattr(getattr(cfg, section), f.name))}")
    for f in fields(ExperimentConfig):
        if f.name not in SECTIONS:
            lines.append(f"experiment.{f.name}={_format(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg))
    return path
