"""
Experiment commands: data generation, pretraining, fine-tuning sweeps, the
negatives-policy ablation and the report.
"""
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from fcl_sim import __version__
from fcl_sim.codecs import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from fcl_sim.data import (
    Dataset,
    DeviceSplit,
    generate_synthetic,
    label_subset,
    partition,
    split_train_test,
)
from fcl_sim.evaluation import (
    Metrics,
    aggregate_metrics,
    evaluate,
    finetune_federated,
    finetune_local,
)
from fcl_sim.exceptions import ArchitectureMismatchError
from fcl_sim.experiments.config import ExperimentConfig, dump_config
from fcl_sim.experiments.manifest import RunManifest
from fcl_sim.experiments.report import (
    NO_POLICY,
    ablation_deltas,
    ablation_table,
    render_report,
)
from fcl_sim.federation import (
    FederatedPretrainer,
    NegativesPolicy,
    RoundRecord,
    fedavg,
    write_round_log,
)
from fcl_sim.logger import get_logger
from fcl_sim.numeric_core import ModelParams, init_params

logger = get_logger(__name__)


@dataclass
class PretrainResult:
    global_params: ModelParams
    records: List[RoundRecord]
    device_params: Optional[List[ModelParams]] = None


def device_file(data_dir, device_id: int) -> Path:
    return Path(data_dir) / f"device_{device_id:02d}.fds"


def run_name(cfg: ExperimentConfig) -> str:
    return f"fcl_{cfg.policy}" if cfg.method == "fcl" else cfg.method


def build_device_datasets(cfg: ExperimentConfig) -> List[Dataset]:
    """Synthetic data partitioned across devices, before the train/test split."""
    return partition(generate_synthetic(cfg.synthetic), cfg.partition)


def split_devices(cfg: ExperimentConfig, datasets: List[Dataset]) -> List[DeviceSplit]:
    splits = []
    for device_id, dataset in enumerate(datasets):
        train, test = split_train_test(
            dataset, cfg.split_ratio, seed=cfg.partition.seed + device_id
        )
        splits.append(DeviceSplit(device_id, train, test))
    return splits


def load_device_splits(cfg: ExperimentConfig) -> List[DeviceSplit]:
    paths = [device_file(cfg.data_path, d) for d in range(cfg.partition.n_devices)]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise FileNotFoundError(f"dataset files missing, run gen-data first: {missing}")
    return split_devices(cfg, [load_dataset(p) for p in paths])


def pretrain(cfg: ExperimentConfig, splits: List[DeviceSplit]) -> PretrainResult:
    """
    Pretrains with the configured method.

    ``random_init`` returns the seeded initialization; ``local_cl`` trains every
    device alone and also returns the sample-weighted average of the device
    models; ``fcl`` runs the federated protocol with the configured policy.
    """
    trains = [s.train for s in splits]
    init = init_params(
        trains[0].input_dim,
        cfg.model,
        cfg.contrastive.feature_dim,
        seed=cfg.federation.global_seed,
    )
    if cfg.method == "random_init":
        return PretrainResult(init, [])

    federation = cfg.federation
    if cfg.method == "local_cl":
        federation = replace(federation, aggregate=False, share_features=False)

    pretrainer = FederatedPretrainer(
        trains, cfg.contrastive, federation, cfg.augment, cfg.model, init
    )
    global_params, records = pretrainer.run()

    if cfg.method == "local_cl":
        device_params = [p.copy() for p in pretrainer.device_params]
        averaged = fedavg([(p, len(t)) for p, t in zip(device_params, trains)])
        return PretrainResult(averaged, records, device_params)
    return PretrainResult(global_params, records)


def finetune_and_evaluate(
    cfg: ExperimentConfig,
    splits: List[DeviceSplit],
    pretrained: ModelParams,
    fraction: float,
    mode: str,
    device_params: List[ModelParams] = None,
) -> Metrics:
    """
    Fine-tunes on the L-fraction labelled subsets and evaluates on the test splits.

    Local mode starts each device from its own pretrained model when
    ``device_params`` is given and averages device-level metrics; federated mode
    pools the test confusion matrices of the shared model.
    """
    finetune = replace(cfg.finetune, mode=mode, label_fraction=fraction)
    labeled = [label_subset(s.train, fraction, seed=finetune.seed) for s in splits]

    if mode == "local":
        per_device = []
        for split, subset in zip(splits, labeled):
            start = device_params[split.device_id] if device_params else pretrained
            model = finetune_local(subset, start, finetune, device_id=split.device_id)
            per_device.append(evaluate(model, split.test))
        return aggregate_metrics(per_device, "local")

    model = finetune_federated(labeled, pretrained, finetune)
    return aggregate_metrics([evaluate(model, s.test) for s in splits], "federated")


def metric_row(
    method: str, policy: str, fraction: float, seed: int, mode: str, metrics: Metrics
) -> dict:
    row = {
        "method": method,
        "policy": policy,
        "label_fraction": fraction,
        "seed": seed,
        "mode": mode,
        "mean_recall": metrics.mean_recall,
        "mean_precision": metrics.mean_precision,
    }
    for c, value in enumerate(metrics.per_class_recall):
        row[f"recall_{c}"] = float(value)
    for c, value in enumerate(metrics.per_class_precision):
        row[f"precision_{c}"] = float(value)
    return row


def _policy_column(cfg: ExperimentConfig) -> str:
    return cfg.policy if cfg.method == "fcl" else NO_POLICY


def _check_compatible(params: ModelParams, splits: List[DeviceSplit], source) -> None:
    input_dim = splits[0].train.input_dim
    if params.input_dim != input_dim:
        raise ArchitectureMismatchError(
            f"{source}: checkpoint expects {params.input_dim}-wide inputs, data has {input_dim}"
        )


def cmd_gen_data(cfg: ExperimentConfig) -> List[Path]:
    """
    Generates, partitions and writes one FDS1 file per device.
    """
    manifest = RunManifest("gen-data", dump_config(cfg), __version__)
    with manifest.stage("generate"):
        datasets = build_device_datasets(cfg)

    paths = []
    with manifest.stage("write"):
        for device_id, dataset in enumerate(datasets):
            path = save_dataset(dataset, device_file(cfg.data_path, device_id))
            manifest.add_artifact(path)
            paths.append(path)

    logger.info(f"Wrote {len(paths)} device datasets to {cfg.data_path}")
    manifest.write(cfg.data_path / "manifest.json")
    return paths


def pretrain_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return cfg.output_path / "pretrain" / run_name(cfg) / f"seed_{seed}"


def cmd_pretrain(cfg: ExperimentConfig) -> Dict[int, Path]:
    """
    Pretrains once per seed and writes checkpoints plus the round log.

    Returns
    ----------
    run_dirs : dict
        Seed to the directory holding ``global.fcl``, per-device checkpoints for
        ``local_cl`` and ``round_log.csv``.
    """
    splits = load_device_splits(cfg)
    manifest = RunManifest("pretrain", dump_config(cfg), __version__)
    run_dirs = {}

    for seed in cfg.seeds:
        seeded = cfg.for_seed(seed)
        with manifest.stage(f"pretrain_seed_{seed}"):
            result = pretrain(seeded, splits)

        out = pretrain_dir(cfg, seed)
        manifest.add_artifact(save_checkpoint(result.global_params, out / "global.fcl"))
        for device_id, params in enumerate(result.device_params or []):
            manifest.add_artifact(save_checkpoint(params, out / f"device_{device_id:02d}.fcl"))
        if result.records:
            manifest.add_artifact(write_round_log(result.records, out / "round_log.csv"))

        if seeded.method == "fcl" and seeded.policy == NegativesPolicy.REMOTE_ONLY.value:
            own = sum(sum(r.own_origin_in_qcl.values()) for r in result.records)
            logger.info(f"Seed {seed}: Q_CL held {own} own-origin features across all remote_only rounds")
        run_dirs[seed] = out

    manifest.write(cfg.output_path / "pretrain" / run_name(cfg) / "manifest.json")
    return run_dirs


def _load_pretrained(cfg: ExperimentConfig, seed: int, checkpoint=None):
    if checkpoint is not None:
        return load_checkpoint(checkpoint), None, [Path(checkpoint)]

    out = pretrain_dir(cfg, seed)
    paths = [out / "global.fcl"]
    pretrained = load_checkpoint(paths[0])
    device_params = None
    if cfg.method == "local_cl":
        paths += [out / f"device_{d:02d}.fcl" for d in range(cfg.partition.n_devices)]
        device_params = [load_checkpoint(p) for p in paths[1:]]
    return pretrained, device_params, paths


def cmd_finetune_eval(cfg: ExperimentConfig, checkpoint=None) -> Path:
    """
    Fine-tunes and evaluates for every seed, label fraction and fine-tuning mode.

    Uses ``checkpoint`` for every seed when given, otherwise the checkpoints
    ``pretrain`` wrote for the configured method.
    """
    splits = load_device_splits(cfg)
    manifest = RunManifest("finetune-eval", dump_config(cfg), __version__)
    rows = []

    for seed in cfg.seeds:
        seeded = cfg.for_seed(seed)
        pretrained, device_params, paths = _load_pretrained(seeded, seed, checkpoint)
        for path, params in zip(paths, [pretrained] + (device_params or [])):
            _check_compatible(params, splits, path)
            manifest.add_artifact(path)

        for fraction in cfg.label_fractions:
            for mode in cfg.finetune_modes:
                with manifest.stage(f"finetune_{mode}"):
                    metrics = finetune_and_evaluate(
                        seeded, splits, pretrained, fraction, mode, device_params
                    )
                logger.info(
                    f"Seed {seed} L={fraction:g} {mode}: recall={metrics.mean_recall:.4f} "
                    f"precision={metrics.mean_precision:.4f}"
                )
                rows.append(
                    metric_row(cfg.method, _policy_column(cfg), fraction, seed, mode, metrics)
                )

    out = cfg.output_path / "finetune" / run_name(cfg)
    manifest.write(out / "manifest.json")
    path = out / "metrics.csv"
    pd.DataFrame(rows).to_csv(path, index=False)
    logger.info(f"Metrics written to {path}")
    return path


def cmd_ablate(cfg: ExperimentConfig) -> pd.DataFrame:
    """
    Runs random_init and fcl under all three negatives policies on the same data,
    seeds and initializations, then tabulates the policies.

    Writes ``metrics.csv``, ``ablation.csv`` and ``ablation_deltas.csv`` under
    ``<output_dir>/ablation``.
    """
    manifest = RunManifest("ablate", dump_config(cfg), __version__)
    with manifest.stage("data"):
        splits = split_devices(cfg, build_device_datasets(cfg))

    runs = [replace(cfg, method="random_init")] + [
        replace(
            cfg,
            method="fcl",
            federation=replace(cfg.federation, negatives_policy=policy.value),
        )
        for policy in NegativesPolicy
    ]

    rows = []
    for seed in cfg.seeds:
        for run in runs:
            seeded = run.for_seed(seed)
            with manifest.stage(run_name(run)):
                result = pretrain(seeded, splits)
                metrics = finetune_and_evaluate(
                    seeded,
                    splits,
                    result.global_params,
                    cfg.ablation_fraction,
                    cfg.ablation_mode,
                    result.device_params,
                )
            logger.info(
                f"Seed {seed} {run_name(run)}: recall={metrics.mean_recall:.4f} "
                f"precision={metrics.mean_precision:.4f}"
            )
            rows.append(
                metric_row(
                    run.method,
                    _policy_column(run),
                    cfg.ablation_fraction,
                    seed,
                    cfg.ablation_mode,
                    metrics,
                )
            )

    out = cfg.output_path / "ablation"
    manifest.write(out / "manifest.json")

    frame = pd.DataFrame(rows)
    frame.to_csv(out / "metrics.csv", index=False)
    table = ablation_table(frame, cfg.ablation_mode, cfg.ablation_fraction)
    table.to_csv(out / "ablation.csv", index=False)
    ablation_deltas(table).to_csv(out / "ablation_deltas.csv", index=False)
    logger.info(f"Ablation written to {out}")
    return table


def cmd_report(metrics_dir, out=None) -> Path:
    """
    Renders ``report.md`` and ``summary.csv`` from every metrics.csv below ``metrics_dir``.
    """
    text, summary = render_report(metrics_dir)
    path = Path(out) if out else Path(metrics_dir) / "report.md"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    summary.to_csv(path.with_name("summary.csv"), index=False)
    logger.info(f"Report written to {path}")
    return path
