from fcl_sim.experiments.config import (
    METHODS,
    ExperimentConfig,
    dump_config,
    load_config,
    parse_config,
    save_config,
)
from fcl_sim.experiments.manifest import RunManifest, sha256_file
from fcl_sim.experiments.main import (
    PretrainResult,
    build_device_datasets,
    cmd_ablate,
    cmd_finetune_eval,
    cmd_gen_data,
    cmd_pretrain,
    cmd_report,
    finetune_and_evaluate,
    load_device_splits,
    pretrain,
    split_devices,
)
from fcl_sim.experiments.report import (
    ReportRenderer,
    ablation_deltas,
    ablation_table,
    read_metrics,
    render_report,
    summarize,
)
