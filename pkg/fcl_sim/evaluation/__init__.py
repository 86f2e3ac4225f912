from fcl_sim.evaluation.metrics import (
    Metrics,
    aggregate_metrics,
    evaluate,
    metrics_from_confusion,
    predict,
)
from fcl_sim.evaluation.main import (
    FinetuneConfig,
    finetune_federated,
    finetune_local,
    supervised_epoch,
)
