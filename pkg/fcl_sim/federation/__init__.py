from fcl_sim.federation.server import (
    ServerState,
    build_remote_bank,
    collect_and_deidentify,
    download_payload,
    fedavg,
    fedavg_weights,
)
from fcl_sim.federation.qcl import NegativesPolicy, init_qcl, qcl_update
from fcl_sim.federation.records import (
    CSV_COLUMNS,
    RoundRecord,
    records_to_frame,
    write_round_log,
)
from fcl_sim.federation.main import (
    DeviceState,
    FederatedPretrainer,
    FederationConfig,
    device_rng,
    local_cl_round,
    run_pretraining,
    share_features,
)
