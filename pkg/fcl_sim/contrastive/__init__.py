from fcl_sim.contrastive.features import (
    FeatureBatch,
    FeatureVec,
    MemoryBank,
    bank_push,
    bank_sample_uniform,
)
from fcl_sim.contrastive.main import (
    ContrastiveConfig,
    info_nce,
    info_nce_batch,
    momentum_update,
)
from fcl_sim.contrastive.augment import (
    AugmentationSpec,
    augment,
    augment_batch,
    augment_pair,
)
