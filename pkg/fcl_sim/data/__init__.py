from fcl_sim.data.main import Dataset, SyntheticSpec, generate_synthetic
from fcl_sim.data.partition import (
    DeviceSplit,
    PartitionSpec,
    apply_tone_shift,
    label_subset,
    label_subset_indices,
    partition,
    partition_indices,
    split_indices,
    split_train_test,
)
