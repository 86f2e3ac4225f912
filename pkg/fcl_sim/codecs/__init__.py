from fcl_sim.codecs.dataset_codec import DatasetCodec, load_dataset, save_dataset
from fcl_sim.codecs.checkpoint_codec import CheckpointCodec, load_checkpoint, save_checkpoint
