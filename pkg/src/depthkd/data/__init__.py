from .dataset import (
    Batch, Dataset, batch_iterator, epoch_order, generate_split, load_dataset, load_split,
    num_batches, write_dataset, write_splits,
)
from .synth import DepthSample, SceneSpec, generate_scene, shade
