from .checkpoint import (
    Checkpoint,
    CheckpointChecksumError,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)
from .data import (
    CLASS_NAMES,
    SpriteDatasetConfig,
    make_dataset,
    read_dataset,
    stack_latents,
    synth_clip,
    synth_tsr_clip,
    write_dataset,
)
from .loop import TrainConfig, Trainer, build_optimizer, conditioning, loss, model_from_checkpoint, train_step
from .optim import Adam
