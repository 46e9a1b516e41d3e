from .config import ABLATION_SETTINGS, ConfigError, DrdConfig, preset
from .loss import LossError, cross_entropy_loss, downsample_labels
from .model import (
    DetailRefiningDecoder,
    Fusion,
    RegionRefine,
    RegionRefineOutput,
    StubEncoder,
    drd_forward,
    flatten_features,
    fusion_forward,
    region_refine_forward,
    tokens_to_channels,
)
from .train import (
    TrainingDiverged,
    TrainResult,
    evaluate_accuracy,
    images_to_batch,
    pixel_accuracy,
    toy_training_set,
    train_toy,
)
from .viz import export_attention_maps, normalize_row
