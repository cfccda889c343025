"""Two-stage mixture-of-modality-experts transformer with per-modality soft
prompt experts, restricted-receptive-field attention, and block-aware
cross-attention prompt fusion, trained end-to-end on a synthetic cross-modal
incongruity task."""

from .data import DataConfig, FewShotSplit, PromptTemplate, Sample
from .layout import BlockLayout, SequenceLayout
from .model import ModelConfig
from .numerics import GradTape, Tensor
from .training import TrainConfig

__all__ = [
    "BlockLayout", "DataConfig", "FewShotSplit", "GradTape", "ModelConfig",
    "PromptTemplate", "Sample", "SequenceLayout", "Tensor", "TrainConfig",
]
