"""Stream active learning for small on-device classifiers."""

from .core import CandidateBatch, DataStream, Dataset, LabeledSample, Sample
from .metrics import ObjectiveWeights
from .model import LayerSpec, Model, TrainConfig
from .strategies import DualRV, InfoRV, Preemption, RandomSampling, build_strategy

__version__ = "0.1.0"

__all__ = [
    "CandidateBatch", "DataStream", "Dataset", "LabeledSample", "Sample",
    "ObjectiveWeights", "LayerSpec", "Model", "TrainConfig",
    "DualRV", "InfoRV", "Preemption", "RandomSampling", "build_strategy",
]
