from .data import Dataset, load_dataset
from .models import Model, ModelConfig, init_params
from .training import TrainConfig, train

__all__ = [
    "Dataset",
    "load_dataset",
    "Model",
    "ModelConfig",
    "init_params",
    "TrainConfig",
    "train",
]


__version__ = "1.0a1"
