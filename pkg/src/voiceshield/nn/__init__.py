"""From-scratch NumPy convolutional classifier."""
from .model import Adam, ConvNet, ModelSpec, load_checkpoint, save_checkpoint
from .training import TrainConfig, mixup, oversample, predict, stratified_folds, train_kfold

__all__ = ["Adam", "ConvNet", "ModelSpec", "TrainConfig", "load_checkpoint", "mixup",
           "oversample", "predict", "save_checkpoint", "stratified_folds", "train_kfold"]
