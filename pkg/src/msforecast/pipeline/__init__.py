"""Dataset I/O, staged training, evaluation, reporting and the command line."""
from .config import RunConfig, load_config
from .data import load_dataset
from .evaluate import evaluate
from .train import train_all

__all__ = ["RunConfig", "load_config", "load_dataset", "train_all", "evaluate"]
