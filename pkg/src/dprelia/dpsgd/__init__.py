"""DP-SGD and SGD for softmax regression and a one-hidden-layer MLP."""

from .clipping import GradClipPolicy, clip_auto, clip_basic
from .data import Dataset, load_dataset, make_blobs, read_csv, write_csv
from .models import Layout, ModelParams, init_params, per_example_gradients, per_example_losses
from .train import (
    RunRecord,
    TrainConfig,
    dpsgd_step,
    poisson_batch,
    sgd_step,
    train,
)

__all__ = [
    "Dataset",
    "GradClipPolicy",
    "Layout",
    "ModelParams",
    "RunRecord",
    "TrainConfig",
    "clip_auto",
    "clip_basic",
    "dpsgd_step",
    "init_params",
    "load_dataset",
    "make_blobs",
    "per_example_gradients",
    "per_example_losses",
    "poisson_batch",
    "read_csv",
    "sgd_step",
    "train",
    "write_csv",
]
