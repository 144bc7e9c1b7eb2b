"""Adversarial images that carry their own perturbation, on a small from-scratch MLP."""

from .attacks import AttackConfig, AttackResult, run_attack
from .classifier import (
    LabeledDataset,
    ModelParams,
    TrainConfig,
    generate_shapes_dataset,
    load_model,
    predict,
    save_model,
    shapes_splits,
    train,
)
from .coder import BACKEND as CODER_BACKEND
from .errors import (
    AttackFailedError,
    CapacityError,
    CorruptedPayloadError,
    FormatError,
    NotMarkedError,
    RevAdvError,
)
from .pipeline import Perturbation, RAEHeader, create_rae, decode_perturbation, encode_perturbation, evaluate, recover
from .rdh import capacity_estimate, embed, extract

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackResult", "run_attack",
    "LabeledDataset", "ModelParams", "TrainConfig", "generate_shapes_dataset",
    "load_model", "predict", "save_model", "shapes_splits", "train",
    "CODER_BACKEND",
    "AttackFailedError", "CapacityError", "CorruptedPayloadError", "FormatError",
    "NotMarkedError", "RevAdvError",
    "Perturbation", "RAEHeader", "create_rae", "decode_perturbation",
    "encode_perturbation", "evaluate", "recover",
    "capacity_estimate", "embed", "extract",
]
