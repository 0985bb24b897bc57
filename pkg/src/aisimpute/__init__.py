"""Imputation of heterogeneous AIS vessel records."""

from .core import TAXONOMY, Attr, RecordSequence, TypeClass, validate
from .corruption import MaskConfig, NoiseConfig, corrupt_dataset
from .evaluation import EvalReport, evaluate, run_baseline
from .ingest import Dataset, NormStats, ingest_files, load_dataset, save_dataset
from .model import LossWeights, Model, ModelConfig, impute_sequences
from .training import TrainConfig, fit

__all__ = [
    "TAXONOMY", "Attr", "RecordSequence", "TypeClass", "validate",
    "MaskConfig", "NoiseConfig", "corrupt_dataset",
    "EvalReport", "evaluate", "run_baseline",
    "Dataset", "NormStats", "ingest_files", "load_dataset", "save_dataset",
    "LossWeights", "Model", "ModelConfig", "impute_sequences",
    "TrainConfig", "fit",
]
