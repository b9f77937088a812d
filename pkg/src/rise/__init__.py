"""Recurrent input and state estimation for univariate series with missing values."""
from rise.core import INSTANCE_KINDS, InstanceKind, MaskedSeries, RiseConfig, RiseNetwork, compute_delta, discount, rise_forward
from rise.data import Corpus, SplitPolicy, SyntheticSpec, TargetQuantizer, fit_target_quantizer, generate_synthetic, load_csv, split, write_csv
from rise.encoders import ENCODER_KINDS, make_encoder
from rise.errors import ConfigurationError, ContractError, DimensionError, DivergenceError, IngestionError
from rise.estimator import RiseImputer
from rise.evaluation import EvalReport, PersistenceModel, evaluate, run_grid
from rise.training import TrainConfig, fit, load_checkpoint, save_checkpoint, step_loss

__version__ = "0.1.0"

__all__ = [
    "ENCODER_KINDS",
    "INSTANCE_KINDS",
    "ConfigurationError",
    "ContractError",
    "Corpus",
    "DimensionError",
    "DivergenceError",
    "EvalReport",
    "IngestionError",
    "InstanceKind",
    "MaskedSeries",
    "PersistenceModel",
    "RiseConfig",
    "RiseImputer",
    "RiseNetwork",
    "SplitPolicy",
    "SyntheticSpec",
    "TargetQuantizer",
    "TrainConfig",
    "compute_delta",
    "discount",
    "evaluate",
    "fit",
    "fit_target_quantizer",
    "generate_synthetic",
    "load_checkpoint",
    "load_csv",
    "make_encoder",
    "rise_forward",
    "run_grid",
    "save_checkpoint",
    "split",
    "step_loss",
    "write_csv",
]
