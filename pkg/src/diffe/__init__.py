"""Diff-E: diffusion-conditioned autoencoder for EEG classification, on numpy."""

from .config import RunConfig, build_config, load_config
from .dataset import ContinuousRecording, EpochedDataset, load, save
from .errors import ConfigError, DataError, DiffEError, DimensionError, FormatError, NumericError
from .evaluation import ablation_report, accuracy, auc_ovr_macro, make_report
from .networks import ABLATIONS, DiffEModel, ModelConfig
from .preprocessing import PipelineConfig, preprocess
from .synth import SynthSpec, generate, generate_dataset, generate_separable_toy
from .training import TrainConfig, fit, train_model

__version__ = "0.1.0"
