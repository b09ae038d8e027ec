"""Denoising diffusion with replicated single-cell neural cellular automata.

Two denoisers are provided: DiffNCA (purely local image-space updates) and
FourierDiffNCA (a frequency-space global-communication stage followed by the
image-space rule). On top sit the DDPM machinery (schedule, losses,
ancestral/masked/upscaling/tiled samplers), a deterministic training loop
with EMA shadow weights, bit-exact checkpoints and PNG dataset tooling.
"""

__version__ = "0.1.0"

from .conditioning import CondBlock, EmbeddingMLP, conditioning_features, sinusoidal_encode
from .core import (
    CellRule,
    cell_group_norm,
    count_parameters,
    fire_mask,
    read_noise_prediction,
    rollout,
    seed_state,
)
from .checkpoint import Checkpoint, load_checkpoint, load_model_weights, restore_trainer, save_checkpoint
from .config import PRESETS, RunConfig, build_dataset, build_model, build_schedule, load_config, resolve_config
from .data import (
    DatasetSpec,
    ImageFolderData,
    SyntheticData,
    SyntheticSpec,
    export_png,
    ingest,
    load_png,
    make_synthetic,
)
from .diffusion import (
    NoiseSchedule,
    ddpm_step,
    diffusion_loss,
    make_schedule,
    predict_noise,
    q_sample,
    q_sample_from_alpha_bar,
    sample,
    sample_masked,
    sample_tiled,
    upscale,
)
from .errors import (
    CheckpointError,
    CheckpointManifestError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigurationError,
    NumericError,
)
from .fourier import (
    FourierWindow,
    Spectrum,
    extract_window,
    fft2,
    fourier_stage,
    ifft2_real,
    lowpass_preview,
    window_origin,
    write_window,
)
from .models import DiffNCA, FourierDiffNCA
from .rng import SeedStream
from .training import EmaState, LogRow, TrainConfig, Trainer, ema_update, validation_loss

__all__ = [
    "CellRule",
    "Checkpoint",
    "CheckpointError",
    "CheckpointManifestError",
    "CheckpointTruncatedError",
    "CheckpointVersionError",
    "CondBlock",
    "ConfigurationError",
    "DatasetSpec",
    "DiffNCA",
    "EmaState",
    "EmbeddingMLP",
    "FourierDiffNCA",
    "FourierWindow",
    "ImageFolderData",
    "LogRow",
    "NoiseSchedule",
    "NumericError",
    "PRESETS",
    "RunConfig",
    "SeedStream",
    "Spectrum",
    "SyntheticData",
    "SyntheticSpec",
    "TrainConfig",
    "Trainer",
    "build_dataset",
    "build_model",
    "build_schedule",
    "cell_group_norm",
    "conditioning_features",
    "count_parameters",
    "ddpm_step",
    "diffusion_loss",
    "ema_update",
    "export_png",
    "extract_window",
    "fft2",
    "fire_mask",
    "fourier_stage",
    "ifft2_real",
    "ingest",
    "load_checkpoint",
    "load_config",
    "load_model_weights",
    "load_png",
    "lowpass_preview",
    "make_schedule",
    "make_synthetic",
    "predict_noise",
    "q_sample",
    "q_sample_from_alpha_bar",
    "read_noise_prediction",
    "resolve_config",
    "restore_trainer",
    "rollout",
    "sample",
    "sample_masked",
    "sample_tiled",
    "save_checkpoint",
    "seed_state",
    "sinusoidal_encode",
    "upscale",
    "validation_loss",
    "window_origin",
    "write_window",
]
