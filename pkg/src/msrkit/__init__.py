"""Band-split transformer toolkit for music stem separation and restoration."""

from .audio_io import AudioBuffer, level_db, read_wav, resample, write_wav
from .dsp import Spectrogram, StftParams, istft, stft
from .losses import MrStftConfig, combined_loss, l1_loss, mrstft_loss
from .model import BandSpec, ModelConfig, SeparatorModel, make_band_spec, separate
from .tensor import Tensor, backward, gradcheck

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "BandSpec",
    "ModelConfig",
    "MrStftConfig",
    "SeparatorModel",
    "Spectrogram",
    "StftParams",
    "Tensor",
    "backward",
    "combined_loss",
    "gradcheck",
    "istft",
    "l1_loss",
    "level_db",
    "make_band_spec",
    "mrstft_loss",
    "read_wav",
    "resample",
    "separate",
    "stft",
    "write_wav",
]
