"""STFT analysis/synthesis and window machinery.

Two code paths share the same framing conventions (centered frames, reflect
padding, periodic Hann window, T = ceil(frames / hop)):

* `stft` / `istft` operate on AudioBuffers in float64 and return/consume
  complex Spectrograms - the analysis path.
* `stft_graph` / `istft_graph` build the same transform out of autodiff
  tensor ops - the trainable path used by the separator and the losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .audio_io import AudioBuffer
from .tensor import Tensor


class ColaViolationError(ValueError):
    """Window/hop combination whose overlap-add normalizer collapses."""


@dataclass(frozen=True)
class StftParams:
    n_fft: int = 2048
    hop: int = 512
    window: str = "hann"

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft % 2:
            raise ValueError(f"n_fft must be even and >= 2, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"hop must satisfy 0 < hop <= n_fft, got {self.hop}")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass
class Spectrogram:
    """One-sided complex spectrogram, bins shaped [channels, F, T]."""

    bins: np.ndarray
    params: StftParams
    source_frames: int

    def __post_init__(self):
        if self.bins.ndim != 3 or self.bins.shape[1] != self.params.bins:
            raise ValueError(f"bins must be [channels, {self.params.bins}, T], got {self.bins.shape}")
        if not np.all(np.isfinite(self.bins)):
            raise ValueError("spectrogram contains non-finite entries")


def hann(n: int) -> np.ndarray:
    """Periodic Hann window: 0.5 * (1 - cos(2*pi*k/n))."""
    if n < 1:
        raise ValueError("window length must be >= 1")
    k = np.arange(n, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


def _reflect_index(pos: np.ndarray, n: int) -> np.ndarray:
    """Map arbitrary integer positions into [0, n) by repeated reflection."""
    if n == 1:
        return np.zeros_like(pos)
    period = 2 * (n - 1)
    m = np.mod(pos, period)
    return np.where(m < n, m, period - m)


def frame_indices(frames: int, params: StftParams) -> np.ndarray:
    """[T, n_fft] gather map implementing centered reflect-padded framing."""
    if frames < 1:
        raise ValueError("need at least one frame of signal")
    t_count = -(-frames // params.hop)  # ceil
    pad = params.n_fft // 2
    pos = np.arange(t_count)[:, None] * params.hop + np.arange(params.n_fft)[None, :] - pad
    return _reflect_index(pos, frames)


def _ola_normalizer(t_count: int, params: StftParams) -> np.ndarray:
    """Squared-window overlap-add sum over the padded span."""
    w2 = hann(params.n_fft) ** 2
    length = (t_count - 1) * params.hop + params.n_fft
    norm = np.zeros(length, dtype=np.float64)
    for t in range(t_count):
        norm[t * params.hop : t * params.hop + params.n_fft] += w2
    return norm


def stft(buffer: AudioBuffer, params: StftParams) -> Spectrogram:
    """Complex one-sided spectrogram with centered, reflect-padded frames."""
    idx = frame_indices(buffer.frames, params)
    frames = buffer.samples.astype(np.float64)[:, idx] * hann(params.n_fft)
    spec = np.fft.rfft(frames, axis=-1)  # [C, T, F]
    return Spectrogram(np.ascontiguousarray(spec.transpose(0, 2, 1)), params, buffer.frames)


def istft(spec: Spectrogram, sample_rate: int = 44100) -> AudioBuffer:
    """Invert `stft` by squared-window normalized overlap-add."""
    params = spec.params
    n_fft, hop = params.n_fft, params.hop
    pad = n_fft // 2
    t_count = spec.bins.shape[2]
    frames = np.fft.irfft(spec.bins.transpose(0, 2, 1), n=n_fft, axis=-1) * hann(n_fft)
    length = (t_count - 1) * hop + n_fft
    out = np.zeros((spec.bins.shape[0], length), dtype=np.float64)
    for t in range(t_count):
        out[:, t * hop : t * hop + n_fft] += frames[:, t]
    norm = _ola_normalizer(t_count, params)
    retained = norm[pad : pad + spec.source_frames]
    if spec.source_frames and retained.min() < 1e-6:
        raise ColaViolationError(
            f"overlap-add normalizer drops to {retained.min():.3g}; window/hop do not cover the signal"
        )
    out /= np.maximum(norm, 1e-12)
    return AudioBuffer(out[:, pad : pad + spec.source_frames].astype(np.float32), sample_rate)


# -- differentiable path ------------------------------------------------------


def stft_graph(x: Tensor, params: StftParams) -> Tensor:
    """STFT of waveforms [..., frames] as tensor ops -> [..., T, F, 2]."""
    frames = x.shape[-1]
    idx = frame_indices(frames, params)
    window = Tensor(hann(params.n_fft).astype(np.float32))
    gathered = T.take(x, idx)  # [..., T, n_fft]
    return T.rfft_pack(T.mul(gathered, window))


def istft_graph(spec: Tensor, params: StftParams, source_frames: int) -> Tensor:
    """Inverse of `stft_graph` for spectra [..., T, F, 2] -> [..., source_frames]."""
    n_fft, hop = params.n_fft, params.hop
    pad = n_fft // 2
    t_count = spec.shape[-3]
    frames = T.irfft_pack(spec, n_fft)
    windowed = T.mul(frames, Tensor(hann(n_fft).astype(np.float32)))
    length = (t_count - 1) * hop + n_fft
    summed = T.overlap_add(windowed, hop, length)
    norm = _ola_normalizer(t_count, params)
    retained = norm[pad : pad + source_frames]
    if source_frames and retained.min() < 1e-6:
        raise ColaViolationError(
            f"overlap-add normalizer drops to {retained.min():.3g}; window/hop do not cover the signal"
        )
    inv_norm = Tensor((1.0 / np.maximum(norm, 1e-12)).astype(np.float32))
    return T.narrow(T.mul(summed, inv_norm), -1, pad, source_frames)
