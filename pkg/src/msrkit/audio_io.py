"""Waveform containers, RIFF/WAVE file I/O, resampling, and level measurement."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# The eight final output categories, plus the two intermediate labels the
# 6-stem separation stage produces ("piano" is relabeled "keyboards" on output).
TARGET_STEMS = (
    "vocals",
    "guitars",
    "keyboards",
    "bass",
    "synthesizers",
    "drums",
    "percussions",
    "orchestral",
)
INTERMEDIATE_STEMS = ("other", "piano")
ALL_STEMS = TARGET_STEMS + INTERMEDIATE_STEMS
OUTPUT_ALIASES = {"piano": "keyboards"}


class AudioIoError(Exception):
    """Base class for audio I/O failures."""


class MalformedWavError(AudioIoError):
    """File is not a structurally valid RIFF/WAVE stream."""


class UnsupportedEncodingError(AudioIoError):
    """WAV encoding outside PCM16/PCM24/float32."""


class TruncatedWavError(AudioIoError):
    """Data chunk shorter than its declared size (or a partial frame)."""


@dataclass
class AudioBuffer:
    """Multichannel waveform: float32 samples shaped [channels, frames]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float32)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"samples must be [channels, frames] with >= 1 channel, got shape {arr.shape}")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("samples contain non-finite values")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = arr
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.frames / self.sample_rate

    def copy(self) -> "AudioBuffer":
        return AudioBuffer(self.samples.copy(), self.sample_rate)


_PCM16_SCALE = 32768.0
_PCM24_SCALE = 8388608.0


def _scan_chunks(raw: bytes, path):
    """Yield (chunk_id, payload_offset, declared_size) for every RIFF chunk."""
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: missing RIFF/WAVE header")
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)  # chunks are word-aligned


def _parse_wav(path):
    """Return (fmt dict, data bytes) from a WAV file, validating structure."""
    raw = Path(path).read_bytes()
    fmt = None
    for cid, off, size in _scan_chunks(raw, path):
        if cid == b"fmt ":
            if size < 16 or off + 16 > len(raw):
                raise MalformedWavError(f"{path}: fmt chunk too short")
            code, channels, rate, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", raw, off)
            if channels < 1 or rate <= 0:
                raise MalformedWavError(f"{path}: invalid channel count or sample rate")
            fmt = dict(code=code, channels=channels, rate=rate, block_align=block_align, bits=bits)
        elif cid == b"data":
            if fmt is None:
                raise MalformedWavError(f"{path}: data chunk before fmt chunk")
            avail = len(raw) - off
            if size > avail:
                raise TruncatedWavError(f"{path}: data chunk declares {size} bytes, only {avail} present")
            return fmt, raw[off : off + size]
    if fmt is None:
        raise MalformedWavError(f"{path}: no fmt chunk")
    raise MalformedWavError(f"{path}: no data chunk")


def _check_encoding(fmt, path):
    code, bits = fmt["code"], fmt["bits"]
    if code == 1 and bits in (16, 24):
        return
    if code == 3 and bits == 32:
        return
    raise UnsupportedEncodingError(f"{path}: format code {code} with {bits}-bit samples is not supported")


def read_wav(path) -> AudioBuffer:
    """Read a PCM16/PCM24/float32 WAV file into a [-1, 1]-scaled buffer."""
    fmt, data = _parse_wav(path)
    _check_encoding(fmt, path)
    channels, bits = fmt["channels"], fmt["bits"]
    bytes_per_frame = channels * (bits // 8)
    if len(data) % bytes_per_frame:
        raise TruncatedWavError(f"{path}: data chunk ends mid-frame")
    frames = len(data) // bytes_per_frame
    if fmt["code"] == 3:
        flat = np.frombuffer(data, dtype="<f4").astype(np.float32)
    elif bits == 16:
        flat = np.frombuffer(data, dtype="<i2").astype(np.float32) / _PCM16_SCALE
    else:  # PCM24: assemble signed 24-bit little-endian triplets
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        val = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        val -= (val & 0x800000) << 1
        flat = val.astype(np.float32) / _PCM24_SCALE
    samples = flat.reshape(frames, channels).T if frames else np.zeros((channels, 0), np.float32)
    return AudioBuffer(samples, fmt["rate"])


def wav_info(path):
    """Return (channels, sample_rate, frames) from a WAV header without decoding."""
    fmt, data = _parse_wav(path)
    _check_encoding(fmt, path)
    bytes_per_frame = fmt["channels"] * (fmt["bits"] // 8)
    return fmt["channels"], fmt["rate"], len(data) // bytes_per_frame


def write_wav(path, buffer: AudioBuffer, encoding: str = "float32") -> None:
    """Write a WAV file; PCM encodings clamp to [-1, 1] before quantizing."""
    if encoding == "float32":
        code, bits = 3, 32
        payload = buffer.samples.T.astype("<f4").tobytes()
    elif encoding == "pcm16":
        code, bits = 1, 16
        clamped = np.clip(buffer.samples.T, -1.0, 1.0)
        payload = np.rint(clamped * (_PCM16_SCALE - 1)).astype("<i2").tobytes()
    elif encoding == "pcm24":
        code, bits = 1, 24
        clamped = np.clip(buffer.samples.T, -1.0, 1.0)
        ints = np.rint(clamped.astype(np.float64) * (_PCM24_SCALE - 1)).astype(np.int32)
        u = ints.reshape(-1).astype(np.int64) & 0xFFFFFF
        b = np.empty((u.size, 3), dtype=np.uint8)
        b[:, 0] = u & 0xFF
        b[:, 1] = (u >> 8) & 0xFF
        b[:, 2] = (u >> 16) & 0xFF
        payload = b.tobytes()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block_align = buffer.channels * (bits // 8)
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        code,
        buffer.channels,
        buffer.sample_rate,
        buffer.sample_rate * block_align,
        block_align,
        bits,
        b"data",
        len(payload),
    )
    Path(path).write_bytes(header + payload)


# Resampler design: windowed-sinc lowpass split into one polyphase branch per
# output phase. 64 taps per phase with a Kaiser beta of 8.6 keeps images and
# aliases below roughly -90 dB.
_TAPS_PER_PHASE = 64
_KAISER_BETA = 8.6


def _polyphase_bank(up: int, down: int):
    n_taps = up * _TAPS_PER_PHASE + 1  # odd length -> integer group delay
    cutoff = min(1.0 / up, 1.0 / down)  # fraction of the upsampled Nyquist
    n = np.arange(n_taps, dtype=np.float64)
    center = (n_taps - 1) // 2
    h = up * cutoff * np.sinc(cutoff * (n - center)) * np.kaiser(n_taps, _KAISER_BETA)
    padded = np.zeros(up * (_TAPS_PER_PHASE + 1), dtype=np.float64)
    padded[:n_taps] = h
    bank = padded.reshape(_TAPS_PER_PHASE + 1, up).T  # [phase, tap]
    return bank, center


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Rate-convert with a Kaiser-windowed sinc polyphase filter."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buffer.sample_rate:
        return buffer.copy()
    g = math.gcd(target_rate, buffer.sample_rate)
    up, down = target_rate // g, buffer.sample_rate // g
    frames = buffer.frames
    out_len = (frames * up + down - 1) // down
    if frames == 0 or out_len == 0:
        return AudioBuffer(np.zeros((buffer.channels, out_len), np.float32), target_rate)

    bank, center = _polyphase_bank(up, down)
    x = buffer.samples.astype(np.float64)
    taps = bank.shape[1]
    out = np.empty((buffer.channels, out_len), dtype=np.float64)
    block = 1 << 16
    for start in range(0, out_len, block):
        n = np.arange(start, min(start + block, out_len))
        a = n * down + center  # position on the upsampled grid
        q = a // up
        phase = a - q * up
        src = q[:, None] - np.arange(taps)[None, :]
        valid = (src >= 0) & (src < frames)
        gathered = x[:, np.clip(src, 0, frames - 1)] * valid
        out[:, n] = np.einsum("ctj,tj->ct", gathered, bank[phase])
    return AudioBuffer(out.astype(np.float32), target_rate)


def level_db(buffer: AudioBuffer) -> float:
    """20*log10 of the RMS pooled over all channels and frames; -inf for silence."""
    if buffer.frames < 1:
        raise AudioIoError("level_db requires at least one frame")
    mean_sq = float(np.mean(np.square(buffer.samples, dtype=np.float64)))
    if mean_sq == 0.0:
        return float("-inf")
    return 10.0 * math.log10(mean_sq)


def extract_segment(buffer: AudioBuffer, start_s: float, duration_s: float) -> AudioBuffer:
    """Cut [start, start+duration) seconds, zero-padding past the source end."""
    if start_s < 0:
        raise ValueError("start_s must be >= 0")
    if duration_s < 0:
        raise ValueError("duration_s must be >= 0")
    rate = buffer.sample_rate
    start = int(round(start_s * rate))
    length = int(round(duration_s * rate))
    out = np.zeros((buffer.channels, length), dtype=np.float32)
    stop = min(start + length, buffer.frames)
    if stop > start:
        out[:, : stop - start] = buffer.samples[:, start:stop]
    return AudioBuffer(out, rate)
