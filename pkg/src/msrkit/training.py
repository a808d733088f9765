"""Dataset indexing, segment sampling, the optimizer loop, and checkpoints."""

from __future__ import annotations

import configparser
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio_io import ALL_STEMS, AudioBuffer, extract_segment, read_wav, resample, wav_info
from .losses import MrStftConfig, combined_loss
from .model import ModelConfig, SeparatorModel, make_band_spec
from .dsp import StftParams
from .tensor import Tensor, backward, zero_grads


class ManifestError(Exception):
    """Malformed or inconsistent dataset manifest."""


class TrainingDivergedError(Exception):
    """Loss became non-finite; message carries a parameter-norm report."""


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeTableError(CheckpointError):
    pass


# -- dataset ------------------------------------------------------------------


@dataclass
class SongEntry:
    song_id: str
    stems: dict
    sample_rate: int


@dataclass
class DatasetIndex:
    songs: list

    def songs_with(self, stem: str):
        return [s for s in self.songs if stem in s.stems]

    @property
    def stem_labels(self):
        labels = set()
        for song in self.songs:
            labels.update(song.stems)
        return sorted(labels)


def load_manifest(path) -> DatasetIndex:
    """Parse `song_id<TAB>stem<TAB>relative/path.wav` lines; `#` comments."""
    path = Path(path)
    root = path.parent
    songs: dict[str, SongEntry] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        song_id, stem, rel = parts
        if stem not in ALL_STEMS:
            raise ManifestError(f"{path}:{lineno}: unknown stem label {stem!r}")
        wav_path = root / rel
        if not wav_path.is_file():
            raise ManifestError(f"{path}:{lineno}: missing file {wav_path}")
        entry = songs.setdefault(song_id, SongEntry(song_id, {}, 0))
        if stem in entry.stems:
            raise ManifestError(f"{path}:{lineno}: duplicate stem {stem!r} for song {song_id!r}")
        entry.stems[stem] = wav_path
        entry.sample_rate = wav_info(wav_path)[1]
    return DatasetIndex(list(songs.values()))


# -- training configuration ----------------------------------------------------


@dataclass
class TrainConfig:
    segment_s: float = 3.0
    random_mix: bool = False
    batch_size: int = 4
    steps: int = 1000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    target: str = "vocals"
    gain_jitter: bool = False
    log_every: int = 1
    checkpoint_every: int = 0  # 0 -> final checkpoint only
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: MrStftConfig = field(default_factory=MrStftConfig)

    def __post_init__(self):
        if self.segment_s <= 0:
            raise ValueError("segment_s must be > 0")
        if self.batch_size < 1 or self.steps < 1:
            raise ValueError("batch_size and steps must be >= 1")


# preset name -> (segment_s, random_mix)
PRESETS = {
    "baseline": (3.0, False),
    "large": (10.0, False),
    "large-random": (10.0, True),
}


def apply_preset(cfg: TrainConfig, name: str) -> TrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    segment_s, random_mix = PRESETS[name]
    return replace(cfg, segment_s=segment_s, random_mix=random_mix)


def load_train_config(path) -> TrainConfig:
    """Read the INI-style training config (sections: train, model, loss)."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = TrainConfig()
    if parser.has_section("model"):
        m = parser["model"]
        n_fft = m.getint("n_fft", 2048)
        hop = m.getint("hop", 512)
        sample_rate = m.getint("sample_rate", 44100)
        band_spec = make_band_spec(
            m.get("band_scale", "linear"), n_fft // 2 + 1, m.getint("n_bands", 12),
            sample_rate=sample_rate, n_fft=n_fft,
        )
        model = ModelConfig(
            dim=m.getint("dim", 64),
            depth=m.getint("depth", 2),
            heads=m.getint("heads", 4),
            band_spec=band_spec,
            stft=StftParams(n_fft=n_fft, hop=hop),
            target=m.get("target", "vocals"),
            sample_rate=sample_rate,
            rope_time=m.getboolean("rope_time", True),
            rope_band=m.getboolean("rope_band", True),
            rope_base=m.getfloat("rope_base", 10000.0),
        )
        cfg = replace(cfg, model=model, target=model.target)
    if parser.has_section("loss"):
        lo = parser["loss"]
        resolutions = tuple(
            tuple(int(v) for v in pair.split(":"))
            for pair in lo.get("resolutions", "512:128,1024:256,2048:512").split(",")
        )
        cfg = replace(
            cfg,
            loss=MrStftConfig(
                resolutions=resolutions,
                sc_weight=lo.getfloat("sc_weight", 1.0),
                mag_weight=lo.getfloat("mag_weight", 1.0),
                lambda_spec=lo.getfloat("lambda_spec", 1.0),
            ),
        )
    if parser.has_section("train"):
        tr = parser["train"]
        cfg = replace(
            cfg,
            segment_s=tr.getfloat("segment_s", cfg.segment_s),
            random_mix=tr.getboolean("random_mix", cfg.random_mix),
            batch_size=tr.getint("batch_size", cfg.batch_size),
            steps=tr.getint("steps", cfg.steps),
            lr=tr.getfloat("lr", cfg.lr),
            beta1=tr.getfloat("beta1", cfg.beta1),
            beta2=tr.getfloat("beta2", cfg.beta2),
            eps=tr.getfloat("eps", cfg.eps),
            seed=tr.getint("seed", cfg.seed),
            target=tr.get("target", cfg.target),
            gain_jitter=tr.getboolean("gain_jitter", cfg.gain_jitter),
            log_every=tr.getint("log_every", cfg.log_every),
            checkpoint_every=tr.getint("checkpoint_every", cfg.checkpoint_every),
        )
    if cfg.target != cfg.model.target:
        cfg = replace(cfg, model=replace(cfg.model, target=cfg.target))
    return cfg


# -- example sampling ------------------------------------------------------------


def _load_at_rate(path, rate: int, cache: dict | None) -> AudioBuffer:
    key = (str(path), rate)
    if cache is not None and key in cache:
        return cache[key]
    buf = resample(read_wav(path), rate)
    if cache is not None:
        cache[key] = buf
    return buf


def _segment(buf: AudioBuffer, rng, segment_s: float) -> AudioBuffer:
    max_start = max(0.0, buf.duration_s - segment_s)
    return extract_segment(buf, rng.uniform(0.0, max_start), segment_s)


def _match_channels(segs):
    channels = max(s.channels for s in segs)
    out = []
    for s in segs:
        if s.channels == channels:
            out.append(s.samples)
        elif s.channels == 1:
            out.append(np.tile(s.samples, (channels, 1)))
        else:
            raise ValueError(f"cannot mix {s.channels}-channel stem into {channels}-channel example")
    return out


def sample_example(index: DatasetIndex, cfg: TrainConfig, rng, cache: dict | None = None):
    """Draw one (mixture, target) segment pair at the model rate.

    Without random mixing the mixture is the exact stem sum of one song over
    one window. With it, the target comes from one song and every other stem
    label is drawn independently from a random song at its own offset.
    """
    holders = index.songs_with(cfg.target)
    if not holders:
        raise ValueError(f"no song in the index provides target stem {cfg.target!r}")
    rate = cfg.model.sample_rate

    def gain(stem_rng):
        if not cfg.gain_jitter:
            return np.float32(1.0)
        return np.float32(10.0 ** (stem_rng.uniform(-6.0, 3.0) / 20.0))

    if not cfg.random_mix:
        # one song, one shared window; the mixture is the exact stem sum
        song = index.songs[rng.integers(len(index.songs))]
        full = {s: _load_at_rate(p, rate, cache) for s, p in sorted(song.stems.items())}
        duration = min(b.duration_s for b in full.values())
        start = rng.uniform(0.0, max(0.0, duration - cfg.segment_s))
        labels = sorted(full)
        segs = [extract_segment(full[s], start, cfg.segment_s) for s in labels]
        arrays = _match_channels(segs)
        gains = [gain(rng) for _ in labels]
        mix = np.sum(np.stack([g * a for g, a in zip(gains, arrays)]), axis=0)
        if cfg.target in labels:
            i = labels.index(cfg.target)
            target = gains[i] * arrays[i]
        else:
            target = np.zeros_like(mix)
        return mix.astype(np.float32), target.astype(np.float32)

    # random mixture: target stem first, then each other label independently
    song = holders[rng.integers(len(holders))]
    target_seg = _segment(_load_at_rate(song.stems[cfg.target], rate, cache), rng, cfg.segment_s)
    parts = [(cfg.target, target_seg, gain(rng))]
    for label in index.stem_labels:
        if label == cfg.target:
            continue
        candidates = index.songs_with(label)
        donor = candidates[rng.integers(len(candidates))]
        seg = _segment(_load_at_rate(donor.stems[label], rate, cache), rng, cfg.segment_s)
        parts.append((label, seg, gain(rng)))
    arrays = _match_channels([seg for _, seg, _ in parts])
    mix = np.sum(np.stack([g * a for (_, _, g), a in zip(parts, arrays)]), axis=0)
    target = parts[0][2] * arrays[0]
    return mix.astype(np.float32), target.astype(np.float32)


# -- optimizer ---------------------------------------------------------------------


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              lr: float, beta1: float, beta2: float, eps: float, t: int) -> None:
    """One bias-corrected update, in place on param and the moment buffers."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step(p.data, grad, m, v, self.lr, self.beta1, self.beta2, self.eps, self.t)

    def zero_grad(self):
        zero_grads(self.params)


# -- checkpoint serialization --------------------------------------------------------

CKPT_MAGIC = b"MSRF"
CKPT_VERSION = 1


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedCheckpointError(f"expected {n} bytes, got {len(data)}")
    return data


def save_checkpoint(model: SeparatorModel, path, step: int = 0, optimizer: Adam | None = None) -> None:
    """Binary layout: magic, version, config text, step, named f32 tables."""
    params = model.named_parameters()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        config = model.config.to_text().encode()
        f.write(struct.pack("<I", len(config)))
        f.write(config)
        f.write(struct.pack("<Q", step))
        f.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            encoded = name.encode()
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", p.ndim))
            f.write(struct.pack(f"<{p.ndim}I", *p.shape))
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        if optimizer is None:
            f.write(struct.pack("<B", 0))
        else:
            f.write(struct.pack("<B", 1))
            f.write(struct.pack("<Q", optimizer.t))
            for m, v in zip(optimizer.m, optimizer.v):
                f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
                f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    step: int
    adam_t: int | None = None
    adam_m: list | None = None
    adam_v: list | None = None


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != CKPT_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CKPT_VERSION:
            raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
        (config_len,) = struct.unpack("<I", _read_exact(f, 4))
        config = ModelConfig.from_text(_read_exact(f, config_len).decode())
        (step,) = struct.unpack("<Q", _read_exact(f, 8))
        (n_params,) = struct.unpack("<I", _read_exact(f, 4))
        params = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode()
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(shape)
            params[name] = data.astype(np.float32)
        (opt_flag,) = struct.unpack("<B", _read_exact(f, 1))
        ckpt = Checkpoint(config=config, params=params, step=step)
        if opt_flag:
            (ckpt.adam_t,) = struct.unpack("<Q", _read_exact(f, 8))
            ckpt.adam_m, ckpt.adam_v = [], []
            for p in params.values():
                ckpt.adam_m.append(
                    np.frombuffer(_read_exact(f, 4 * p.size), dtype="<f4").reshape(p.shape).astype(np.float32)
                )
                ckpt.adam_v.append(
                    np.frombuffer(_read_exact(f, 4 * p.size), dtype="<f4").reshape(p.shape).astype(np.float32)
                )
        return ckpt


def load_checkpoint(path) -> SeparatorModel:
    """Rebuild the model from a checkpoint, validating the parameter table."""
    ckpt = read_checkpoint(path)
    model = SeparatorModel(ckpt.config)
    expected = model.named_parameters()
    if list(expected) != list(ckpt.params):
        missing = set(expected) ^ set(ckpt.params)
        raise ShapeTableError(f"parameter names do not match the architecture: {sorted(missing)[:5]}")
    for name, tensor in expected.items():
        stored = ckpt.params[name]
        if stored.shape != tensor.shape:
            raise ShapeTableError(f"{name}: stored shape {stored.shape} != expected {tensor.shape}")
        tensor.data = stored.copy()
    return model


# -- training loop ----------------------------------------------------------------------


@dataclass
class TrainResult:
    model: SeparatorModel
    log_lines: list
    final_loss: float
    steps: int
    optimizer: Adam


def _param_norm_report(model: SeparatorModel) -> str:
    worst = sorted(
        ((float(np.linalg.norm(p.data)), name) for name, p in model.named_parameters().items()),
        reverse=True,
    )[:5]
    return ", ".join(f"{name}={norm:.3e}" for norm, name in worst)


def train(index: DatasetIndex, cfg: TrainConfig, out_ckpt=None, loss_log=None) -> TrainResult:
    """Run cfg.steps optimizer steps; returns the model and the loss log lines."""
    if not index.songs_with(cfg.target):
        raise ValueError(f"no song in the index provides target stem {cfg.target!r}")
    rng = np.random.default_rng(cfg.seed)
    model = SeparatorModel(cfg.model, rng)
    optimizer = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    cache: dict = {}
    log_lines: list[str] = []
    final_loss = float("nan")

    for step in range(1, cfg.steps + 1):
        batch = [sample_example(index, cfg, rng, cache) for _ in range(cfg.batch_size)]
        channels = batch[0][0].shape[0]
        mixes = np.concatenate([m for m, _ in batch], axis=0)
        est_rows = model.forward(mixes)
        per_example = T.split(est_rows, [channels] * cfg.batch_size, axis=0)
        total = None
        for est, (_, ref) in zip(per_example, batch):
            term = combined_loss(est, Tensor(ref), cfg.loss)
            total = term if total is None else T.add(total, term)
        loss = T.scale(total, 1.0 / cfg.batch_size)
        final_loss = loss.item()
        if not np.isfinite(final_loss):
            raise TrainingDivergedError(
                f"non-finite loss at step {step}; largest parameter norms: {_param_norm_report(model)}"
            )
        backward(loss)
        optimizer.step()
        optimizer.zero_grad()
        if step % cfg.log_every == 0 or step == cfg.steps:
            log_lines.append(f"{step}\t{final_loss:.8e}")
        if out_ckpt and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(model, out_ckpt, step=step, optimizer=optimizer)

    if out_ckpt:
        save_checkpoint(model, out_ckpt, step=cfg.steps, optimizer=optimizer)
    if loss_log:
        Path(loss_log).write_text("\n".join(log_lines) + "\n")
    return TrainResult(model=model, log_lines=log_lines, final_loss=final_loss, steps=cfg.steps, optimizer=optimizer)
