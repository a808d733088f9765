"""Deterministic synthetic songs: one oscillator/noise recipe per stem label.

Desk-scale stand-in for real multitrack data. Every stem is written as
float32 WAV so the mixture file equals the in-memory stem sum bit for bit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import TARGET_STEMS, AudioBuffer, write_wav


def _t(n: int, rate: int) -> np.ndarray:
    return np.arange(n, dtype=np.float64) / rate


def _lowpass(x: np.ndarray, rate: int, cutoff_hz: float) -> np.ndarray:
    # short windowed-sinc FIR; enough selectivity for synthetic timbres
    taps = 65
    k = np.arange(taps) - taps // 2
    fc = cutoff_hz / (rate / 2.0)
    h = fc * np.sinc(fc * k) * np.hanning(taps)
    h /= h.sum()
    return np.convolve(x, h, mode="same")


def _bursts(rng, n: int, rate: int, per_second: float, decay_s: float) -> np.ndarray:
    env = np.zeros(n)
    period = int(rate / per_second)
    phase = int(rng.integers(0, period))
    tail = np.exp(-np.arange(n) / (decay_s * rate))
    for start in range(phase, n, period):
        seg = min(len(tail), n - start)
        env[start : start + seg] += tail[:seg]
    return env


def _vocals(rng, n, rate):
    t = _t(n, rate)
    f0 = 220.0 * (1.0 + rng.uniform(-0.02, 0.02))
    vibrato = 0.006 * np.sin(2 * np.pi * 5.0 * t + rng.uniform(0, 2 * np.pi))
    am = 0.8 + 0.2 * np.sin(2 * np.pi * 0.7 * t)
    return 0.4 * am * np.sin(2 * np.pi * f0 * (t + vibrato))


def _guitars(rng, n, rate):
    t = _t(n, rate)
    f0 = 196.0 * (1.0 + rng.uniform(-0.01, 0.01))
    tone = sum(np.sin(2 * np.pi * f0 * k * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 6))
    return 0.25 * _bursts(rng, n, rate, 2.0, 0.25) * tone


def _keyboards(rng, n, rate):
    t = _t(n, rate)
    chord = [261.63, 329.63, 392.0]
    tone = sum(np.sign(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))) for f in chord)
    return 0.08 * _lowpass(tone, rate, 2500.0)


def _bass(rng, n, rate):
    t = _t(n, rate)
    f0 = 55.0 * (1.0 + rng.uniform(-0.01, 0.01))
    return 0.35 * (np.sin(2 * np.pi * f0 * t) + 0.3 * np.sin(2 * np.pi * 2 * f0 * t))


def _synthesizers(rng, n, rate):
    t = _t(n, rate)
    f = 440.0
    detune = 1.0 + rng.uniform(0.004, 0.008)
    saw = lambda freq: 2.0 * np.mod(freq * t + rng.uniform(), 1.0) - 1.0
    return 0.12 * _lowpass(saw(f) + saw(f * detune), rate, 4000.0)


def _drums(rng, n, rate):
    noise = rng.standard_normal(n)
    return 0.5 * _bursts(rng, n, rate, 2.0, 0.08) * _lowpass(noise, rate, 300.0)


def _percussions(rng, n, rate):
    noise = rng.standard_normal(n)
    high = noise - _lowpass(noise, rate, 3000.0)
    return 0.3 * _bursts(rng, n, rate, 4.0, 0.02) * high


def _orchestral(rng, n, rate):
    t = _t(n, rate)
    chord = [130.81, 164.81, 196.0]
    attack = np.minimum(t / 1.5, 1.0)
    tremolo = 1.0 + 0.1 * np.sin(2 * np.pi * 4.0 * t)
    tone = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) for f in chord)
    return 0.12 * attack * tremolo * tone


RECIPES = {
    "vocals": _vocals,
    "guitars": _guitars,
    "keyboards": _keyboards,
    "bass": _bass,
    "synthesizers": _synthesizers,
    "drums": _drums,
    "percussions": _percussions,
    "orchestral": _orchestral,
}


def synth_stem(label: str, rng, n: int, rate: int, channels: int = 1) -> AudioBuffer:
    wave = RECIPES[label](rng, n, rate).astype(np.float32)
    return AudioBuffer(np.tile(wave, (channels, 1)), rate)


def write_dataset(out_dir, n_songs: int, seed: int = 0, rate: int = 44100,
                  duration_s: float = 6.0, labels=None, channels: int = 1) -> Path:
    """Generate songs + per-song mixture and a manifest; deterministic per seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = int(round(duration_s * rate))
    lines = ["# synthetic dataset"]
    for i in range(n_songs):
        rng = np.random.default_rng([seed, i])
        if labels is None:
            extra = [s for s in TARGET_STEMS if s not in ("vocals", "drums")]
            picks = rng.choice(len(extra), size=int(rng.integers(1, 4)), replace=False)
            song_labels = ["vocals", "drums"] + [extra[j] for j in sorted(picks)]
        else:
            song_labels = list(labels)
        song_id = f"song{i:03d}"
        stems = {}
        for label in song_labels:
            buf = synth_stem(label, rng, n, rate, channels)
            name = f"{song_id}.{label}.wav"
            write_wav(out_dir / name, buf, "float32")
            stems[label] = buf
            lines.append(f"{song_id}\t{label}\t{name}")
        # sum in sorted label order so the file set reproduces the mixture exactly
        mixture = AudioBuffer(np.sum(np.stack([stems[s].samples for s in sorted(stems)]), axis=0), rate)
        write_wav(out_dir / f"{song_id}.mixture.wav", mixture, "float32")
    manifest = out_dir / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def write_overfit_fixture(out_dir, duration_s: float = 0.5, rate: int = 44100) -> Path:
    """Single two-stem song: a 220 Hz tone against loud filtered noise.

    The tone carries a -34 dB noise bed so the log-magnitude loss term stays
    well conditioned at every bin (a spectrally empty reference makes that
    term nearly singular wherever the interferer is loud). The noise level is
    set so the raw mixture scores roughly -2 dB SNR against the tone stem.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    rng = np.random.default_rng(1234)
    tone = (0.5 * np.sin(2 * np.pi * 220.0 * t) + 0.01 * rng.standard_normal(n)).astype(np.float32)
    noise = (2.0 * _lowpass(rng.standard_normal(n), rate, 1500.0)).astype(np.float32)
    write_wav(out_dir / "fixture.vocals.wav", AudioBuffer(tone[None], rate), "float32")
    write_wav(out_dir / "fixture.drums.wav", AudioBuffer(noise[None], rate), "float32")
    manifest = out_dir / "manifest.tsv"
    manifest.write_text(
        "fixture\tvocals\tfixture.vocals.wav\nfixture\tdrums\tfixture.drums.wav\n"
    )
    return manifest
