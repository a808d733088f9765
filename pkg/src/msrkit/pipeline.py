"""Cascaded restoration: denoise, 6-stem separation, refinement, gated dereverb.

Every stage model is a callable AudioBuffer -> AudioBuffer operating at the
pipeline work rate. Checkpoint paths resolve to separator models; the literal
names "identity" and "zero" resolve to stub stages (useful for wiring tests
and for running the cascade before any training has happened).
"""

from __future__ import annotations

import configparser
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, TARGET_STEMS, level_db, resample
from .training import load_checkpoint

SIXSTEM_LABELS = ("bass", "drums", "other", "vocals", "guitars", "piano")
REFINE_ROUTES = (
    ("drums", "drums"),
    ("drums", "percussions"),
    ("other", "synthesizers"),
    ("other", "orchestral"),
)


class PipelineError(Exception):
    """Configuration or checkpoint failure, naming the offending stage."""


@dataclass
class PipelineConfig:
    sixstem_ckpts: dict
    refine_ckpts: dict
    denoise_ckpt: str | None = None
    dereverb_ckpt: str | None = None
    bypass_threshold_db: float = 10.0
    work_rate: int = 44100

    def __post_init__(self):
        if self.bypass_threshold_db <= 0:
            raise ValueError("bypass threshold must be positive")
        if set(self.sixstem_ckpts) != set(SIXSTEM_LABELS):
            raise ValueError(f"sixstem checkpoints must cover exactly {SIXSTEM_LABELS}")
        if set(self.refine_ckpts) != set(REFINE_ROUTES):
            raise ValueError(f"refinement checkpoints must cover exactly {REFINE_ROUTES}")


def stub_pipeline_config(**overrides) -> PipelineConfig:
    """All separators as identity; refinements copy the primary route and
    silence the secondary one."""
    refine = {
        ("drums", "drums"): "identity",
        ("drums", "percussions"): "zero",
        ("other", "synthesizers"): "identity",
        ("other", "orchestral"): "zero",
    }
    cfg = dict(
        sixstem_ckpts={label: "identity" for label in SIXSTEM_LABELS},
        refine_ckpts=refine,
    )
    cfg.update(overrides)
    return PipelineConfig(**cfg)


def load_pipeline_config(path) -> PipelineConfig:
    """INI schema: [pipeline] threshold/work_rate, [checkpoints] per-stage paths."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"pipeline config not found: {path}")
    pl = parser["pipeline"] if parser.has_section("pipeline") else {}
    ck = parser["checkpoints"] if parser.has_section("checkpoints") else {}

    def resolve(value):
        if value in (None, "", "identity", "zero"):
            return value or None
        return str((Path(path).parent / value).resolve())

    sixstem = {label: resolve(ck.get(f"sixstem.{label}", "identity")) for label in SIXSTEM_LABELS}
    refine = {
        (src, dst): resolve(ck.get(f"refine.{src}.{dst}", "identity"))
        for src, dst in REFINE_ROUTES
    }
    return PipelineConfig(
        sixstem_ckpts=sixstem,
        refine_ckpts=refine,
        denoise_ckpt=resolve(ck.get("denoise", "")),
        dereverb_ckpt=resolve(ck.get("dereverb", "")),
        bypass_threshold_db=float(pl.get("bypass_threshold_db", 10.0)),
        work_rate=int(pl.get("work_rate", 44100)),
    )


def _resolve_stage(spec, stage: str, work_rate: int):
    """Map a checkpoint path or stub name to a waveform callable (or None)."""
    if spec is None:
        return None
    if spec == "identity":
        return lambda buf: buf.copy()
    if spec == "zero":
        return lambda buf: AudioBuffer(np.zeros_like(buf.samples), buf.sample_rate)
    try:
        model = load_checkpoint(spec)
    except Exception as exc:
        raise PipelineError(f"stage {stage!r}: cannot load checkpoint {spec}: {exc}") from exc
    if model.config.sample_rate != work_rate:
        raise PipelineError(
            f"stage {stage!r}: model rate {model.config.sample_rate} != work rate {work_rate}"
        )
    return model.separate


@dataclass
class StageModels:
    sixstem: dict
    refine: dict
    denoise: object = None
    dereverb: object = None


def load_stage_models(cfg: PipelineConfig) -> StageModels:
    return StageModels(
        sixstem={
            label: _resolve_stage(cfg.sixstem_ckpts[label], f"separate.{label}", cfg.work_rate)
            for label in SIXSTEM_LABELS
        },
        refine={
            route: _resolve_stage(cfg.refine_ckpts[route], f"refine.{route[0]}.{route[1]}", cfg.work_rate)
            for route in REFINE_ROUTES
        },
        denoise=_resolve_stage(cfg.denoise_ckpt, "denoise", cfg.work_rate),
        dereverb=_resolve_stage(cfg.dereverb_ckpt, "dereverb", cfg.work_rate),
    )


def dereverb_gate(vocals_in: AudioBuffer, model, threshold_db: float = 10.0) -> AudioBuffer:
    """Apply the model unless its output level drops more than threshold_db.

    The drop is measured between this stage's own input and output; an
    all-silent output always bypasses. The inequality is strict: a drop of
    exactly threshold_db keeps the processed output.
    """
    out, _bypassed, _drop = _gated_dereverb(vocals_in, model, threshold_db)
    return out


def _gated_dereverb(vocals_in: AudioBuffer, model, threshold_db: float):
    out = model(vocals_in)
    out_level = level_db(out) if out.frames else float("-inf")
    if out_level == float("-inf"):
        return vocals_in, True, float("inf")
    drop = level_db(vocals_in) - out_level
    if drop > threshold_db:
        return vocals_in, True, drop
    return out, False, drop


@dataclass
class StageRecord:
    name: str
    in_db: float
    out_db: float
    dur_s: float
    wall_s: float


@dataclass
class PipelineResult:
    stems: dict
    records: list = field(default_factory=list)
    dereverb_ran: bool = False
    dereverb_bypassed: bool = False
    dereverb_drop_db: float = 0.0
    input_rate: int = 0
    input_frames: int = 0
    work_rate: int = 0


def _timed(name: str, fn, buf: AudioBuffer):
    t0 = time.perf_counter()
    out = fn(buf)
    wall = time.perf_counter() - t0
    record = StageRecord(name=name, in_db=level_db(buf), out_db=level_db(out),
                         dur_s=out.duration_s, wall_s=wall)
    return out, record


def _run_stages(tasks, jobs: int):
    """Run (name, fn, buf) stage tasks, preserving task order in the results."""
    if jobs > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda t: _timed(*t), tasks))
    return [_timed(*t) for t in tasks]


def _fit_length(buf: AudioBuffer, frames: int) -> AudioBuffer:
    if buf.frames == frames:
        return buf
    out = np.zeros((buf.channels, frames), np.float32)
    keep = min(frames, buf.frames)
    out[:, :keep] = buf.samples[:, :keep]
    return AudioBuffer(out, buf.sample_rate)


def run_pipeline(mixture: AudioBuffer, cfg: PipelineConfig, models: StageModels | None = None,
                 jobs: int = 1) -> PipelineResult:
    """Run the cascade and return the eight restored stems plus a trace.

    `jobs` > 1 runs the six separation models (and then the four refinement
    models) concurrently; stage models are immutable, so this is safe and the
    stems do not depend on scheduling.
    """
    if mixture.frames < 1:
        raise ValueError("mixture must be nonempty")
    if models is None:
        models = load_stage_models(cfg)
    result = PipelineResult(
        stems={}, input_rate=mixture.sample_rate, input_frames=mixture.frames, work_rate=cfg.work_rate
    )
    records = result.records

    work = resample(mixture, cfg.work_rate)
    if models.denoise:
        denoised, rec = _timed("denoise", models.denoise, work)
        records.append(rec)
    else:
        denoised = work

    six_out = _run_stages(
        [(f"separate.{label}", models.sixstem[label], denoised) for label in SIXSTEM_LABELS], jobs
    )
    six = {}
    for label, (out, rec) in zip(SIXSTEM_LABELS, six_out):
        six[label] = out
        records.append(rec)
    assert all(buf.sample_rate == cfg.work_rate for buf in six.values()), "rate drift inside cascade"

    refine_out = _run_stages(
        [(f"refine.{src}.{dst}", models.refine[(src, dst)], six[src]) for src, dst in REFINE_ROUTES],
        jobs,
    )
    refined = {}
    for (src, dst), (out, rec) in zip(REFINE_ROUTES, refine_out):
        refined[dst] = out
        records.append(rec)

    vocals = six["vocals"]
    if models.dereverb:
        t0 = time.perf_counter()
        out, bypassed, drop = _gated_dereverb(vocals, models.dereverb, cfg.bypass_threshold_db)
        records.append(
            StageRecord("dereverb", level_db(vocals), level_db(out) if out.frames else float("-inf"),
                        out.duration_s, time.perf_counter() - t0)
        )
        result.dereverb_ran = True
        result.dereverb_bypassed = bypassed
        result.dereverb_drop_db = drop
        vocals = out

    staged = {
        "vocals": vocals,
        "guitars": six["guitars"],
        "keyboards": six["piano"],  # piano aliases keyboards on output
        "bass": six["bass"],
        "synthesizers": refined["synthesizers"],
        "drums": refined["drums"],
        "percussions": refined["percussions"],
        "orchestral": refined["orchestral"],
    }
    for label in TARGET_STEMS:
        back = resample(staged[label], mixture.sample_rate)
        result.stems[label] = _fit_length(back, mixture.frames)
    return result


def stage_report(result: PipelineResult) -> str:
    """Line-oriented trace: per-stage levels, gate decision, final stem levels."""
    def fmt(v: float) -> str:
        return f"{v:.12g}"

    lines = [
        f"pipeline input_rate={result.input_rate} work_rate={result.work_rate} "
        f"input_frames={result.input_frames}"
    ]
    for rec in result.records:
        lines.append(
            f"stage {rec.name} in_db={fmt(rec.in_db)} out_db={fmt(rec.out_db)} "
            f"dur_s={fmt(rec.dur_s)} wall_s={fmt(rec.wall_s)}"
        )
    if result.dereverb_ran:
        flag = "true" if result.dereverb_bypassed else "false"
        lines.append(f"dereverb bypass={flag} drop_db={fmt(result.dereverb_drop_db)}")
    for label in TARGET_STEMS:
        lines.append(f"output {label} level_db={fmt(level_db(result.stems[label]))}")
    return "\n".join(lines) + "\n"
