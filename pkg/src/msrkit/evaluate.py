"""Per-stem SNR tables over directories of reference/estimate WAV pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import ALL_STEMS, AudioBuffer, read_wav


class EvalError(Exception):
    pass


def snr(est: AudioBuffer, ref: AudioBuffer) -> float:
    """10*log10(sum ref^2 / sum (ref-est)^2); +inf on equality, -inf for a
    silent reference against a nonsilent estimate."""
    if est.samples.shape != ref.samples.shape:
        raise ValueError(f"shape mismatch: {est.samples.shape} vs {ref.samples.shape}")
    if est.sample_rate != ref.sample_rate:
        raise ValueError(f"rate mismatch: {est.sample_rate} vs {ref.sample_rate}")
    ref64 = ref.samples.astype(np.float64)
    err = ref64 - est.samples.astype(np.float64)
    err_energy = float(np.sum(err * err))
    ref_energy = float(np.sum(ref64 * ref64))
    if err_energy == 0.0:
        return float("inf")
    if ref_energy == 0.0:
        return float("-inf")
    return 10.0 * math.log10(ref_energy / err_energy)


@dataclass
class EvalEntry:
    track: str
    stem: str
    snr_db: float


@dataclass
class EvalReport:
    entries: list = field(default_factory=list)
    stem_means: dict = field(default_factory=dict)
    overall_mean: float = float("nan")
    nonfinite_count: int = 0

    def to_tsv(self) -> str:
        def fmt(v: float) -> str:
            return f"{v:.12g}"

        lines = ["track\tstem\tsnr_db"]
        for e in self.entries:
            lines.append(f"{e.track}\t{e.stem}\t{fmt(e.snr_db)}")
        for stem in sorted(self.stem_means):
            lines.append(f"__mean__\t{stem}\t{fmt(self.stem_means[stem])}")
        lines.append(f"__mean__\tall\t{fmt(self.overall_mean)}")
        lines.append(f"# nonfinite_excluded={self.nonfinite_count}")
        return "\n".join(lines) + "\n"


def _scan_stems(directory: Path):
    """Map (track, stem) -> path for files named `<track>.<stem>.wav`."""
    found = {}
    for path in sorted(directory.glob("*.wav")):
        parts = path.name.split(".")
        if len(parts) < 3:
            continue
        stem = parts[-2]
        if stem not in ALL_STEMS:
            continue
        track = ".".join(parts[:-2])
        found[(track, stem)] = path
    return found


def _aggregate(report: EvalReport) -> None:
    finite_by_stem: dict[str, list] = {}
    finite_all = []
    for e in report.entries:
        if math.isfinite(e.snr_db):
            finite_by_stem.setdefault(e.stem, []).append(e.snr_db)
            finite_all.append(e.snr_db)
        else:
            report.nonfinite_count += 1
    report.stem_means = {
        stem: float(np.mean(vals)) for stem, vals in finite_by_stem.items()
    }
    report.overall_mean = float(np.mean(finite_all)) if finite_all else float("nan")


def evaluate_dir(ref_dir, est_dir) -> EvalReport:
    """Score every reference stem; a missing estimate counts as silence."""
    ref_dir, est_dir = Path(ref_dir), Path(est_dir)
    refs = _scan_stems(ref_dir)
    if not refs:
        raise EvalError(f"no `<track>.<stem>.wav` references found in {ref_dir}")
    ests = _scan_stems(est_dir)
    if not set(refs) & set(ests):
        raise EvalError(f"no overlapping (track, stem) pairs between {ref_dir} and {est_dir}")
    report = EvalReport()
    for (track, stem), ref_path in sorted(refs.items()):
        ref = read_wav(ref_path)
        est_path = ests.get((track, stem))
        if est_path is None:
            est = AudioBuffer(np.zeros_like(ref.samples), ref.sample_rate)
        else:
            est = read_wav(est_path)
        report.entries.append(EvalEntry(track=track, stem=stem, snr_db=snr(est, ref)))
    _aggregate(report)
    return report
