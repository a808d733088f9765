import math

import numpy as np
import pytest

from msrkit.audio_io import AudioBuffer, write_wav
from msrkit.evaluate import EvalError, evaluate_dir, snr


def buf(x, rate=44100):
    return AudioBuffer(np.asarray(x, np.float32), rate)


def rand_buf(seed, frames=2000):
    return buf(np.random.default_rng(seed).uniform(-0.5, 0.5, (1, frames)))


class TestSnr:
    def test_equal_is_pos_inf(self):
        x = rand_buf(0)
        assert snr(x, x) == float("inf")

    def test_zero_estimate_is_zero_db(self):
        ref = rand_buf(1)
        est = buf(np.zeros_like(ref.samples))
        assert snr(est, ref) == 0.0

    def test_silent_ref_nonsilent_est(self):
        ref = buf(np.zeros((1, 100), np.float32))
        est = rand_buf(2, 100)
        assert snr(est, ref) == float("-inf")

    def test_hundredth_noise_energy_is_twenty_db(self):
        rng = np.random.default_rng(3)
        ref = rand_buf(4)
        noise = rng.standard_normal(ref.samples.shape)
        ref_energy = np.sum(ref.samples.astype(np.float64) ** 2)
        noise *= np.sqrt(ref_energy / 100.0 / np.sum(noise**2))
        est = buf(ref.samples + noise.astype(np.float32))
        assert snr(est, ref) == pytest.approx(20.0, abs=0.1)

    def test_scale_invariance(self):
        ref = rand_buf(5)
        est = rand_buf(6)
        a = snr(est, ref)
        # power-of-two gain: exact in float32, so the ratio is untouched
        b = snr(buf(est.samples * 4.0), buf(ref.samples * 4.0))
        assert a == pytest.approx(b, abs=1e-9)

    def test_strictly_decreasing_in_noise(self):
        rng = np.random.default_rng(7)
        ref = rand_buf(8)
        noise = rng.standard_normal(ref.samples.shape).astype(np.float32)
        values = [snr(buf(ref.samples + a * noise), ref) for a in (0.01, 0.05, 0.2)]
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            snr(rand_buf(9, 10), rand_buf(10, 11))


class TestEvaluateDir:
    def write_pair(self, d, track, stem, wave, rate=44100):
        d.mkdir(parents=True, exist_ok=True)
        write_wav(d / f"{track}.{stem}.wav", buf(wave, rate))

    def test_identical_dirs_all_inf_excluded(self, tmp_path):
        rng = np.random.default_rng(11)
        for track in ("a", "b"):
            for stem in ("vocals", "drums"):
                wave = rng.uniform(-0.5, 0.5, (1, 500))
                self.write_pair(tmp_path / "ref", track, stem, wave)
                self.write_pair(tmp_path / "est", track, stem, wave)
        report = evaluate_dir(tmp_path / "ref", tmp_path / "est")
        assert len(report.entries) == 4
        assert all(e.snr_db == float("inf") for e in report.entries)
        assert report.nonfinite_count == 4
        assert math.isnan(report.overall_mean)
        assert report.stem_means == {}

    def test_missing_estimate_scored_as_silence(self, tmp_path):
        rng = np.random.default_rng(12)
        wave = rng.uniform(-0.5, 0.5, (1, 400))
        self.write_pair(tmp_path / "ref", "t", "vocals", wave)
        self.write_pair(tmp_path / "ref", "t", "drums", wave)
        self.write_pair(tmp_path / "est", "t", "vocals", wave + 0.01 * rng.standard_normal((1, 400)))
        report = evaluate_dir(tmp_path / "ref", tmp_path / "est")
        drums = next(e for e in report.entries if e.stem == "drums")
        assert drums.snr_db == 0.0
        assert report.stem_means["drums"] == 0.0

    def test_means_match_independent_recompute(self, tmp_path):
        rng = np.random.default_rng(13)
        for track in ("x", "y", "z"):
            for stem in ("vocals", "bass"):
                wave = rng.uniform(-0.5, 0.5, (1, 600))
                est = wave + rng.uniform(0.001, 0.1) * rng.standard_normal((1, 600))
                self.write_pair(tmp_path / "ref", track, stem, wave)
                self.write_pair(tmp_path / "est", track, stem, est)
        report = evaluate_dir(tmp_path / "ref", tmp_path / "est")
        # independent recompute from the emitted TSV text
        rows = []
        means = {}
        for line in report.to_tsv().splitlines()[1:]:
            if line.startswith("#"):
                continue
            track, stem, value = line.split("\t")
            if track == "__mean__":
                means[stem] = float(value)
            else:
                rows.append((stem, float(value)))
        for stem in ("vocals", "bass"):
            finite = [v for s, v in rows if s == stem and math.isfinite(v)]
            assert means[stem] == pytest.approx(np.mean(finite), abs=1e-9)
        finite_all = [v for _, v in rows if math.isfinite(v)]
        assert means["all"] == pytest.approx(np.mean(finite_all), abs=1e-9)

    def test_empty_reference_dir_rejected(self, tmp_path):
        (tmp_path / "ref").mkdir()
        (tmp_path / "est").mkdir()
        with pytest.raises(EvalError):
            evaluate_dir(tmp_path / "ref", tmp_path / "est")

    def test_disjoint_dirs_rejected(self, tmp_path):
        self.write_pair(tmp_path / "ref", "a", "vocals", np.ones((1, 100)) * 0.1)
        self.write_pair(tmp_path / "est", "b", "drums", np.ones((1, 100)) * 0.1)
        with pytest.raises(EvalError, match="overlap"):
            evaluate_dir(tmp_path / "ref", tmp_path / "est")

    def test_tracks_with_dots_in_name(self, tmp_path):
        wave = np.random.default_rng(14).uniform(-0.5, 0.5, (1, 300))
        self.write_pair(tmp_path / "ref", "my.song.v2", "vocals", wave)
        self.write_pair(tmp_path / "est", "my.song.v2", "vocals", wave * 0.9)
        report = evaluate_dir(tmp_path / "ref", tmp_path / "est")
        assert report.entries[0].track == "my.song.v2"
