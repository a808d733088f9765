import numpy as np
import pytest

from msrkit.audio_io import AudioBuffer, read_wav, write_wav
from msrkit.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, main, resolve_train_config
from msrkit.synth import write_overfit_fixture


STUB_PIPELINE_INI = (
    "[pipeline]\nbypass_threshold_db = 10.0\nwork_rate = 44100\n"
    "[checkpoints]\n"
    "dereverb = zero\n"
    "sixstem.bass = identity\nsixstem.drums = identity\nsixstem.other = identity\n"
    "sixstem.vocals = identity\nsixstem.guitars = identity\nsixstem.piano = identity\n"
    "refine.drums.drums = identity\nrefine.drums.percussions = zero\n"
    "refine.other.synthesizers = identity\nrefine.other.orchestral = zero\n"
)


def write_tone(path, rate=44100, frames=3000, channels=1):
    t = np.arange(frames) / rate
    wave = np.tile((0.4 * np.sin(2 * np.pi * 330.0 * t)).astype(np.float32), (channels, 1))
    write_wav(path, AudioBuffer(wave, rate), "float32")
    return path


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--bogus-flag", "gradcheck"])
        assert exc.value.code == EXIT_USAGE

    def test_missing_required_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--out-ckpt", "x.ckpt"])
        assert exc.value.code == EXIT_USAGE

    def test_unknown_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == EXIT_USAGE

    def test_missing_manifest_is_runtime_error(self, tmp_path, capsys):
        code = main(["train", "--manifest", str(tmp_path / "nope.tsv"),
                     "--out-ckpt", str(tmp_path / "out.ckpt"), "--steps", "1"])
        assert code == EXIT_RUNTIME
        assert "nope.tsv" in capsys.readouterr().err

    def test_unreadable_separate_input(self, tmp_path, capsys):
        ini = tmp_path / "pipe.ini"
        ini.write_text(STUB_PIPELINE_INI)
        code = main(["separate", "--input", str(tmp_path / "missing.wav"),
                     "--pipeline", str(ini), "--out-dir", str(tmp_path / "out")])
        assert code == EXIT_RUNTIME

    def test_help_per_subcommand(self, capsys):
        for name in ("train", "separate", "eval", "resample", "gradcheck", "synth-dataset"):
            with pytest.raises(SystemExit) as exc:
                main([name, "--help"])
            assert exc.value.code == 0
            assert "usage" in capsys.readouterr().out.lower()


class TestPresets:
    @pytest.mark.parametrize(
        "preset,segment_s,random_mix",
        [("baseline", 3.0, False), ("large", 10.0, False), ("large-random", 10.0, True)],
    )
    def test_preset_sets_segment_and_mixing(self, preset, segment_s, random_mix):
        args = build_parser().parse_args(
            ["train", "--manifest", "m.tsv", "--out-ckpt", "o.ckpt", "--preset", preset]
        )
        cfg = resolve_train_config(args)
        assert cfg.segment_s == segment_s
        assert cfg.random_mix == random_mix

    def test_seed_override(self):
        args = build_parser().parse_args(
            ["--seed", "123", "train", "--manifest", "m.tsv", "--out-ckpt", "o.ckpt"]
        )
        assert resolve_train_config(args).seed == 123


class TestSynthDataset:
    def test_songs_and_determinism(self, tmp_path):
        for sub in ("a", "b"):
            code = main(["--seed", "5", "synth-dataset", "--out-dir", str(tmp_path / sub),
                         "--songs", "2", "--duration", "0.2", "--rate", "8000"])
            assert code == EXIT_OK
        manifest = (tmp_path / "a" / "manifest.tsv").read_text()
        assert len({line.split("\t")[0] for line in manifest.splitlines() if "\t" in line}) == 2
        for f1 in sorted((tmp_path / "a").glob("*.wav")):
            assert f1.read_bytes() == (tmp_path / "b" / f1.name).read_bytes()

    def test_mixture_equals_sum(self, tmp_path):
        main(["synth-dataset", "--out-dir", str(tmp_path), "--songs", "1",
              "--duration", "0.2", "--rate", "8000"])
        stems = sorted(p for p in tmp_path.glob("song000.*.wav") if "mixture" not in p.name)
        total = np.sum(np.stack([read_wav(p).samples for p in stems]), axis=0)
        np.testing.assert_array_equal(read_wav(tmp_path / "song000.mixture.wav").samples, total)


class TestResampleCommand:
    def test_rate_conversion_header(self, tmp_path):
        src = write_tone(tmp_path / "in.wav", rate=48000, frames=4800)
        out = tmp_path / "out.wav"
        assert main(["resample", "--input", str(src), "--rate", "44100", "--out", str(out)]) == EXIT_OK
        buf = read_wav(out)
        assert buf.sample_rate == 44100

    def test_same_rate_identical_samples(self, tmp_path):
        src = write_tone(tmp_path / "in.wav", rate=44100)
        out = tmp_path / "out.wav"
        main(["resample", "--input", str(src), "--rate", "44100", "--out", str(out)])
        np.testing.assert_array_equal(read_wav(out).samples, read_wav(src).samples)


class TestSeparateCommand:
    def test_stub_pipeline_writes_eight_stems(self, tmp_path):
        ini = tmp_path / "pipe.ini"
        ini.write_text(STUB_PIPELINE_INI)
        src = write_tone(tmp_path / "song.wav")
        out_dir = tmp_path / "stems"
        code = main(["separate", "--input", str(src), "--pipeline", str(ini),
                     "--out-dir", str(out_dir)])
        assert code == EXIT_OK
        stems = sorted(p.name for p in out_dir.glob("song.*.wav"))
        assert len(stems) == 8
        report = (out_dir / "song.report.txt").read_text()
        bypass_lines = [l for l in report.splitlines() if l.startswith("dereverb bypass=")]
        assert len(bypass_lines) == 1
        assert (out_dir / "song.levels.png").exists()

    def test_no_plot_flag(self, tmp_path):
        ini = tmp_path / "pipe.ini"
        ini.write_text(STUB_PIPELINE_INI)
        src = write_tone(tmp_path / "tune.wav")
        out_dir = tmp_path / "stems"
        main(["separate", "--input", str(src), "--pipeline", str(ini),
              "--out-dir", str(out_dir), "--no-plot"])
        assert not (out_dir / "tune.levels.png").exists()


class TestEvalCommand:
    def test_identical_dirs_report(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        for d in ("ref", "est"):
            (tmp_path / d).mkdir()
        wave = rng.uniform(-0.5, 0.5, (1, 500)).astype(np.float32)
        for d in ("ref", "est"):
            write_wav(tmp_path / d / "t.vocals.wav", AudioBuffer(wave, 44100), "float32")
        out = tmp_path / "report.tsv"
        code = main(["eval", "--ref-dir", str(tmp_path / "ref"), "--est-dir", str(tmp_path / "est"),
                     "--out", str(out)])
        assert code == EXIT_OK
        text = out.read_text()
        assert "inf" in text
        assert "# nonfinite_excluded=1" in text
        assert (tmp_path / "report.tsv.png").exists()

    def test_disjoint_dirs_error(self, tmp_path):
        (tmp_path / "ref").mkdir()
        (tmp_path / "est").mkdir()
        write_wav(tmp_path / "ref" / "a.vocals.wav", AudioBuffer(np.ones((1, 10), np.float32), 44100))
        write_wav(tmp_path / "est" / "b.drums.wav", AudioBuffer(np.ones((1, 10), np.float32), 44100))
        code = main(["eval", "--ref-dir", str(tmp_path / "ref"), "--est-dir", str(tmp_path / "est")])
        assert code == EXIT_RUNTIME


class TestTrainCommand:
    def test_smoke_train_writes_artifacts(self, tmp_path):
        manifest = write_overfit_fixture(tmp_path / "data", duration_s=0.15, rate=8000)
        ini = tmp_path / "train.ini"
        ini.write_text(
            "[model]\ndim = 8\ndepth = 1\nheads = 2\nn_bands = 4\nn_fft = 64\nhop = 16\n"
            "sample_rate = 8000\n"
            "[loss]\nresolutions = 64:16\n"
            "[train]\nsegment_s = 0.15\nbatch_size = 1\nsteps = 2\nlr = 0.001\nseed = 3\n"
        )
        ckpt = tmp_path / "model.ckpt"
        code = main(["--config", str(ini), "train", "--manifest", str(manifest),
                     "--out-ckpt", str(ckpt)])
        assert code == EXIT_OK
        assert ckpt.exists()
        log = (tmp_path / "model.ckpt.loss.tsv").read_text().splitlines()
        assert len(log) == 2
        assert (tmp_path / "model.ckpt.loss.png").exists()

    def test_seeded_determinism_across_runs(self, tmp_path):
        manifest = write_overfit_fixture(tmp_path / "data", duration_s=0.15, rate=8000)
        ini = tmp_path / "train.ini"
        ini.write_text(
            "[model]\ndim = 8\ndepth = 1\nheads = 2\nn_bands = 4\nn_fft = 64\nhop = 16\n"
            "sample_rate = 8000\n"
            "[loss]\nresolutions = 64:16\n"
            "[train]\nsegment_s = 0.15\nbatch_size = 1\nsteps = 3\nlr = 0.001\nseed = 3\n"
        )
        logs = []
        for run in ("x", "y"):
            ckpt = tmp_path / f"{run}.ckpt"
            main(["--config", str(ini), "train", "--manifest", str(manifest),
                  "--out-ckpt", str(ckpt), "--no-plot"])
            logs.append((tmp_path / f"{run}.ckpt.loss.tsv").read_bytes())
        assert logs[0] == logs[1]


class TestGradcheckCommand:
    def test_clean_build_passes(self, capsys):
        assert main(["gradcheck"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "all ops within tolerance" in out
