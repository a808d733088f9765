"""Command-line front end: dataset prep, training, separation, evaluation."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .audio_io import AudioIoError, read_wav, resample, write_wav
from .checks import gradient_suite
from .evaluate import EvalError, evaluate_dir
from .pipeline import PipelineError, load_pipeline_config, run_pipeline, stage_report
from .synth import write_dataset
from .training import (
    CheckpointError,
    ManifestError,
    TrainConfig,
    TrainingDivergedError,
    apply_preset,
    load_manifest,
    load_train_config,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

log = logging.getLogger("msrkit")


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit code 2; this CLI reserves 2 for
    runtime failures and uses 1 for usage problems."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="msrkit", description="Band-split separation and restoration toolkit.")
    parser.add_argument("--seed", type=int, default=None, help="override the configured RNG seed")
    parser.add_argument("--config", default=None, help="INI config file (train subcommand)")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one separator model")
    p.add_argument("--manifest", required=True, help="dataset manifest (song_id<TAB>stem<TAB>path)")
    p.add_argument("--out-ckpt", required=True, help="checkpoint output path")
    p.add_argument("--preset", choices=["baseline", "large", "large-random"], default=None)
    p.add_argument("--steps", type=int, default=None, help="override configured step count")
    p.add_argument("--loss-log", default=None, help="loss log path (default: <out-ckpt>.loss.tsv)")
    p.add_argument("--no-plot", action="store_true", help="skip the loss-curve figure")

    p = sub.add_parser("separate", help="run the restoration cascade on one mixture")
    p.add_argument("--input", required=True, help="input WAV")
    p.add_argument("--pipeline", required=True, help="pipeline INI config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--encoding", choices=["pcm16", "pcm24", "float32"], default="float32")
    p.add_argument("--jobs", type=int, default=1, help="parallel stage models per layer")
    p.add_argument("--no-plot", action="store_true", help="skip the stem-levels figure")

    p = sub.add_parser("eval", help="SNR table over reference/estimate directories")
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--est-dir", required=True)
    p.add_argument("--out", default=None, help="report TSV path (default: stdout)")
    p.add_argument("--no-plot", action="store_true", help="skip the SNR bar chart")

    p = sub.add_parser("resample", help="rate-convert a WAV file")
    p.add_argument("--input", required=True)
    p.add_argument("--rate", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--encoding", choices=["pcm16", "pcm24", "float32"], default="float32")

    sub.add_parser("gradcheck", help="finite-difference verification of every op")

    p = sub.add_parser("synth-dataset", help="generate a deterministic synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--songs", type=int, default=2)
    p.add_argument("--duration", type=float, default=6.0)
    p.add_argument("--rate", type=int, default=44100)
    p.add_argument("--channels", type=int, default=1)

    return parser


def resolve_train_config(args) -> TrainConfig:
    """Config file -> presets -> command-line overrides, in that order."""
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    if args.preset:
        cfg = apply_preset(cfg, args.preset)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "steps", None):
        cfg = replace(cfg, steps=args.steps)
    return cfg


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    index = load_manifest(args.manifest)
    log.info(
        "training target=%s segment_s=%s random_mix=%s steps=%d batch=%d",
        cfg.target, cfg.segment_s, cfg.random_mix, cfg.steps, cfg.batch_size,
    )
    loss_log = args.loss_log or f"{args.out_ckpt}.loss.tsv"
    result = train(index, cfg, out_ckpt=args.out_ckpt, loss_log=loss_log)
    log.info("final loss %.6g after %d steps", result.final_loss, result.steps)
    if not args.no_plot:
        from .plots import loss_curve_figure

        loss_curve_figure(result.log_lines, f"{args.out_ckpt}.loss.png")
    return EXIT_OK


def cmd_separate(args) -> int:
    mixture = read_wav(args.input)
    cfg = load_pipeline_config(args.pipeline)
    result = run_pipeline(mixture, cfg, jobs=max(1, args.jobs))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = Path(args.input).stem
    for label, buf in result.stems.items():
        write_wav(out_dir / f"{base}.{label}.wav", buf, args.encoding)
    report = stage_report(result)
    (out_dir / f"{base}.report.txt").write_text(report)
    if not args.no_plot:
        from .audio_io import level_db
        from .plots import stem_levels_figure

        stem_levels_figure({s: level_db(b) for s, b in result.stems.items()},
                           out_dir / f"{base}.levels.png")
    log.info("wrote %d stems to %s", len(result.stems), out_dir)
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate_dir(args.ref_dir, args.est_dir)
    text = report.to_tsv()
    if args.out:
        Path(args.out).write_text(text)
        if not args.no_plot:
            from .plots import snr_report_figure

            snr_report_figure(report, f"{args.out}.png")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_resample(args) -> int:
    buf = read_wav(args.input)
    write_wav(args.out, resample(buf, args.rate), args.encoding)
    return EXIT_OK


def cmd_gradcheck(_args) -> int:
    failures = 0
    for name, report in gradient_suite():
        status = "PASS" if report.passed else "FAIL"
        failures += not report.passed
        print(f"op={name} max_rel_err={report.max_rel_err:.3e} tol={report.tol:g} {status}")
    print(f"gradcheck: {'all ops within tolerance' if not failures else f'{failures} ops FAILED'}")
    return EXIT_OK if not failures else EXIT_RUNTIME


def cmd_synth_dataset(args) -> int:
    seed = args.seed if args.seed is not None else 0
    manifest = write_dataset(
        args.out_dir, n_songs=args.songs, seed=seed, rate=args.rate,
        duration_s=args.duration, channels=args.channels,
    )
    log.info("wrote manifest %s", manifest)
    print(manifest)
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "separate": cmd_separate,
    "eval": cmd_eval,
    "resample": cmd_resample,
    "gradcheck": cmd_gradcheck,
    "synth-dataset": cmd_synth_dataset,
}

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = _LOG_LEVELS.get(os.environ.get("MSR_LOG", "info"), logging.INFO)
    if args.verbose:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (
        AudioIoError,
        ManifestError,
        CheckpointError,
        PipelineError,
        EvalError,
        TrainingDivergedError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        print(f"msrkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
