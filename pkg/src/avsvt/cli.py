"""Command-line entry point: ``avsvt <subcommand> ...``.

Exit codes: 0 success, 1 validation error (nothing was written), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile

from .data import make_synthetic_dataset, read_audio, write_dataset
from .decoder import DecoderConfig, FrameLogits, decode, load_logits, save_logits
from .experiment import ConfigError, LABEL_FORMATS, label_convert, load_config, read_any_labels, report, run_experiment
from .metrics import MODES, TOLERANCE_PRESETS, aggregate, evaluate, report_to_dict
from .modeling import FRAME_LENGTH, build_audio_model, build_video_model, load_checkpoint, load_feature_file
from .notation import LabelFormatError, write_labels
from .signals import NOISE_FAMILIES, SAMPLE_RATE, NoiseSpec, SignalError, Waveform, gen_noise, mix_at_snr

logger = logging.getLogger("avsvt")

OUTPUT_ROOT_ENV = "AVSVT_OUTPUT_ROOT"
EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


class UsageError(ValueError):
    """Bad arguments or inputs, detected before any output is written."""


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _snr(text: str) -> float:
    if text.lower() in ("inf", "+inf", "clean"):
        return math.inf
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad SNR {text!r}") from exc


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth_data(args) -> int:
    if args.num_songs < 3 or args.seconds <= 0:
        raise UsageError("need at least 3 songs of positive length")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} is not empty (use --force)")
    songs = make_synthetic_dataset(args.num_songs, args.seconds, args.seed)
    manifest = write_dataset(songs, out)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(_require_file(args.config, "config"))
    if args.output_root is not None:
        cfg.output_dir = args.output_root
    elif cfg.output_dir == "runs":
        cfg.output_dir = str(output_root())
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    try:
        run_dir = run_experiment(cfg, force=args.force)
    except ConfigError:
        raise
    except Exception as exc:
        raise RuntimeError(f"training failed: {exc}") from exc
    print(run_dir)
    return EXIT_OK


def _model_logits(args) -> FrameLogits:
    try:
        ckpt = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    modality = ckpt["extra"].get("modality", "audio")
    if modality == "audio":
        if args.audio is None:
            raise UsageError("this checkpoint needs --audio")
        model = build_audio_model(ckpt["config"])
        x = torch.as_tensor(read_audio(_require_file(args.audio, "audio")))[None]
    else:
        if args.video is None:
            raise UsageError("this checkpoint needs --video")
        model = build_video_model(ckpt["config"])
        x = torch.as_tensor(load_feature_file(_require_file(args.video, "video features")), dtype=torch.float32)[None]
    model.encoder.load_state_dict(ckpt["modules"]["encoder"])
    model.classifier.load_state_dict(ckpt["modules"]["classifier"])
    model.eval()
    with torch.no_grad():
        out, frames = model(x)
    return FrameLogits.from_array(out[0, : int(frames[0])].double().numpy())


def cmd_decode(args) -> int:
    try:
        cfg = DecoderConfig(args.onset_threshold, args.silence_threshold, args.close_on_next_onset)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.logits is not None:
        logits, frame_length = load_logits(_require_file(args.logits, "logits"))
    elif args.checkpoint is not None:
        logits, frame_length = _model_logits(args), FRAME_LENGTH
    else:
        raise UsageError("give --logits or --checkpoint")
    seq = decode(logits, frame_length, cfg)
    if args.save_logits:
        save_logits(args.save_logits, logits, frame_length)
    write_labels(args.out, seq)
    print(f"{len(seq)} notes -> {args.out}")
    return EXIT_OK


def _pairs(ref: Path, est: Path):
    if ref.is_dir() != est.is_dir():
        raise UsageError("--ref and --est must both be files or both be directories")
    if not ref.is_dir():
        return [(ref.stem, _require_file(ref, "reference"), _require_file(est, "estimate"))]
    refs = {p.stem: p for p in ref.iterdir() if p.suffix in (".json", ".tsv")}
    ests = {p.stem: p for p in est.iterdir() if p.suffix in (".json", ".tsv")}
    missing = sorted(set(refs) - set(ests))
    if missing:
        raise UsageError(f"no estimate for {missing}")
    if not refs:
        raise UsageError(f"no label files in {ref}")
    return [(k, refs[k], ests[k]) for k in sorted(refs)]


def cmd_eval(args) -> int:
    if args.tolerance not in TOLERANCE_PRESETS:
        raise UsageError(f"unknown tolerance {args.tolerance!r}")
    pairs = _pairs(Path(args.ref), Path(args.est))
    loaded = [(k, read_any_labels(r), read_any_labels(e)) for k, r, e in pairs]
    reports = [evaluate(r, e, args.tolerance, song_id=k) for k, r, e in loaded]
    summary = aggregate(reports)
    if args.json:
        print(json.dumps(report_to_dict(summary), indent=2))
        return EXIT_OK
    print(f"{'metric':8s} {'P':>8s} {'R':>8s} {'F1':>8s}")
    for mode in MODES:
        m = summary.mean[mode]
        print(f"{mode:8s} {m['precision']:8.4f} {m['recall']:8.4f} {m['f1']:8.4f}")
    return EXIT_OK


def cmd_mix_noise(args) -> int:
    src = _require_file(args.audio, "audio")
    spec = NoiseSpec(args.family, args.snr, args.seed, args.duty_cycle)
    clean = Waveform(read_audio(src), SAMPLE_RATE)
    if args.noise_file:
        noise = Waveform(read_audio(_require_file(args.noise_file, "noise file")), SAMPLE_RATE)
    else:
        noise = gen_noise(spec, clean.duration)
    mixed = mix_at_snr(clean, noise, spec.snr_db)
    pcm = np.clip(np.round(mixed.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(args.out, SAMPLE_RATE, pcm)
    print(args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    for d in args.dirs:
        if not Path(d).is_dir():
            raise UsageError(f"not a directory: {d}")
    try:
        path = report(args.dirs, args.out, plots=not args.no_plots)
    except ValueError as exc:
        # empty or incomplete directories, mismatched grids
        raise UsageError(str(exc)) from exc
    print(path)
    return EXIT_OK


def cmd_label_convert(args) -> int:
    _require_file(args.src, "label file")
    try:
        seq = label_convert(args.src, args.dst, to=args.to, source_format=args.source_format)
    except LabelFormatError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"{len(seq)} notes -> {args.dst}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avsvt", description="Audio-visual singing voice transcription toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-songs", type=int, default=60)
    p.add_argument("--seconds", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="run an experiment config (train, decode, evaluate)")
    p.add_argument("--config", required=True, help="YAML or JSON experiment config")
    p.add_argument("--output-root", help=f"defaults to ${OUTPUT_ROOT_ENV} or ./runs")
    p.add_argument("--force", action="store_true", help="re-run even if the run directory is complete")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="turn frame logits into a note label file")
    p.add_argument("--logits", help="saved logits (.npz)")
    p.add_argument("--checkpoint", help="stage-1 audio or video checkpoint")
    p.add_argument("--audio")
    p.add_argument("--video")
    p.add_argument("--out", required=True)
    p.add_argument("--save-logits")
    p.add_argument("--onset-threshold", type=float, default=0.4)
    p.add_argument("--silence-threshold", type=float, default=0.5)
    p.add_argument("--close-on-next-onset", action="store_true")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score estimated labels against references")
    p.add_argument("--ref", required=True, help="label file or directory")
    p.add_argument("--est", required=True, help="label file or directory")
    p.add_argument("--tolerance", default="tol1", choices=sorted(TOLERANCE_PRESETS))
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mix-noise", help="mix a wav file with seeded noise at a given SNR")
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--family", choices=NOISE_FAMILIES, default="white")
    p.add_argument("--snr", type=_snr, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duty-cycle", type=float, default=0.2)
    p.add_argument("--noise-file", help="use this recording instead of a synthetic family")
    p.set_defaults(func=cmd_mix_noise)

    p = sub.add_parser("report", help="merge experiment directories into curves and a CSV")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("label-convert", help="convert labels between JSON and TSV")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--to", choices=LABEL_FORMATS)
    p.add_argument("--from", dest="source_format", choices=LABEL_FORMATS)
    p.set_defaults(func=cmd_label_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, LabelFormatError, SignalError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        logger.debug("failure", exc_info=True)
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
