"""Experiment orchestration: config, noise-grid runs, metric CSVs and reports."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import yaml

from .data import Song, load_dataset, make_synthetic_dataset, noisy_song, song_examples, song_noise
from .decoder import DecoderConfig, FrameLogits
from .labeling import read_manifest
from .metrics import MODES, TOLERANCE_PRESETS, DatasetReport
from .modeling import (
    AVSVTModel,
    Classifier,
    ModelConfig,
    RCAFusion,
    build_audio_model,
    build_av_model,
    build_video_model,
    load_checkpoint,
    save_checkpoint,
)
from .notation import LabelFormatError, NoteSequence, format_labels, parse_label_rows, read_labels
from .signals import NOISE_FAMILIES, SNR_GRID, NoiseSpec
from .training import (
    CachedFeatures,
    TrainSchedule,
    cache_features,
    fused_logits,
    lp_ft_train,
    predict_single,
    score_songs,
    train_av,
    write_log,
)

logger = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1
METRICS_COLUMNS = ("system", "noise", "snr", "tolerance", "metric", "precision", "recall", "f1")
REPORT_COLUMNS = ("noise", "snr", "tolerance", "metric")
MODES_EXPERIMENT = ("A", "V", "AV")
MARKERS = ("RUNNING", "FAILED", "COMPLETE")


class ConfigError(ValueError):
    """Raised with every validation problem found in a config."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


@dataclass
class SyntheticData:
    num_songs: int = 60
    song_seconds: float = 30.0
    seed: int = 0


@dataclass
class ExperimentConfig:
    """Everything one run depends on; the hash of this (minus ``output_dir``) names the run."""

    mode: str = "AV"
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    noise_families: tuple[str, ...] = NOISE_FAMILIES
    snrs: tuple[float, ...] = SNR_GRID
    noise_seed: int = 0
    duty_cycle: float = 0.2
    manifest: str | None = None
    synthetic: SyntheticData = field(default_factory=SyntheticData)
    stage1_audio: str | None = None
    stage1_video: str | None = None
    stage1_schedule: TrainSchedule | None = None
    tolerances: tuple[str, ...] = ("tol1", "tol2")
    eval_split: str = "test"
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    seed: int = 0
    num_threads: int | None = 1
    output_dir: str = "runs"

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        """Build a config from plain data; unknown keys and bad values raise :class:`ConfigError`."""
        problems = []
        raw = dict(raw or {})
        known = {f.name for f in fields(cls)}
        for key in sorted(set(raw) - known):
            problems.append(f"unknown key {key!r}")
        nested = {"model": ModelConfig, "schedule": TrainSchedule, "synthetic": SyntheticData,
                  "decoder": DecoderConfig, "stage1_schedule": TrainSchedule}
        kwargs = {}
        for key in known & set(raw):
            value = raw[key]
            if key in nested and value is not None:
                if isinstance(value, nested[key]):
                    kwargs[key] = value
                    continue
                try:
                    kwargs[key] = nested[key](**value)
                except (TypeError, ValueError) as exc:
                    problems.append(f"{key}: {exc}")
            elif key in ("noise_families", "tolerances"):
                kwargs[key] = tuple(value)
            elif key == "snrs":
                try:
                    kwargs[key] = tuple(_parse_snr(v) for v in value)
                except ValueError as exc:
                    problems.append(f"snrs: {exc}")
            else:
                kwargs[key] = value
        if problems:
            raise ConfigError(problems)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snrs"] = [_format_snr(s) for s in self.snrs]
        d["noise_families"] = list(self.noise_families)
        d["tolerances"] = list(self.tolerances)
        return d

    def validate(self) -> list[str]:
        problems = []
        if self.mode not in MODES_EXPERIMENT:
            problems.append(f"mode must be one of {MODES_EXPERIMENT}, got {self.mode!r}")
        for fam in self.noise_families:
            if fam not in NOISE_FAMILIES:
                problems.append(f"unknown noise family {fam!r}")
        if not self.noise_families:
            problems.append("noise_families is empty")
        if not self.snrs:
            problems.append("snrs is empty")
        for s in self.snrs:
            if not isinstance(s, (int, float)) or math.isnan(s) or s == -math.inf:
                problems.append(f"snr {s!r} must be finite or +inf")
        if not 0 < self.duty_cycle <= 0.3:
            problems.append("duty_cycle must lie in (0, 0.3]")
        for tol in self.tolerances:
            if tol not in TOLERANCE_PRESETS:
                problems.append(f"unknown tolerance preset {tol!r}")
        if self.eval_split not in ("train", "valid", "test"):
            problems.append(f"eval_split must be train, valid or test, got {self.eval_split!r}")
        if self.manifest is not None:
            problems += _manifest_problems(self.manifest)
        for name in ("stage1_audio", "stage1_video"):
            path = getattr(self, name)
            if path is not None:
                if self.mode != "AV":
                    problems.append(f"{name} is only used in AV mode")
                elif not Path(path).is_file():
                    problems.append(f"{name} checkpoint {path} does not exist")
        if (self.stage1_audio is None) != (self.stage1_video is None):
            problems.append("give both stage1_audio and stage1_video, or neither (joint plan)")
        if self.synthetic.num_songs < 3:
            problems.append("synthetic.num_songs must be at least 3")
        if self.synthetic.song_seconds <= 0:
            problems.append("synthetic.song_seconds must be positive")
        if self.num_threads is not None and self.num_threads < 1:
            problems.append("num_threads must be positive")
        return problems

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("num_threads")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.output_dir) / f"{self.mode}-{self.config_hash()}"


def _manifest_problems(path) -> list[str]:
    if not Path(path).is_file():
        return [f"manifest {path} does not exist"]
    try:
        entries = read_manifest(path)
    except (ValueError, KeyError) as exc:
        return [f"manifest {path}: {exc}"]
    problems = []
    for e in entries:
        for p in (e.audio_path, e.video_feature_path, e.label_path):
            if p is not None and not Path(p).is_file():
                problems.append(f"manifest {path}: {e.song_id}: missing file {p}")
    if not any(e.split == "train" for e in entries):
        problems.append(f"manifest {path}: no train split")
    return problems


def _parse_snr(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "+inf", "clean"):
            return math.inf
        return float(value)
    return float(value)


def _format_snr(snr: float) -> str:
    return "inf" if math.isinf(snr) else f"{snr:g}"


def load_config(path) -> ExperimentConfig:
    """Read a YAML (or JSON) experiment config."""
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: expected a mapping at top level"])
    return ExperimentConfig.from_dict(raw)


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


# ---------------------------------------------------------------------------
# Running


def load_songs(cfg: ExperimentConfig) -> list[Song]:
    if cfg.manifest is not None:
        return load_dataset(cfg.manifest)
    s = cfg.synthetic
    return make_synthetic_dataset(s.num_songs, s.song_seconds, s.seed)


def _split(songs, name):
    return [s for s in songs if s.split == name]


def _examples(songs: Sequence[Song], segment_seconds: float):
    return [ex for s in songs for ex in song_examples(s, segment_seconds)]


def _conditions(cfg: ExperimentConfig) -> list[tuple[str, float]]:
    """Distinct (family, snr) pairs; the clean condition is shared by all families."""
    conds = []
    if any(math.isinf(s) for s in cfg.snrs):
        conds.append(("clean", math.inf))
    conds += [(fam, snr) for fam in cfg.noise_families for snr in cfg.snrs if not math.isinf(snr)]
    return conds


class _NoiseClips:
    """Per-song noise clips for one family, reused across SNRs."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.family = None
        self.clips: dict[str, object] = {}

    def mix(self, songs: Sequence[Song], family: str, snr: float) -> list[Song]:
        if math.isinf(snr):
            return list(songs)
        if family != self.family:
            self.family, self.clips = family, {}
        spec = NoiseSpec(family, snr, self.cfg.noise_seed, self.cfg.duty_cycle)
        out = []
        for s in songs:
            if s.song_id not in self.clips:
                self.clips[s.song_id] = song_noise(s, spec)
            out.append(noisy_song(s, spec, self.clips[s.song_id]))
        return out


def _report_rows(system, family, snr, reports: dict[str, DatasetReport]) -> list[dict]:
    rows = []
    for tol, rep in reports.items():
        for metric in MODES:
            mean = rep.mean[metric]
            rows.append({"system": system, "noise": family, "snr": _format_snr(snr), "tolerance": tol,
                         "metric": metric, "precision": f"{mean['precision']:.6f}",
                         "recall": f"{mean['recall']:.6f}", "f1": f"{mean['f1']:.6f}"})
    return rows


def _expand_clean(rows: list[dict], families: Sequence[str]) -> list[dict]:
    out = []
    for row in rows:
        if row["noise"] == "clean":
            out += [{**row, "noise": fam} for fam in families]
        else:
            out.append(row)
    return out


def write_metrics(path, rows: Sequence[dict]) -> None:
    order = {m: i for i, m in enumerate(MODES)}
    rows = sorted(rows, key=lambda r: (r["system"], r["noise"], _parse_snr(r["snr"]), r["tolerance"],
                                       order[r["metric"]]))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(METRICS_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return list(reader)


def _set_marker(run_dir: Path, marker: str, text: str = "") -> None:
    for m in MARKERS:
        (run_dir / m).unlink(missing_ok=True)
    (run_dir / marker).write_text(text)


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def _train_stage1(cfg, modality, train_songs, valid_songs, run_dir, schedule):
    _seed_everything(cfg.seed)
    build = build_audio_model if modality == "audio" else build_video_model
    model = build(cfg.model)
    seg = schedule.segment_seconds
    result = lp_ft_train(model, _examples(train_songs, seg), _examples(valid_songs, seg), schedule,
                         modality=modality, config=cfg.model, seed=cfg.seed, valid_songs=valid_songs,
                         checkpoint_dir=run_dir / "checkpoints" / modality)
    write_log(run_dir / "logs" / f"stage1_{modality}.csv", result.history)
    save_checkpoint(run_dir / "checkpoints" / f"{modality}_final.pt", config=cfg.model,
                    modules={"encoder": model.encoder, "classifier": model.classifier},
                    epoch=len(result.history), extra={"modality": modality})
    return model


def load_stage1_encoder(path, modality: str, cfg: ModelConfig):
    """Encoder weights from a stage-1 checkpoint; a missing file is an error."""
    if path is None or not Path(path).is_file():
        raise FileNotFoundError(f"stage-1 {modality} checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    build = build_audio_model if modality == "audio" else build_video_model
    model = build(ckpt["config"] if ckpt["config"] else cfg)
    model.encoder.load_state_dict(ckpt["modules"]["encoder"])
    if "classifier" in ckpt["modules"]:
        model.classifier.load_state_dict(ckpt["modules"]["classifier"])
    return model


def _single_rows(model, modality, system, songs, family, snr, cfg):
    reports = score_songs(lambda s: predict_single(model, song_examples(s, None)[0], modality), songs,
                          cfg.tolerances, cfg.decoder)
    return _report_rows(system, family, snr, reports)


def _zero_video_cache(model: AVSVTModel, cached: Sequence[CachedFeatures]) -> list[CachedFeatures]:
    """Same audio features, video features recomputed from an all-zero track."""
    out = []
    with torch.no_grad():
        for c in cached:
            zeros = torch.zeros((1, *c.example.video.shape), dtype=c.video.dtype)
            cv, _ = model.video_encoder(zeros, torch.tensor([len(c.example.video)]))
            out.append(CachedFeatures(c.audio, cv[0, : c.example.num_frames].clone(), c.example))
    return out


def _fresh_head(model: AVSVTModel, cfg: ExperimentConfig, seed: int) -> AVSVTModel:
    torch.manual_seed(seed)
    return AVSVTModel(model.audio_encoder, model.video_encoder, RCAFusion(cfg.model), Classifier(cfg.model.dim))


def _score_cached(model: AVSVTModel, cached: Sequence[CachedFeatures], songs: Sequence[Song], cfg):
    by_id = {}
    model.eval()
    with torch.no_grad():
        for c in cached:
            logits, _ = fused_logits(model, [c])
            by_id[c.example.song_id] = FrameLogits.from_array(logits[0].double().numpy())
    return score_songs(lambda s: by_id[s.song_id], songs, cfg.tolerances, cfg.decoder)


def _run_av(cfg, songs, run_dir) -> list[dict]:
    train_clean, valid_clean, eval_clean = (_split(songs, n) for n in ("train", "valid", cfg.eval_split))
    if cfg.stage1_audio is not None:
        audio = load_stage1_encoder(cfg.stage1_audio, "audio", cfg.model)
        video = load_stage1_encoder(cfg.stage1_video, "video", cfg.model)
    else:
        plan = cfg.stage1_schedule or cfg.schedule
        audio = _train_stage1(cfg, "audio", train_clean, valid_clean, run_dir, plan)
        video = _train_stage1(cfg, "video", train_clean, valid_clean, run_dir, plan)
    rows = _single_rows(audio, "audio", "A-stage1", eval_clean, "clean", math.inf, cfg)
    rows += _single_rows(video, "video", "V-stage1", eval_clean, "clean", math.inf, cfg)
    base = build_av_model(cfg.model, audio.encoder, video.encoder)
    seg = cfg.schedule.segment_seconds
    clips = _NoiseClips(cfg)
    for family, snr in _conditions(cfg):
        logger.info("AV stage 2: %s %s dB", family, _format_snr(snr))
        tr, va, ev = (clips.mix(s, family, snr) for s in (train_clean, valid_clean, eval_clean))
        caches = {
            "AV": [cache_features(base, _examples(tr, seg)), cache_features(base, _examples(va, seg)),
                   cache_features(base, _examples(ev, None))],
        }
        caches["A"] = [_zero_video_cache(base, c) for c in caches["AV"]]
        tag = f"{family}_{_format_snr(snr)}"
        for system in ("AV", "A"):
            model = _fresh_head(base, cfg, cfg.seed)
            train_cache, valid_cache, eval_cache = caches[system]
            result = train_av(model, [c.example for c in train_cache], [c.example for c in valid_cache],
                              cfg.schedule, zero_video=system == "A", seed=cfg.seed, config=cfg.model,
                              cached=(train_cache, valid_cache))
            write_log(run_dir / "logs" / f"stage2_{system}_{tag}.csv", result.history)
            rows += _report_rows(system, family, snr, _score_cached(model, eval_cache, ev, cfg))
    return rows


def _run_single(cfg, songs, run_dir) -> list[dict]:
    modality = "audio" if cfg.mode == "A" else "video"
    train_clean, valid_clean, eval_clean = (_split(songs, n) for n in ("train", "valid", cfg.eval_split))
    rows = []
    if modality == "video":
        # the video track is untouched by audio noise: one model, one condition
        model = _train_stage1(cfg, "video", train_clean, valid_clean, run_dir, cfg.schedule)
        return _single_rows(model, "video", "V", eval_clean, "clean", math.inf, cfg)
    clips = _NoiseClips(cfg)
    for family, snr in _conditions(cfg):
        tr, va, ev = (clips.mix(s, family, snr) for s in (train_clean, valid_clean, eval_clean))
        sub = run_dir / "conditions" / f"{family}_{_format_snr(snr)}"
        model = _train_stage1(cfg, "audio", tr, va, sub, cfg.schedule)
        rows += _single_rows(model, "audio", "A", ev, family, snr, cfg)
    return rows


def run_experiment(cfg: ExperimentConfig, force: bool = False) -> Path:
    """Train and evaluate one configuration; returns its run directory.

    A directory that already holds a COMPLETE marker is returned untouched
    unless ``force`` is set. Failures leave a FAILED marker with the traceback.
    """
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    run_dir = cfg.run_dir()
    if (run_dir / "COMPLETE").exists() and not force:
        logger.info("%s already complete", run_dir)
        return run_dir
    (run_dir / "logs").mkdir(parents=True, exist_ok=True)
    dump_config(cfg, run_dir / "config.yaml")
    _set_marker(run_dir, "RUNNING")
    threads = torch.get_num_threads()
    deterministic = torch.are_deterministic_algorithms_enabled()
    try:
        if cfg.num_threads:
            torch.set_num_threads(cfg.num_threads)
        torch.use_deterministic_algorithms(True)
        _seed_everything(cfg.seed)
        songs = load_songs(cfg)
        if not _split(songs, "train") or not _split(songs, cfg.eval_split):
            raise ValueError(f"dataset needs non-empty train and {cfg.eval_split} splits")
        rows = _run_av(cfg, songs, run_dir) if cfg.mode == "AV" else _run_single(cfg, songs, run_dir)
        write_metrics(run_dir / "metrics.csv", _expand_clean(rows, cfg.noise_families))
        (run_dir / "experiment.json").write_text(json.dumps(
            {"schema_version": METRICS_SCHEMA_VERSION, "config_hash": cfg.config_hash(), "mode": cfg.mode},
            indent=2) + "\n")
    except BaseException:
        _set_marker(run_dir, "FAILED", traceback.format_exc())
        raise
    finally:
        torch.set_num_threads(threads)
        torch.use_deterministic_algorithms(deterministic)
    _set_marker(run_dir, "COMPLETE")
    return run_dir


# ---------------------------------------------------------------------------
# Reporting


def _collect(dirs: Sequence) -> list[dict]:
    if not dirs:
        raise ValueError("no experiment directories given")
    rows = []
    for d in dirs:
        d = Path(d)
        if not d.is_dir():
            raise FileNotFoundError(f"{d} is not a directory")
        if not (d / "COMPLETE").exists() or not (d / "metrics.csv").exists():
            raise ValueError(f"{d} holds no completed experiment")
        rows += [{**r, "_source": str(d)} for r in read_metrics(d / "metrics.csv")]
    return rows


def _check_grids(rows: list[dict]) -> None:
    grids: dict[str, set] = {}
    for r in rows:
        if r["system"].endswith("-stage1") or r["system"] == "V":
            continue
        grids.setdefault(r["_source"], set()).add((r["noise"], r["snr"], r["tolerance"]))
    if len(grids) < 2:
        return
    (first, ref), *others = grids.items()
    diffs = []
    for src, grid in others:
        if grid != ref:
            only_a = sorted(ref - grid)
            only_b = sorted(grid - ref)
            diffs.append(f"{first} vs {src}: only in first {only_a}; only in second {only_b}")
    if diffs:
        raise ValueError("experiment grids differ:\n  " + "\n  ".join(diffs))


def report(dirs: Sequence, out_dir, plots: bool = True) -> Path:
    """Merge experiments into ``report.csv`` (F1 per system plus an AV - A gap) and per-family plots."""
    rows = _collect(dirs)
    _check_grids(rows)
    systems = sorted({r["system"] for r in rows})
    table: dict[tuple, dict[str, float]] = {}
    origin: dict[tuple, str] = {}
    for r in rows:
        key = (r["noise"], r["snr"], r["tolerance"], r["metric"])
        seen = origin.setdefault((*key, r["system"]), r["_source"])
        if seen != r["_source"]:
            raise ValueError(f"system {r['system']} is reported by both {seen} and {r['_source']}")
        table.setdefault(key, {})[r["system"]] = float(r["f1"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    order = {m: i for i, m in enumerate(MODES)}
    keys = sorted(table, key=lambda k: (k[0], _parse_snr(k[1]), k[2], order[k[3]]))
    has_gap = "A" in systems and "AV" in systems
    columns = list(REPORT_COLUMNS) + systems + (["gap"] if has_gap else [])
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for key in keys:
            vals = table[key]
            row = list(key) + [f"{vals[s]:.6f}" if s in vals else "" for s in systems]
            if has_gap:
                row.append(f"{vals['AV'] - vals['A']:.6f}" if "A" in vals and "AV" in vals else "")
            writer.writerow(row)
    if plots:
        _plot(table, systems, out)
    return out / "report.csv"


def _plot(table, systems, out: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curve_systems = [s for s in systems if not s.endswith("-stage1")] or systems
    families = sorted({k[0] for k in table})
    tolerances = sorted({k[2] for k in table})
    for fam in families:
        for tol in tolerances:
            fig, axes = plt.subplots(1, len(MODES), figsize=(4 * len(MODES), 3.2), sharey=True)
            for ax, metric in zip(axes, MODES):
                for system in curve_systems:
                    pts = sorted((_parse_snr(k[1]), v[system]) for k, v in table.items()
                                 if k[0] == fam and k[2] == tol and k[3] == metric and system in v)
                    if not pts:
                        continue
                    finite = [p for p, _ in pts if math.isfinite(p)]
                    clean_x = (max(finite) + 5) if finite else 0.0
                    xs = [p if math.isfinite(p) else clean_x for p, _ in pts]
                    ax.plot(xs, [f for _, f in pts], marker="o", label=system)
                    ax.set_xticks(xs, [_format_snr(p) if math.isfinite(p) else "clean" for p, _ in pts])
                ax.set_title(metric)
                ax.set_xlabel("SNR (dB)")
                ax.grid(alpha=0.3)
            axes[0].set_ylabel("F1")
            axes[-1].legend()
            fig.suptitle(f"{fam} ({tol})")
            fig.tight_layout()
            fig.savefig(out / f"{fam}_{tol}.png", dpi=100)
            plt.close(fig)


# ---------------------------------------------------------------------------
# Label conversion

LABEL_FORMATS = ("json", "tsv")


def parse_tsv_labels(text: str, duration: float | None = None, allow_out_of_range: bool = False) -> NoteSequence:
    """``onset<TAB>offset<TAB>pitch`` per line; blank lines and ``#`` comments are skipped."""
    rows = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 3:
            raise LabelFormatError(f"line {line_no}: expected 3 fields, got {len(parts)}")
        try:
            onset, offset = float(parts[0]), float(parts[1])
            pitch = int(parts[2]) if parts[2].strip().lstrip("-").isdigit() else float(parts[2])
        except ValueError as exc:
            raise LabelFormatError(f"line {line_no}: {exc}") from exc
        rows.append((line_no, [onset, offset, pitch]))
    return parse_label_rows(rows, duration, allow_out_of_range)


def format_tsv_labels(seq: NoteSequence) -> str:
    return "".join(f"{n.onset!r}\t{n.offset!r}\t{n.pitch!r}\n" for n in seq.notes)


def read_any_labels(path, fmt: str | None = None) -> NoteSequence:
    fmt = fmt or _guess_format(path)
    if fmt == "json":
        return read_labels(path)
    return parse_tsv_labels(Path(path).read_text())


def _guess_format(path) -> str:
    suffix = Path(path).suffix.lower().lstrip(".")
    if suffix in ("tsv", "txt", "lab"):
        return "tsv"
    if suffix == "json":
        return "json"
    raise ValueError(f"cannot infer label format from {path}; pass it explicitly")


def label_convert(src, dst, to: str | None = None, source_format: str | None = None) -> NoteSequence:
    """Convert between the JSON triple list and tab-separated triples (lossless)."""
    to = to or _guess_format(dst)
    if to not in LABEL_FORMATS:
        raise ValueError(f"unknown label format {to!r}")
    seq = read_any_labels(src, source_format)
    text = format_labels(seq) if to == "json" else format_tsv_labels(seq)
    Path(dst).write_text(text)
    return seq
