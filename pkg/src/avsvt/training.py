"""Linear-probing / full-finetuning, Newbob annealing and the two-stage AV protocol."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .data import Example, Song, collate_examples, iterate_batches, song_examples
from .decoder import DecoderConfig, FrameLogits, decode
from .labeling import Batch
from .metrics import MODES, DatasetReport, aggregate, evaluate
from .modeling import (
    FRAME_LENGTH,
    AVSVTModel,
    LossWeights,
    ModelConfig,
    SVTModel,
    save_checkpoint,
    split_logits,
    svt_loss,
)
from .notation import NoteSequence

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "split", "loss", "COn", "COnP", "COnPOff", "COff", "lr_classifier", "lr_encoder")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainSchedule:
    lp_epochs: int = 2
    ft_epochs: int = 8
    classifier_lr: float = 3e-4
    encoder_lr: float = 5e-5
    newbob_factor_classifier: float = 0.8
    newbob_factor_encoder: float = 0.9
    newbob_threshold: float = 0.0
    newbob_monitor: str = "loss"
    fusion_stage_lr: float = 3e-3
    fusion_stage_epochs: int = 10
    batch_size: int = 8
    segment_seconds: float = 5.0

    def __post_init__(self):
        if self.lp_epochs < 0 or self.ft_epochs < 0 or self.fusion_stage_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        for name in ("classifier_lr", "encoder_lr", "fusion_stage_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("newbob_factor_classifier", "newbob_factor_encoder"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.newbob_monitor != "loss" and self.newbob_monitor not in MODES:
            raise ValueError(f"newbob_monitor must be 'loss' or one of {MODES}")


def newbob_update(lr: float, current: float, best: float, factor: float,
                  threshold: float = 0.0, higher_is_better: bool = False) -> float:
    """Return ``lr * factor`` unless ``current`` improved on ``best`` by more than ``threshold``.

    The improvement is relative: ``(best - current) / |best|`` for losses.
    """
    if not math.isfinite(best):
        return lr
    gain = (current - best) if higher_is_better else (best - current)
    improvement = gain / abs(best) if best != 0 else gain
    return lr if improvement > threshold else lr * factor


class NewbobScheduler:
    """Per-group Newbob annealing driven by one monitored validation value."""

    def __init__(self, factors: dict[str, float], threshold: float = 0.0, higher_is_better: bool = False):
        self.factors = dict(factors)
        self.threshold = threshold
        self.higher_is_better = higher_is_better
        self.best = -math.inf if higher_is_better else math.inf

    def step(self, lrs: dict[str, float], current: float) -> dict[str, float]:
        """New learning rates for ``lrs`` given this epoch's value."""
        sign = -1.0 if self.higher_is_better else 1.0
        best = sign * self.best if math.isfinite(self.best) else math.inf
        cur = sign * current
        new = {k: newbob_update(v, cur, best, self.factors[k], self.threshold) for k, v in lrs.items()}
        if (current > self.best) if self.higher_is_better else (current < self.best):
            self.best = current
        return new

    def state_dict(self) -> dict:
        return {"best": self.best, "factors": self.factors, "threshold": self.threshold,
                "higher_is_better": self.higher_is_better}

    def load_state_dict(self, state: dict) -> None:
        self.best = state["best"]
        self.factors = dict(state["factors"])
        self.threshold = state["threshold"]
        self.higher_is_better = state["higher_is_better"]


# ---------------------------------------------------------------------------
# Forward helpers


def _targets(batch: Batch, T: int):
    t = batch.targets
    return [torch.as_tensor(a[:, :T]) for a in (t.onset, t.silence, t.octave, t.name)] + \
        [torch.as_tensor(batch.mask[:, :T])]


def _dtype(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


def single_logits(model: SVTModel, batch: Batch, modality: str, frozen_encoder: bool = False) -> torch.Tensor:
    """Logits ``(B, T, 20)`` cut to the batch's target length."""
    x = torch.as_tensor(batch.inputs[modality], dtype=_dtype(model))
    lengths = torch.as_tensor(batch.input_lengths[modality])
    if frozen_encoder:
        with torch.no_grad():
            feats, _ = model.encoder(x, lengths)
    else:
        feats, _ = model.encoder(x, lengths)
    T = batch.mask.shape[1]
    if feats.shape[1] < T:
        raise ValueError(f"encoder produced {feats.shape[1]} frames for {T} target frames")
    return model.classifier(feats[:, :T])


def batch_loss(logits: torch.Tensor, batch: Batch, weights: LossWeights) -> torch.Tensor:
    return svt_loss(split_logits(logits), *_targets(batch, logits.shape[1]), weights=weights)


# ---------------------------------------------------------------------------
# Inference and scoring


@torch.no_grad()
def predict_single(model: SVTModel, example: Example, modality: str) -> FrameLogits:
    model.eval()
    batch = collate_examples([example])
    out = single_logits(model, batch, modality)[0, : example.num_frames]
    return FrameLogits.from_array(out.double().numpy())


def transcribe(logits: FrameLogits, decoder_cfg: DecoderConfig | None = None) -> NoteSequence:
    return decode(logits, FRAME_LENGTH, decoder_cfg)


def score_songs(predict: Callable[[Song], FrameLogits], songs: Sequence[Song], tolerances=("tol1",),
                decoder_cfg: DecoderConfig | None = None) -> dict[str, DatasetReport]:
    """Decode every song and aggregate per tolerance preset."""
    estimates = [(song, transcribe(predict(song), decoder_cfg)) for song in songs]
    return {tol: aggregate([evaluate(s.notes, est, tol, song_id=s.song_id) for s, est in estimates])
            for tol in tolerances}


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    metrics: dict[str, float] = field(default_factory=dict)
    lr_classifier: float = float("nan")
    lr_encoder: float = float("nan")

    def row(self) -> dict:
        row = {"epoch": self.epoch, "split": self.split, "loss": f"{self.loss:.6f}"}
        for m in ("COn", "COnP", "COnPOff", "COff"):
            row[m] = f"{self.metrics[m]:.6f}" if m in self.metrics else ""
        row["lr_classifier"] = f"{self.lr_classifier:.6g}"
        row["lr_encoder"] = f"{self.lr_encoder:.6g}"
        return row


def write_log(path, records: Sequence[EpochRecord]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for r in records:
            writer.writerow(r.row())


def _check_finite(loss: torch.Tensor, on_diverge: Callable[[], None]) -> None:
    if not torch.isfinite(loss):
        on_diverge()
        raise TrainingDiverged(f"loss became {loss.item()}")


# ---------------------------------------------------------------------------
# Stage 1: LP-FT


def build_optimizer(model: SVTModel, schedule: TrainSchedule, with_encoder: bool) -> torch.optim.Adam:
    groups = [{"params": list(model.classifier.parameters()), "lr": schedule.classifier_lr, "name": "classifier"}]
    if with_encoder:
        groups.append({"params": list(model.encoder.parameters()), "lr": schedule.encoder_lr, "name": "encoder"})
    return torch.optim.Adam(groups)


def _group_lrs(opt: torch.optim.Optimizer) -> dict[str, float]:
    return {g["name"]: g["lr"] for g in opt.param_groups}


def validation_loss(forward: Callable[[Batch], torch.Tensor], examples: Sequence[Example],
                    weights: LossWeights) -> float:
    """Frame-weighted mean loss with evaluation batch size 1."""
    total, frames = 0.0, 0
    with torch.no_grad():
        for ex in examples:
            batch = collate_examples([ex])
            total += float(batch_loss(forward(batch), batch, weights)) * ex.num_frames
            frames += ex.num_frames
    return total / max(frames, 1)


@dataclass
class TrainResult:
    history: list[EpochRecord]
    checkpoints: list[Path] = field(default_factory=list)


def lp_ft_train(
    model: SVTModel,
    train: Sequence[Example],
    valid: Sequence[Example] = (),
    schedule: TrainSchedule | None = None,
    *,
    modality: str = "audio",
    config: ModelConfig | None = None,
    weights: LossWeights = LossWeights(),
    seed: int = 0,
    valid_songs: Sequence[Song] = (),
    checkpoint_dir=None,
    on_step: Callable[[int, SVTModel, torch.optim.Optimizer], None] | None = None,
) -> TrainResult:
    """Train classifier-only for ``lp_epochs``, then encoder and classifier together.

    The encoder joins the optimiser (with fresh Adam state) when full
    finetuning starts; until then it receives no gradient and its parameters
    stay bit-identical. Learning rates are annealed per group by Newbob on
    the validation loss (or a validation metric, see ``newbob_monitor``).
    """
    schedule = schedule or TrainSchedule()
    if not train:
        raise ValueError("training set is empty")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    monitor_metric = schedule.newbob_monitor != "loss"
    newbob = NewbobScheduler({"classifier": schedule.newbob_factor_classifier,
                              "encoder": schedule.newbob_factor_encoder},
                             schedule.newbob_threshold, higher_is_better=monitor_metric)
    lrs = {"classifier": schedule.classifier_lr, "encoder": schedule.encoder_lr}
    lp = schedule.lp_epochs
    model.encoder.requires_grad_(lp == 0)
    opt = build_optimizer(model, schedule, with_encoder=lp == 0)
    history, checkpoints = [], []
    step = 0

    def save(name, epoch):
        if ckpt_dir is None:
            return None
        path = ckpt_dir / name
        save_checkpoint(path, config=config or getattr(model.encoder, "cfg", ModelConfig()),
                        modules={"encoder": model.encoder, "classifier": model.classifier},
                        optimizer=opt.state_dict(), epoch=epoch,
                        schedule={"train": asdict(schedule), "newbob": newbob.state_dict(), "lrs": lrs},
                        extra={"modality": modality})
        return path

    for epoch in range(1, lp + schedule.ft_epochs + 1):
        probing = epoch <= lp
        if epoch == lp + 1 and lp > 0:
            model.encoder.requires_grad_(True)
            opt.add_param_group({"params": list(model.encoder.parameters()), "lr": lrs["encoder"], "name": "encoder"})
        model.train()
        total, frames = 0.0, 0
        for batch in iterate_batches(train, schedule.batch_size, rng):
            logits = single_logits(model, batch, modality, frozen_encoder=probing)
            loss = batch_loss(logits, batch, weights)
            _check_finite(loss, lambda: save("diverged.pt", epoch))
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            if on_step is not None:
                on_step(step, model, opt)
            n = int(batch.mask.sum())
            total += loss.item() * n
            frames += n
        current = dict(lrs)
        history.append(EpochRecord(epoch, "train", total / frames, {}, current["classifier"],
                                   current["encoder"]))

        model.eval()
        metrics = {}
        if valid_songs:
            report = score_songs(lambda s: predict_single(model, song_examples(s, None)[0], modality),
                                 valid_songs)["tol1"]
            metrics = report.f1()
        if valid:
            vloss = validation_loss(lambda b: single_logits(model, b, modality), valid, weights)
            history.append(EpochRecord(epoch, "valid", vloss, metrics, current["classifier"], current["encoder"]))
            monitored = metrics[schedule.newbob_monitor] if monitor_metric else vloss
            active = {k: v for k, v in lrs.items() if k == "classifier" or not probing}
            lrs.update(newbob.step(active, monitored))
            for group in opt.param_groups:
                group["lr"] = lrs[group["name"]]
        logger.info("epoch %d (%s): train loss %.4f", epoch, "LP" if probing else "FT", total / frames)
        path = save(f"epoch{epoch:02d}.pt", epoch)
        if path:
            checkpoints.append(path)
    model.encoder.requires_grad_(True)
    return TrainResult(history, checkpoints)


# ---------------------------------------------------------------------------
# Stage 2: fusion + classifier on frozen encoders


@dataclass
class CachedFeatures:
    audio: torch.Tensor
    video: torch.Tensor
    example: Example


@torch.no_grad()
def cache_features(model: AVSVTModel, examples: Sequence[Example], zero_video: bool = False) -> list[CachedFeatures]:
    """Run both frozen encoders once per example."""
    model.eval()
    dtype = _dtype(model)
    cached = []
    for ex in examples:
        audio = torch.as_tensor(ex.audio, dtype=dtype)[None]
        video = torch.as_tensor(np.zeros_like(ex.video) if zero_video else ex.video, dtype=dtype)[None]
        ca, la = model.audio_encoder(audio, torch.tensor([len(ex.audio)]))
        cv, lv = model.video_encoder(video, torch.tensor([len(ex.video)]))
        T = ex.num_frames
        if abs(int(la[0]) - int(lv[0])) > 1 or min(int(la[0]), int(lv[0])) < T:
            raise ValueError(f"stream lengths {int(la[0])}/{int(lv[0])} do not cover {T} target frames")
        cached.append(CachedFeatures(ca[0, :T].clone(), cv[0, :T].clone(), ex))
    return cached


def _pad_features(items: Sequence[CachedFeatures]):
    lengths = torch.tensor([c.example.num_frames for c in items])
    T = int(lengths.max())
    D = items[0].audio.shape[1]
    a = items[0].audio.new_zeros((len(items), T, D))
    v = items[0].video.new_zeros((len(items), T, D))
    for i, c in enumerate(items):
        a[i, : len(c.audio)] = c.audio
        v[i, : len(c.video)] = c.video
    return a, v, lengths


def fused_logits(model: AVSVTModel, items: Sequence[CachedFeatures]) -> tuple[torch.Tensor, Batch]:
    a, v, lengths = _pad_features(items)
    batch = collate_examples([c.example for c in items])
    return model.head(a, v, lengths), batch


def param_fingerprint(module: nn.Module) -> str:
    import hashlib
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def train_av(
    model: AVSVTModel,
    train: Sequence[Example],
    valid: Sequence[Example] = (),
    schedule: TrainSchedule | None = None,
    *,
    zero_video: bool = False,
    weights: LossWeights = LossWeights(),
    seed: int = 0,
    config: ModelConfig | None = None,
    checkpoint_dir=None,
    cached: tuple[list[CachedFeatures], list[CachedFeatures]] | None = None,
) -> TrainResult:
    """Second stage: encoders frozen, fusion and classifier trained at ``fusion_stage_lr``.

    With ``zero_video`` the video input is replaced by zeros, giving the
    audio-only system that shares the fused architecture.
    """
    schedule = schedule or TrainSchedule()
    if model.audio_encoder is None or model.video_encoder is None:
        raise ValueError("stage-1 encoders are required")
    if not train:
        raise ValueError("training set is empty")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model.audio_encoder.requires_grad_(False)
    model.video_encoder.requires_grad_(False)
    if cached is None:
        train_cache = cache_features(model, train, zero_video)
        valid_cache = cache_features(model, valid, zero_video)
    else:
        train_cache, valid_cache = cached
    params = list(model.fusion.parameters()) + list(model.classifier.parameters())
    opt = torch.optim.Adam([{"params": params, "lr": schedule.fusion_stage_lr, "name": "fusion"}])
    history, checkpoints = [], []
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    for epoch in range(1, schedule.fusion_stage_epochs + 1):
        model.train()
        model.audio_encoder.eval()
        model.video_encoder.eval()
        total, frames = 0.0, 0
        order = rng.permutation(len(train_cache))
        for i in range(0, len(order), schedule.batch_size):
            logits, batch = fused_logits(model, [train_cache[j] for j in order[i:i + schedule.batch_size]])
            loss = batch_loss(logits, batch, weights)
            _check_finite(loss, lambda: None)
            opt.zero_grad()
            loss.backward()
            opt.step()
            n = int(batch.mask.sum())
            total += loss.item() * n
            frames += n
        history.append(EpochRecord(epoch, "train", total / frames, {}, schedule.fusion_stage_lr, 0.0))
        if valid_cache:
            model.eval()
            with torch.no_grad():
                vt, vf = 0.0, 0
                for c in valid_cache:
                    logits, batch = fused_logits(model, [c])
                    vt += float(batch_loss(logits, batch, weights)) * c.example.num_frames
                    vf += c.example.num_frames
            history.append(EpochRecord(epoch, "valid", vt / vf, {}, schedule.fusion_stage_lr, 0.0))
        if ckpt_dir is not None:
            path = ckpt_dir / f"fusion_epoch{epoch:02d}.pt"
            save_checkpoint(path, config=config or ModelConfig(),
                            modules={"fusion": model.fusion, "classifier": model.classifier},
                            optimizer=opt.state_dict(), epoch=epoch,
                            schedule={"train": asdict(schedule)}, extra={"zero_video": zero_video})
            checkpoints.append(path)
    model.eval()
    return TrainResult(history, checkpoints)


@torch.no_grad()
def predict_av(model: AVSVTModel, example: Example, zero_video: bool = False) -> FrameLogits:
    model.eval()
    (c,) = cache_features(model, [example], zero_video)
    logits, _ = fused_logits(model, [c])
    return FrameLogits.from_array(logits[0].double().numpy())
