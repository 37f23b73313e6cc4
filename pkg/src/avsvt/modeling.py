"""Encoders, residual cross-attention fusion, the 20-way head and the masked loss.

The audio encoder keeps the wav2vec 2.0 convolutional frontend geometry
(7 temporal convolutions, total stride 320 samples = 20 ms at 16 kHz) but
with few channels and a shallow transformer, so it trains on a CPU.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .notation import FrameGrid, NUM_NAME_CLASSES, NUM_OCTAVE_CLASSES

CONV_KERNELS = (10, 3, 3, 3, 3, 2, 2)
CONV_STRIDES = (5, 2, 2, 2, 2, 2, 2)
SAMPLE_RATE = 16000
HOP_LENGTH = int(np.prod(CONV_STRIDES))  # 320 samples
FRAME_LENGTH = HOP_LENGTH / SAMPLE_RATE  # 0.02 s
OUTPUT_DIM = 20
HEAD_SPLIT = (1, 1, NUM_OCTAVE_CLASSES, NUM_NAME_CLASSES)

CHECKPOINT_FORMAT = "avsvt-checkpoint"
CHECKPOINT_VERSION = 1


def conv_output_length(n: int, kernels=CONV_KERNELS, strides=CONV_STRIDES) -> int:
    """Frames produced by the frontend for ``n`` input samples (0 if too short)."""
    for k, s in zip(kernels, strides):
        if n < k:
            return 0
        n = (n - k) // s + 1
    return n


def receptive_field(kernels=CONV_KERNELS, strides=CONV_STRIDES) -> int:
    field_, jump = 1, 1
    for k, s in zip(kernels, strides):
        field_ += (k - 1) * jump
        jump *= s
    return field_


RECEPTIVE_FIELD = receptive_field()  # 400 samples


@dataclass
class ModelConfig:
    conv_channels: int = 64
    dim: int = 64
    depth: int = 2
    heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.0
    pos_conv_kernel: int = 9
    video_feature_dim: int = 1
    video_conv_kernel: int = 5
    fusion_blocks: int = 1
    output_split: tuple[int, ...] = HEAD_SPLIT

    def __post_init__(self):
        self.output_split = tuple(self.output_split)
        if sum(self.output_split) != OUTPUT_DIM or self.output_split != HEAD_SPLIT:
            raise ValueError(f"classifier split must be {HEAD_SPLIT}, got {self.output_split}")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")


@dataclass(frozen=True)
class LossWeights:
    onset: float = 15.0
    silence: float = 1.0

    def __post_init__(self):
        if self.onset <= 0 or self.silence <= 0:
            raise ValueError("loss weights must be positive")


@dataclass
class EncoderOutput:
    features: np.ndarray
    grid: FrameGrid


def lengths_to_padding_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    """True at padded positions, as expected by ``nn.MultiheadAttention``."""
    return torch.arange(max_len, device=lengths.device)[None, :] >= lengths[:, None]


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, hidden: int, dropout: float = 0.0):
        super().__init__(nn.Linear(dim, hidden), nn.GELU(), nn.Dropout(dropout), nn.Linear(hidden, dim))


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, padding_mask: torch.Tensor | None = None) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, h, key_padding_mask=padding_mask, need_weights=False)[0])
        return x + self.dropout(self.ffn(self.norm2(x)))


class ConvPositionalEmbedding(nn.Module):
    def __init__(self, dim: int, kernel: int, groups: int):
        super().__init__()
        self.conv = nn.Conv1d(dim, dim, kernel, padding=kernel // 2, groups=groups)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + F.gelu(self.conv(x.transpose(1, 2)).transpose(1, 2)[:, : x.shape[1]])


class ContextNetwork(nn.Module):
    """Positional convolution, transformer blocks and a final norm, padding-aware."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.pos = ConvPositionalEmbedding(cfg.dim, cfg.pos_conv_kernel, cfg.heads)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.dim, cfg.heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.dim)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        pad = lengths_to_padding_mask(lengths, x.shape[1])
        keep = (~pad).unsqueeze(-1).to(x.dtype)
        x = self.pos(x * keep) * keep
        for block in self.blocks:
            x = block(x, pad if pad.any() else None)
        return self.norm(x) * keep


class AudioEncoder(nn.Module):
    """Raw 16 kHz waveform -> ``(B, T, dim)`` features at 20 ms per frame."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        convs, norms = [], []
        in_ch = 1
        for k, s in zip(CONV_KERNELS, CONV_STRIDES):
            convs.append(nn.Conv1d(in_ch, cfg.conv_channels, k, stride=s))
            norms.append(nn.LayerNorm(cfg.conv_channels))
            in_ch = cfg.conv_channels
        self.convs = nn.ModuleList(convs)
        self.conv_norms = nn.ModuleList(norms)
        self.proj_norm = nn.LayerNorm(cfg.conv_channels)
        self.proj = nn.Linear(cfg.conv_channels, cfg.dim)
        self.context = ContextNetwork(cfg)

    def frame_lengths(self, sample_lengths: torch.Tensor) -> torch.Tensor:
        return torch.tensor([conv_output_length(int(n)) for n in sample_lengths],
                            dtype=torch.long, device=sample_lengths.device)

    def forward(self, wave: torch.Tensor, lengths: torch.Tensor | None = None):
        if wave.dim() == 1:
            wave = wave.unsqueeze(0)
        if lengths is None:
            lengths = torch.full((wave.shape[0],), wave.shape[1], dtype=torch.long)
        if int(lengths.min()) < RECEPTIVE_FIELD:
            raise ValueError(f"waveform of {int(lengths.min())} samples is shorter than the "
                             f"{RECEPTIVE_FIELD}-sample receptive field")
        x = wave.unsqueeze(1)
        for conv, norm in zip(self.convs, self.conv_norms):
            x = F.gelu(norm(conv(x).transpose(1, 2)).transpose(1, 2))
        x = self.proj(self.proj_norm(x.transpose(1, 2)))
        frames = self.frame_lengths(lengths)
        return self.context(x, frames), frames

    @torch.no_grad()
    def encode(self, samples: np.ndarray) -> EncoderOutput:
        param = next(self.parameters())
        wave = torch.as_tensor(np.asarray(samples), dtype=param.dtype)
        feats, frames = self(wave)
        T = int(frames[0])
        return EncoderOutput(feats[0, :T].cpu().numpy(),
                             FrameGrid(FRAME_LENGTH, T, len(samples) / SAMPLE_RATE))


class VideoEncoder(nn.Module):
    """50 Hz visual feature track ``(B, T, F)`` -> ``(B, T, dim)`` features, one per input frame."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        k = cfg.video_conv_kernel
        self.conv1 = nn.Conv1d(cfg.video_feature_dim, cfg.dim, k, padding=k // 2)
        self.conv2 = nn.Conv1d(cfg.dim, cfg.dim, k, padding=k // 2)
        self.norm = nn.LayerNorm(cfg.dim)
        self.context = ContextNetwork(cfg)

    def forward(self, video: torch.Tensor, lengths: torch.Tensor | None = None):
        if video.dim() == 2:
            video = video.unsqueeze(0)
        B, T, _ = video.shape
        if lengths is None:
            lengths = torch.full((B,), T, dtype=torch.long)
        keep = (~lengths_to_padding_mask(lengths, T)).unsqueeze(1).to(video.dtype)
        x = video.transpose(1, 2) * keep
        x = F.gelu(self.conv1(x)) * keep
        x = F.gelu(self.conv2(x)) * keep
        return self.context(self.norm(x.transpose(1, 2)), lengths), lengths

    @torch.no_grad()
    def encode(self, features: np.ndarray, frame_rate: float = 50.0) -> EncoderOutput:
        param = next(self.parameters())
        feats, _ = self(torch.as_tensor(np.asarray(features), dtype=param.dtype))
        T = feats.shape[1]
        return EncoderOutput(feats[0].cpu().numpy(), FrameGrid(1.0 / frame_rate, T, T / frame_rate))


class ExternalFeatureEncoder(nn.Module):
    """Adapter for features computed elsewhere (e.g. a real pretrained SSL model).

    Takes ``(B, T, in_dim)`` features at 20 ms per frame and projects them to
    ``dim``; load them with :func:`load_feature_file`.
    """

    def __init__(self, in_dim: int, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(in_dim, cfg.dim) if in_dim != cfg.dim else nn.Identity()

    def forward(self, feats: torch.Tensor, lengths: torch.Tensor | None = None):
        if lengths is None:
            lengths = torch.full((feats.shape[0],), feats.shape[1], dtype=torch.long)
        return self.proj(feats), lengths


def load_feature_file(path) -> np.ndarray:
    feats = np.load(Path(path))
    if feats.ndim != 2:
        raise ValueError(f"{path}: expected a (frames, dim) array, got {feats.shape}")
    return feats


def align_streams(audio: torch.Tensor, audio_lengths: torch.Tensor,
                  video: torch.Tensor, video_lengths: torch.Tensor):
    """Truncate two frame streams to a common length; they may differ by at most one frame."""
    diff = (audio_lengths - video_lengths).abs()
    if int(diff.max()) > 1:
        raise ValueError(f"audio/video frame counts differ by {int(diff.max())} frames (max 1): "
                         f"{audio_lengths.tolist()} vs {video_lengths.tolist()}")
    lengths = torch.minimum(audio_lengths, video_lengths)
    T = int(lengths.max())
    return audio[:, :T], video[:, :T], lengths


class RCABlock(nn.Module):
    """One stream of residual cross attention.

    ``y = x + SelfAttn(x) + CrossAttn(x, other)`` followed by a residual
    feed-forward sublayer, with pre-normalisation on every input.
    """

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm_other = nn.LayerNorm(dim)
        self.cross_attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, other, padding_mask=None):
        h = self.norm1(x)
        o = self.norm_other(other)
        sa = self.self_attn(h, h, h, key_padding_mask=padding_mask, need_weights=False)[0]
        ca = self.cross_attn(h, o, o, key_padding_mask=padding_mask, need_weights=False)[0]
        x = x + self.dropout(sa) + self.dropout(ca)
        return x + self.dropout(self.ffn(self.norm2(x)))


class RCAFusion(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        args = (cfg.dim, cfg.heads, cfg.ffn_dim, cfg.dropout)
        self.audio_blocks = nn.ModuleList(RCABlock(*args) for _ in range(cfg.fusion_blocks))
        self.video_blocks = nn.ModuleList(RCABlock(*args) for _ in range(cfg.fusion_blocks))
        self.proj = nn.Linear(2 * cfg.dim, cfg.dim)

    def forward(self, audio, video, lengths=None):
        if audio.shape != video.shape:
            raise ValueError(f"fusion inputs must share (B, T, D): {tuple(audio.shape)} vs {tuple(video.shape)}")
        pad = None
        if lengths is not None:
            pad = lengths_to_padding_mask(lengths, audio.shape[1])
            pad = pad if pad.any() else None
        for a_block, v_block in zip(self.audio_blocks, self.video_blocks):
            audio, video = a_block(audio, video, pad), v_block(video, audio, pad)
        return self.proj(torch.cat([audio, video], dim=-1))


def rca_fuse(c_audio: torch.Tensor, c_video: torch.Tensor, fusion: RCAFusion) -> torch.Tensor:
    """Fuse ``(T, D)`` or ``(B, T, D)`` streams."""
    if c_audio.shape != c_video.shape:
        raise ValueError(f"shape mismatch: {tuple(c_audio.shape)} vs {tuple(c_video.shape)}")
    if c_audio.dim() == 2:
        return fusion(c_audio[None], c_video[None])[0]
    return fusion(c_audio, c_video)


class LogitTensors(NamedTuple):
    onset: torch.Tensor
    silence: torch.Tensor
    octave: torch.Tensor
    name: torch.Tensor


def split_logits(out: torch.Tensor) -> LogitTensors:
    onset, silence, octave, name = torch.split(out, HEAD_SPLIT, dim=-1)
    return LogitTensors(onset.squeeze(-1), silence.squeeze(-1), octave, name)


class Classifier(nn.Linear):
    """The linear ``dim -> 20`` head; call :func:`split_logits` on its output."""

    def __init__(self, dim: int):
        super().__init__(dim, OUTPUT_DIM)


def svt_loss(logits: LogitTensors, onset, silence, octave, name, mask,
             weights: LossWeights = LossWeights()) -> torch.Tensor:
    """Masked multi-task frame loss averaged over real frames.

    Weighted BCE on onset and silence (the weight multiplies the positive
    term only) plus cross-entropy on octave and pitch-name classes.
    """
    mask = mask.to(logits.onset.dtype)
    total = mask.sum()
    if float(total) == 0.0:
        raise ValueError("loss mask is all zeros")
    dtype = logits.onset.dtype
    bce_o = F.binary_cross_entropy_with_logits(
        logits.onset, onset.to(dtype), pos_weight=torch.tensor(weights.onset, dtype=dtype), reduction="none")
    bce_s = F.binary_cross_entropy_with_logits(
        logits.silence, silence.to(dtype), pos_weight=torch.tensor(weights.silence, dtype=dtype), reduction="none")
    ce_v = F.cross_entropy(logits.octave.reshape(-1, NUM_OCTAVE_CLASSES), octave.reshape(-1).long(),
                           reduction="none").reshape(mask.shape)
    ce_p = F.cross_entropy(logits.name.reshape(-1, NUM_NAME_CLASSES), name.reshape(-1).long(),
                           reduction="none").reshape(mask.shape)
    return ((bce_o + bce_s + ce_v + ce_p) * mask).sum() / total


class SVTModel(nn.Module):
    """Single-modality transcriber: encoder followed by the linear head."""

    def __init__(self, encoder: nn.Module, classifier: Classifier):
        super().__init__()
        self.encoder = encoder
        self.classifier = classifier

    def forward(self, x, lengths=None):
        feats, frames = self.encoder(x, lengths)
        return self.classifier(feats), frames


class AVSVTModel(nn.Module):
    """Audio and video encoders, RCA fusion and the linear head."""

    def __init__(self, audio_encoder: nn.Module, video_encoder: nn.Module, fusion: RCAFusion,
                 classifier: Classifier):
        super().__init__()
        self.audio_encoder = audio_encoder
        self.video_encoder = video_encoder
        self.fusion = fusion
        self.classifier = classifier

    def encode(self, audio, audio_lengths, video, video_lengths):
        ca, la = self.audio_encoder(audio, audio_lengths)
        cv, lv = self.video_encoder(video, video_lengths)
        return align_streams(ca, la, cv, lv)

    def head(self, ca, cv, lengths):
        return self.classifier(self.fusion(ca, cv, lengths))

    def forward(self, audio, audio_lengths, video, video_lengths):
        ca, cv, lengths = self.encode(audio, audio_lengths, video, video_lengths)
        return self.head(ca, cv, lengths), lengths


# ---------------------------------------------------------------------------
# Checkpoints: torch.save of a dict with keys
#   format, version, config, modules (name -> state_dict), optimizer,
#   epoch, schedule, extra


def save_checkpoint(path, *, config: ModelConfig, modules: dict[str, nn.Module],
                    optimizer: dict | None = None, epoch: int = 0, schedule: dict | None = None,
                    extra: dict | None = None) -> None:
    """Write a checkpoint atomically (temporary file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "modules": {k: m.state_dict() for k, m in modules.items()},
        "optimizer": optimizer,
        "epoch": epoch,
        "schedule": schedule or {},
        "extra": extra or {},
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an avsvt checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    payload["config"] = ModelConfig(**payload["config"])
    return payload


def build_audio_model(cfg: ModelConfig) -> SVTModel:
    return SVTModel(AudioEncoder(cfg), Classifier(cfg.dim))


def build_video_model(cfg: ModelConfig) -> SVTModel:
    return SVTModel(VideoEncoder(cfg), Classifier(cfg.dim))


def build_av_model(cfg: ModelConfig, audio_encoder=None, video_encoder=None) -> AVSVTModel:
    return AVSVTModel(audio_encoder or AudioEncoder(cfg), video_encoder or VideoEncoder(cfg),
                      RCAFusion(cfg), Classifier(cfg.dim))
