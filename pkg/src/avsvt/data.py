"""In-memory songs, synthetic dataset I/O and training examples."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.io import wavfile

from .labeling import (
    Batch,
    FrameTargets,
    ManifestEntry,
    collate,
    events_to_frames,
    read_manifest,
    segment_song,
    write_manifest,
)
from .modeling import FRAME_LENGTH, conv_output_length
from .notation import FrameGrid, NoteSequence, read_labels, write_labels
from .signals import (
    SAMPLE_RATE,
    VIDEO_RATE,
    NoiseSpec,
    Waveform,
    gen_noise,
    mix_at_snr,
    random_sequence,
    resample_to_16k_mono,
    synth_song,
)

logger = logging.getLogger(__name__)


@dataclass
class Song:
    song_id: str
    split: str
    audio: np.ndarray
    video: np.ndarray | None
    notes: NoteSequence

    @property
    def duration(self) -> float:
        return len(self.audio) / SAMPLE_RATE


def make_synthetic_dataset(num_songs: int = 60, song_seconds: float = 30.0, seed: int = 0,
                           splits: tuple[float, float, float] = (0.8, 0.1, 0.1)) -> list[Song]:
    """Seeded synthetic corpus; songs are assigned to train/valid/test in order."""
    n_train = int(round(splits[0] * num_songs))
    n_valid = int(round(splits[1] * num_songs))
    songs = []
    for i in range(num_songs):
        rng = np.random.default_rng([seed, i])
        seq = random_sequence(rng, song_seconds)
        audio, visual, _ = synth_song(seq, seed=int(rng.integers(2**31)), duration=song_seconds)
        split = "train" if i < n_train else "valid" if i < n_train + n_valid else "test"
        songs.append(Song(f"song{i:03d}", split, audio.samples.astype(np.float32), visual, seq))
    return songs


def write_dataset(songs: Sequence[Song], out_dir) -> Path:
    """Write ``audio/*.wav`` (16-bit PCM), ``video/*.npy``, ``labels/*.json`` and ``manifest.csv``."""
    out = Path(out_dir)
    for sub in ("audio", "video", "labels"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for song in songs:
        audio_path = out / "audio" / f"{song.song_id}.wav"
        pcm = np.clip(np.round(song.audio * 32767.0), -32768, 32767).astype(np.int16)
        wavfile.write(audio_path, SAMPLE_RATE, pcm)
        video_path = None
        if song.video is not None:
            video_path = out / "video" / f"{song.song_id}.npy"
            np.save(video_path, np.asarray(song.video, dtype=np.float32))
        label_path = out / "labels" / f"{song.song_id}.json"
        write_labels(label_path, song.notes)
        entries.append(ManifestEntry(song.song_id, song.split, audio_path, video_path, label_path))
    manifest = out / "manifest.csv"
    write_manifest(manifest, entries)
    return manifest


def read_audio(path) -> np.ndarray:
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    return resample_to_16k_mono(Waveform(data, rate)).samples.astype(np.float32)


def load_dataset(manifest, splits: Sequence[str] | None = None) -> list[Song]:
    songs = []
    for entry in read_manifest(manifest):
        if splits is not None and entry.split not in splits:
            continue
        audio = read_audio(entry.audio_path)
        video = np.load(entry.video_feature_path).astype(np.float32) if entry.video_feature_path else None
        if video is not None and video.ndim == 1:
            video = video[:, None]
        notes = read_labels(entry.label_path, duration=len(audio) / SAMPLE_RATE)
        songs.append(Song(entry.song_id, entry.split, audio, video, notes))
    return songs


def song_noise(song: Song, noise: NoiseSpec) -> Waveform:
    """The noise clip mixed into ``song``; independent of the SNR."""
    # per-song noise seed so songs do not share one noise clip
    spec = replace(noise, seed=noise.seed * 100003 + int(song.song_id.encode().hex(), 16) % 99991)
    return gen_noise(spec, song.duration)


def noisy_song(song: Song, noise: NoiseSpec, clip: Waveform | None = None) -> Song:
    """Copy of ``song`` whose audio is mixed with seeded noise at ``noise.snr_db``.

    ``clip`` may carry a precomputed :func:`song_noise` result.
    """
    if math.isinf(noise.snr_db):
        return song
    clip = song_noise(song, noise) if clip is None else clip
    mixed = mix_at_snr(Waveform(song.audio), clip, noise.snr_db)
    return replace(song, audio=mixed.samples.astype(np.float32))


def song_targets(song: Song) -> FrameTargets:
    return events_to_frames(song.notes, FrameGrid.for_duration(song.duration, FRAME_LENGTH))


@dataclass
class Example:
    """Aligned model inputs and targets, trimmed to a common frame count."""

    audio: np.ndarray
    video: np.ndarray
    targets: FrameTargets
    song_id: str = ""

    @property
    def num_frames(self) -> int:
        return len(self.targets)


def _trim(audio: np.ndarray, video: np.ndarray | None, targets: FrameTargets, song_id: str) -> Example:
    if video is None:
        video = np.zeros((len(targets), 1), dtype=np.float32)
    T = min(conv_output_length(len(audio)), len(video), len(targets))
    return Example(audio, video[:T], targets.slice(0, T), song_id)


def song_examples(song: Song, segment_seconds: float | None = 5.0) -> list[Example]:
    """Training segments of a song, or the whole song when ``segment_seconds`` is None."""
    targets = song_targets(song)
    if segment_seconds is None:
        return [_trim(song.audio, song.video, targets, song.song_id)]
    inputs = {"audio": (song.audio, SAMPLE_RATE)}
    if song.video is not None:
        inputs["video"] = (song.video, VIDEO_RATE)
    return [_trim(seg.inputs["audio"], seg.inputs.get("video"), seg.targets, song.song_id)
            for seg in segment_song(targets, inputs, FRAME_LENGTH, segment_seconds)]


def collate_examples(examples: Sequence[Example]) -> Batch:
    return collate([({"audio": ex.audio, "video": ex.video}, ex.targets) for ex in examples])


def iterate_batches(examples: Sequence[Example], batch_size: int,
                    rng: np.random.Generator | None = None) -> Iterator[Batch]:
    """Yield collated batches; shuffled when ``rng`` is given."""
    order = np.arange(len(examples))
    if rng is not None:
        order = rng.permutation(len(examples))
    for i in range(0, len(order), batch_size):
        yield collate_examples([examples[j] for j in order[i:i + batch_size]])
