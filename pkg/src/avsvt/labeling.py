"""Frame-level targets, fixed-length song segmentation and padded batches."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .notation import (
    FRAME_EPS,
    SILENT_NAME,
    SILENT_OCTAVE,
    FrameGrid,
    NoteSequence,
    midi_to_classes,
)


class LabelingWarning(UserWarning):
    """Information was lost while mapping notes or songs onto the frame grid."""


@dataclass
class FrameTargets:
    """Per-frame onset / silence / octave / pitch-name labels."""

    onset: np.ndarray
    silence: np.ndarray
    octave: np.ndarray
    name: np.ndarray

    def __post_init__(self):
        self.onset = np.asarray(self.onset, dtype=np.float32)
        self.silence = np.asarray(self.silence, dtype=np.float32)
        self.octave = np.asarray(self.octave, dtype=np.int64)
        self.name = np.asarray(self.name, dtype=np.int64)
        n = len(self.onset)
        if not (len(self.silence) == len(self.octave) == len(self.name) == n):
            raise ValueError("target arrays must share one length")

    def __len__(self) -> int:
        return len(self.onset)

    def slice(self, start: int, stop: int) -> FrameTargets:
        return FrameTargets(self.onset[start:stop], self.silence[start:stop],
                            self.octave[start:stop], self.name[start:stop])

    @classmethod
    def silent(cls, num_frames: int) -> FrameTargets:
        return cls(np.zeros(num_frames), np.ones(num_frames),
                   np.full(num_frames, SILENT_OCTAVE), np.full(num_frames, SILENT_NAME))


def onset_frame(time: float, frame_length: float) -> int:
    """Index of the frame whose half-open interval contains ``time``."""
    return int(math.floor(time / frame_length + FRAME_EPS))


def center_frame_bound(time: float, frame_length: float) -> int:
    """First frame whose center ``(t + 0.5) * frame_length`` is ``>= time``."""
    return int(math.ceil(time / frame_length - 0.5 - FRAME_EPS))


def events_to_frames(seq: NoteSequence, grid: FrameGrid) -> FrameTargets:
    """Rasterise notes onto ``grid``.

    A note occupies frames from the one containing its onset up to (not
    including) the first frame whose center is at or after its offset. The
    onset frame itself is always occupied so that onset frames are never
    labelled silent. Where two notes claim one frame the later note wins.
    """
    T = grid.num_frames
    dt = grid.frame_length
    targets = FrameTargets.silent(T)
    collisions = 0
    for note in seq.notes:
        start = onset_frame(note.onset, dt)
        if start >= T:
            continue
        stop = min(T, max(center_frame_bound(note.offset, dt), start + 1))
        octave, name = midi_to_classes(note.pitch)
        if targets.onset[start]:
            collisions += 1
        targets.onset[start] = 1.0
        targets.silence[start:stop] = 0.0
        targets.octave[start:stop] = octave
        targets.name[start:stop] = name
    if collisions:
        warnings.warn(f"{collisions} onset(s) shared a frame with another onset and were merged",
                      LabelingWarning, stacklevel=2)
    return targets


# ---------------------------------------------------------------------------
# Segmentation


def segment_bounds(num_frames: int, frame_length: float, segment_seconds: float = 5.0) -> list[tuple[int, int]]:
    """Split ``num_frames`` into non-overlapping ``(start, stop)`` frame ranges.

    Every range except the last is exactly ``segment_seconds`` long. A
    remainder shorter than half a segment merges into the previous range;
    otherwise it becomes its own, shorter, last range.
    """
    seg = int(round(segment_seconds / frame_length))
    if seg <= 0:
        raise ValueError("segment must span at least one frame")
    if num_frames <= 0:
        return []
    if num_frames < seg / 2:
        warnings.warn(f"song of {num_frames * frame_length:.2f}s is shorter than half a segment",
                      LabelingWarning, stacklevel=2)
        return [(0, num_frames)]
    full, rest = divmod(num_frames, seg)
    bounds = [(i * seg, (i + 1) * seg) for i in range(full)]
    if rest:
        if rest * 2 < seg and bounds:
            bounds[-1] = (bounds[-1][0], num_frames)
        else:
            bounds.append((full * seg, num_frames))
    return bounds


@dataclass
class Segment:
    start_frame: int
    stop_frame: int
    targets: FrameTargets
    inputs: dict[str, np.ndarray] = field(default_factory=dict)


def segment_song(
    targets: FrameTargets,
    inputs: Mapping[str, tuple[np.ndarray, float]] | None = None,
    frame_length: float = 0.02,
    segment_seconds: float = 5.0,
) -> list[Segment]:
    """Cut a song's targets and aligned inputs into training segments.

    Args:
        targets: Frame labels of the whole song.
        inputs: ``name -> (array, rate)`` where ``rate`` is samples per second
            along the first axis, e.g. ``("audio", (wave, 16000))``.
        frame_length: Seconds per target frame.
        segment_seconds: Nominal segment length.
    """
    inputs = inputs or {}
    segments = []
    for start, stop in segment_bounds(len(targets), frame_length, segment_seconds):
        sliced = {}
        for key, (array, rate) in inputs.items():
            per_frame = rate * frame_length
            lo = int(round(start * per_frame))
            hi = len(array) if stop == len(targets) else int(round(stop * per_frame))
            sliced[key] = array[lo:hi]
        segments.append(Segment(start, stop, targets.slice(start, stop), sliced))
    return segments


# ---------------------------------------------------------------------------
# Batching


@dataclass
class Batch:
    """Zero-padded batch; ``mask[b, t] == 1`` exactly for real frames."""

    inputs: dict[str, np.ndarray]
    input_lengths: dict[str, np.ndarray]
    targets: FrameTargets
    mask: np.ndarray
    lengths: np.ndarray


def _pad_stack(arrays: Sequence[np.ndarray], length: int) -> np.ndarray:
    first = np.asarray(arrays[0])
    out = np.zeros((len(arrays), length) + first.shape[1:], dtype=first.dtype)
    for i, a in enumerate(arrays):
        out[i, : len(a)] = a
    return out


def collate(items: Sequence[tuple[Mapping[str, np.ndarray], FrameTargets]]) -> Batch:
    """Pad ``(inputs, targets)`` items to the longest target length.

    Each input stream is padded independently to its own longest length.
    Targets are padded with zeros, matching the loss mask.
    """
    if not items:
        raise ValueError("cannot collate an empty batch")
    lengths = np.array([len(t) for _, t in items], dtype=np.int64)
    t_max = int(lengths.max())
    keys = list(items[0][0].keys())
    inputs, input_lengths = {}, {}
    for key in keys:
        arrays = [np.asarray(inp[key]) for inp, _ in items]
        input_lengths[key] = np.array([len(a) for a in arrays], dtype=np.int64)
        inputs[key] = _pad_stack(arrays, int(input_lengths[key].max()))
    targets = FrameTargets(
        _pad_stack([t.onset for _, t in items], t_max),
        _pad_stack([t.silence for _, t in items], t_max),
        _pad_stack([t.octave for _, t in items], t_max),
        _pad_stack([t.name for _, t in items], t_max),
    )
    mask = (np.arange(t_max)[None, :] < lengths[:, None]).astype(np.float32)
    return Batch(inputs, input_lengths, targets, mask, lengths)


# ---------------------------------------------------------------------------
# Manifest: CSV with song_id, split, audio_path, video_feature_path, label_path

MANIFEST_COLUMNS = ("song_id", "split", "audio_path", "video_feature_path", "label_path")
SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class ManifestEntry:
    song_id: str
    split: str
    audio_path: Path
    video_feature_path: Path | None
    label_path: Path


def read_manifest(path) -> list[ManifestEntry]:
    """Read a manifest; relative paths resolve against the manifest's folder."""
    path = Path(path)
    root = path.parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        missing.discard("video_feature_path")
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            if row["split"] not in SPLITS:
                raise ValueError(f"{path}:{lineno}: unknown split {row['split']!r}")
            video = row.get("video_feature_path") or None
            entries.append(ManifestEntry(
                row["song_id"], row["split"], root / row["audio_path"],
                root / video if video else None, root / row["label_path"],
            ))
    return entries


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    path = Path(path)
    root = path.parent

    def rel(p):
        if p is None:
            return ""
        p = Path(p)
        try:
            return str(p.relative_to(root))
        except ValueError:
            return str(p)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for e in entries:
            writer.writerow([e.song_id, e.split, rel(e.audio_path), rel(e.video_feature_path), rel(e.label_path)])
