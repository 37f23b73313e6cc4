"""Turn frame-level predictions back into note events."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logit

from .labeling import FrameTargets
from .notation import (
    NUM_NAME_CLASSES,
    NUM_OCTAVE_CLASSES,
    SILENCE,
    NoteEvent,
    NoteSequence,
    classes_to_midi,
)

LOGITS_FORMAT_VERSION = 1


@dataclass
class FrameLogits:
    """Pre-activation outputs for one song: onset (T,), silence (T,), octave (T, 5), name (T, 13)."""

    onset: np.ndarray
    silence: np.ndarray
    octave: np.ndarray
    name: np.ndarray

    def __post_init__(self):
        self.onset = np.asarray(self.onset, dtype=np.float64).reshape(-1)
        self.silence = np.asarray(self.silence, dtype=np.float64).reshape(-1)
        self.octave = np.asarray(self.octave, dtype=np.float64)
        self.name = np.asarray(self.name, dtype=np.float64)
        T = len(self.onset)
        if self.silence.shape != (T,) or self.octave.shape != (T, NUM_OCTAVE_CLASSES) \
                or self.name.shape != (T, NUM_NAME_CLASSES):
            raise ValueError("logit shapes disagree: "
                             f"{self.onset.shape}, {self.silence.shape}, {self.octave.shape}, {self.name.shape}")

    def __len__(self) -> int:
        return len(self.onset)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> FrameLogits:
        """Split a ``(T, 20)`` classifier output into its four heads."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 20:
            raise ValueError(f"expected (T, 20) logits, got {arr.shape}")
        return cls(arr[:, 0], arr[:, 1], arr[:, 2:7], arr[:, 7:20])

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.onset[:, None], self.silence[:, None], self.octave, self.name], axis=1)


@dataclass(frozen=True)
class DecoderConfig:
    onset_threshold: float = 0.4
    silence_threshold: float = 0.5
    close_on_next_onset: bool = False

    def __post_init__(self):
        for name in ("onset_threshold", "silence_threshold"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")


def frame_pitch(octave_row: np.ndarray, name_row: np.ndarray) -> int:
    return classes_to_midi(int(np.argmax(octave_row)), int(np.argmax(name_row)))


def frame_pitches(logits: FrameLogits) -> np.ndarray:
    """Vectorised :func:`frame_pitch` over all frames; silent frames are ``SILENCE``."""
    octave = np.argmax(logits.octave, axis=1)
    name = np.argmax(logits.name, axis=1)
    silent = (octave == NUM_OCTAVE_CLASSES - 1) | (name == NUM_NAME_CLASSES - 1)
    return np.where(silent, SILENCE, 36 + 12 * octave + name)


def local_maxima(values: np.ndarray) -> np.ndarray:
    """Boolean mask of peak frames.

    A run of equal values is a peak when both neighbouring values (missing
    neighbours count as -inf) are strictly smaller; only the run's first
    frame is marked.
    """
    values = np.asarray(values)
    T = len(values)
    peaks = np.zeros(T, dtype=bool)
    t = 0
    while t < T:
        end = t
        while end + 1 < T and values[end + 1] == values[t]:
            end += 1
        left_ok = t == 0 or values[t - 1] < values[t]
        right_ok = end == T - 1 or values[end + 1] < values[t]
        if left_ok and right_ok:
            peaks[t] = True
        t = end + 1
    return peaks


def _mode_pitch(pitches: np.ndarray) -> int:
    voiced = pitches[pitches != SILENCE]
    if voiced.size == 0:
        return SILENCE
    values, counts = np.unique(voiced, return_counts=True)
    # np.unique sorts ascending, so argmax breaks ties toward the lower MIDI number
    return int(values[np.argmax(counts)])


def decode(logits: FrameLogits, frame_length: float, cfg: DecoderConfig | None = None) -> NoteSequence:
    """Threshold-and-peak note decoding.

    Onsets are frames whose onset probability exceeds ``onset_threshold`` and
    is a local maximum. A note ends at the first later frame whose silence
    probability exceeds ``silence_threshold`` (or the end of the grid). When a
    note would overlap the next onset it is truncated there. The pitch is the
    most frequent non-silent frame pitch inside the note; notes without any
    voiced frame are dropped.
    """
    cfg = cfg or DecoderConfig()
    T = len(logits)
    if T == 0:
        return NoteSequence([], 0.0)
    # compare logits, not probabilities: sigmoid saturation would create ties
    onset_logit = logits.onset
    peaks = np.flatnonzero(local_maxima(onset_logit) & (onset_logit > logit(cfg.onset_threshold)))
    silent = logits.silence > logit(cfg.silence_threshold)
    silent_idx = np.flatnonzero(silent)
    pitches = frame_pitches(logits)

    candidates = []
    for i, t in enumerate(peaks):
        j = np.searchsorted(silent_idx, t, side="right")
        stop = int(silent_idx[j]) if j < len(silent_idx) else T
        if cfg.close_on_next_onset and i + 1 < len(peaks):
            stop = min(stop, int(peaks[i + 1]))
        pitch = _mode_pitch(pitches[t:stop])
        if pitch != SILENCE:
            candidates.append([int(t), stop, pitch])

    # an earlier note still sounding at the next onset is cut there
    for cur, nxt in zip(candidates, candidates[1:]):
        cur[1] = min(cur[1], nxt[0])
    notes = [NoteEvent(t * frame_length, stop * frame_length, pitch) for t, stop, pitch in candidates]
    return NoteSequence(notes, T * frame_length)


def idealize(targets: FrameTargets, magnitude: float = 30.0) -> FrameLogits:
    """Saturated logits that reproduce ``targets`` exactly under argmax / thresholds."""
    T = len(targets)
    sign = lambda x: np.where(np.asarray(x) > 0.5, magnitude, -magnitude)
    octave = np.full((T, NUM_OCTAVE_CLASSES), -magnitude)
    name = np.full((T, NUM_NAME_CLASSES), -magnitude)
    octave[np.arange(T), targets.octave] = magnitude
    name[np.arange(T), targets.name] = magnitude
    return FrameLogits(sign(targets.onset), sign(targets.silence), octave, name)


# ---------------------------------------------------------------------------
# Logits files: numpy .npz with arrays onset, silence, octave, name,
# frame_length and format_version.


def save_logits(path, logits: FrameLogits, frame_length: float) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, onset=logits.onset, silence=logits.silence, octave=logits.octave,
                 name=logits.name, frame_length=np.float64(frame_length),
                 format_version=np.int64(LOGITS_FORMAT_VERSION))


def load_logits(path) -> tuple[FrameLogits, float]:
    with np.load(Path(path)) as data:
        version = int(data["format_version"]) if "format_version" in data else LOGITS_FORMAT_VERSION
        if version != LOGITS_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported logits format version {version}")
        if "logits" in data:
            logits = FrameLogits.from_array(data["logits"])
        else:
            logits = FrameLogits(data["onset"], data["silence"], data["octave"], data["name"])
        return logits, float(data["frame_length"])
