"""Pitches, note events and the frame grid shared by the rest of the package.

Pitches are integer MIDI numbers restricted to C2..B5 (36..83). Each pitch
splits into an octave class (0..3 for octaves 2..5) and a pitch-name class
(0..11 for C..B). One extra class on each axis encodes silence, so the
classifier sees 5 octave classes and 13 pitch-name classes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

MIDI_MIN = 36
MIDI_MAX = 83
SILENCE = -1

NUM_OCTAVE_CLASSES = 5
NUM_NAME_CLASSES = 13
SILENT_OCTAVE = 4
SILENT_NAME = 12

PITCH_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")

# Float slack used when mapping times to frame indices.
FRAME_EPS = 1e-9


class PitchRangeError(ValueError):
    """Raised for MIDI numbers or classes outside the supported range."""


class LabelFormatError(ValueError):
    """Raised when a label file cannot be parsed or fails validation."""


def is_valid_midi(midi) -> bool:
    return float(midi).is_integer() and MIDI_MIN <= midi <= MIDI_MAX


def midi_to_classes(midi: int) -> tuple[int, int]:
    """Split a MIDI number into ``(octave_class, name_class)``.

    ``SILENCE`` maps to ``(4, 12)``. MIDI 48 (C3) maps to ``(1, 0)``.
    """
    if midi == SILENCE:
        return SILENT_OCTAVE, SILENT_NAME
    if not is_valid_midi(midi):
        raise PitchRangeError(f"MIDI number {midi!r} outside [{MIDI_MIN}, {MIDI_MAX}]")
    offset = int(midi) - MIDI_MIN
    return offset // 12, offset % 12


def classes_to_midi(octave_class: int, name_class: int) -> int:
    """Inverse of :func:`midi_to_classes`.

    If either class is the silence class the result is ``SILENCE``; a
    half-silent prediction is never turned into an invented pitch.
    """
    if not 0 <= octave_class < NUM_OCTAVE_CLASSES:
        raise PitchRangeError(f"octave class {octave_class} outside 0..4")
    if not 0 <= name_class < NUM_NAME_CLASSES:
        raise PitchRangeError(f"name class {name_class} outside 0..12")
    if octave_class == SILENT_OCTAVE or name_class == SILENT_NAME:
        return SILENCE
    return MIDI_MIN + 12 * octave_class + name_class


def midi_to_hz(midi: float) -> float:
    if not MIDI_MIN <= midi <= MIDI_MAX:
        raise PitchRangeError(f"MIDI number {midi!r} outside [{MIDI_MIN}, {MIDI_MAX}]")
    return 440.0 * 2.0 ** ((midi - 69) / 12.0)


def midi_name(midi: int) -> str:
    if midi == SILENCE:
        return "silence"
    octave_class, name_class = midi_to_classes(midi)
    return f"{PITCH_NAMES[name_class]}{octave_class + 2}"


class NoteEvent(NamedTuple):
    onset: float
    offset: float
    pitch: float

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass
class NoteSequence:
    """Time-ordered notes of one song; ``duration`` is the song length L."""

    notes: list[NoteEvent] = field(default_factory=list)
    duration: float | None = None

    def __post_init__(self):
        self.notes = [n if isinstance(n, NoteEvent) else NoteEvent(*n) for n in self.notes]

    def __len__(self) -> int:
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)

    def __getitem__(self, idx):
        return self.notes[idx]

    def to_triples(self) -> list[list[float]]:
        return [[float(n.onset), float(n.offset), n.pitch] for n in self.notes]

    @classmethod
    def from_triples(cls, rows: Iterable[Sequence[float]], duration: float | None = None) -> NoteSequence:
        return cls([NoteEvent(float(r[0]), float(r[1]), r[2]) for r in rows], duration)


@dataclass(frozen=True)
class FrameGrid:
    """Uniform time grid: frame ``t`` spans ``[t * frame_length, (t + 1) * frame_length)``."""

    frame_length: float
    num_frames: int
    duration: float

    def __post_init__(self):
        if self.frame_length <= 0:
            raise ValueError("frame_length must be positive")
        if self.num_frames < 0:
            raise ValueError("num_frames must be non-negative")

    @classmethod
    def for_duration(cls, duration: float, frame_length: float = 0.02) -> FrameGrid:
        return cls(frame_length, int(math.floor(duration / frame_length + FRAME_EPS)), duration)

    def frame_time(self, t: int) -> float:
        return t * self.frame_length


@dataclass(frozen=True)
class Violation:
    index: int
    rule: str
    message: str


def validate_sequence(seq: NoteSequence, allow_out_of_range: bool = False) -> list[Violation]:
    """Check the ordering chain ``0 <= o1 < f1 <= o2 < ... < fN <= L`` and pitch range.

    Returns one :class:`Violation` per broken rule; an empty list means the
    sequence is valid.
    """
    found = []
    prev_offset = None
    for i, note in enumerate(seq.notes):
        onset, offset, pitch = note
        if not (math.isfinite(onset) and math.isfinite(offset)):
            found.append(Violation(i, "non-finite", f"note {i} has non-finite times"))
            continue
        if onset < 0:
            found.append(Violation(i, "negative onset", f"note {i} starts at {onset} < 0"))
        if offset <= onset:
            found.append(Violation(i, "non-positive duration", f"note {i} offset {offset} <= onset {onset}"))
        if prev_offset is not None and prev_offset > onset:
            found.append(Violation(i, "overlap", f"note {i} onset {onset} precedes previous offset {prev_offset}"))
        if seq.duration is not None and offset > seq.duration:
            found.append(Violation(i, "exceeds duration", f"note {i} offset {offset} > song duration {seq.duration}"))
        if pitch == SILENCE:
            found.append(Violation(i, "silence pitch", f"note {i} carries the silence pitch"))
        elif not allow_out_of_range and not is_valid_midi(pitch):
            found.append(Violation(i, "pitch out of range", f"note {i} pitch {pitch} outside [{MIDI_MIN}, {MIDI_MAX}]"))
        prev_offset = offset
    return found


# ---------------------------------------------------------------------------
# Label files: a JSON list of [onset_seconds, offset_seconds, midi] triples.


def _json_rows_with_lines(text: str) -> list[tuple[int, object]]:
    """Decode a top-level JSON array, keeping the line number of every element."""
    decoder = json.JSONDecoder()
    pos = _skip_ws(text, 0)
    if pos >= len(text) or text[pos] != "[":
        raise LabelFormatError("line 1: label file must contain a JSON array")
    pos = _skip_ws(text, pos + 1)
    rows = []
    if pos < len(text) and text[pos] == "]":
        return rows
    while True:
        line = text.count("\n", 0, pos) + 1
        try:
            value, pos = decoder.raw_decode(text, pos)
        except json.JSONDecodeError as exc:
            raise LabelFormatError(f"line {exc.lineno}: {exc.msg}") from None
        rows.append((line, value))
        pos = _skip_ws(text, pos)
        if pos < len(text) and text[pos] == ",":
            pos = _skip_ws(text, pos + 1)
            continue
        if pos < len(text) and text[pos] == "]":
            return rows
        raise LabelFormatError(f"line {text.count(chr(10), 0, pos) + 1}: expected ',' or ']'")


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos] in " \t\r\n":
        pos += 1
    return pos


def _check_row(row, line: int) -> tuple[float, float, float]:
    if not isinstance(row, (list, tuple)) or len(row) != 3:
        raise LabelFormatError(f"line {line}: expected [onset, offset, midi], got {row!r}")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
        raise LabelFormatError(f"line {line}: non-numeric value in {row!r}")
    # pitch keeps its JSON type so a file round-trips unchanged
    return float(row[0]), float(row[1]), row[2]


def parse_label_rows(
    rows: Sequence[tuple[int, object]],
    duration: float | None = None,
    allow_out_of_range: bool = False,
) -> NoteSequence:
    """Build and validate a sequence from ``(line_number, row)`` pairs."""
    parsed = [(line, _check_row(row, line)) for line, row in rows]
    seq = NoteSequence.from_triples([r for _, r in parsed], duration)
    problems = validate_sequence(seq, allow_out_of_range=allow_out_of_range)
    if problems:
        detail = "; ".join(f"line {parsed[v.index][0]}: {v.rule} ({v.message})" for v in problems)
        raise LabelFormatError(detail)
    return seq


def read_labels(path, duration: float | None = None, allow_out_of_range: bool = False) -> NoteSequence:
    text = Path(path).read_text()
    return parse_label_rows(_json_rows_with_lines(text), duration, allow_out_of_range)


def format_labels(seq: NoteSequence) -> str:
    if not seq.notes:
        return "[]\n"
    lines = [json.dumps(row) for row in seq.to_triples()]
    return "[\n" + ",\n".join("  " + line for line in lines) + "\n]\n"


def write_labels(path, seq: NoteSequence) -> None:
    Path(path).write_text(format_labels(seq))
