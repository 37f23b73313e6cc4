import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avsvt.notation import (
    SILENCE,
    FrameGrid,
    LabelFormatError,
    NoteEvent,
    NoteSequence,
    PitchRangeError,
    classes_to_midi,
    format_labels,
    midi_name,
    midi_to_classes,
    midi_to_hz,
    read_labels,
    validate_sequence,
    write_labels,
)

# Independent table: scientific pitch notation, MIDI = 12 * (octave + 1) + semitone.
SEMITONES = {"C": 0, "C#": 1, "D": 2, "D#": 3, "E": 4, "F": 5,
             "F#": 6, "G": 7, "G#": 8, "A": 9, "A#": 10, "B": 11}
TABLE = {
    12 * (octave + 1) + semi: (octave - 2, semi)
    for octave in range(2, 6)
    for semi in SEMITONES.values()
}


def test_table_covers_supported_range():
    assert sorted(TABLE) == list(range(36, 84))


@pytest.mark.parametrize("midi", sorted(TABLE))
def test_classes_match_independent_table(midi):
    assert midi_to_classes(midi) == TABLE[midi]
    assert classes_to_midi(*TABLE[midi]) == midi


def test_class_examples():
    assert midi_to_classes(48) == (1, 0)
    assert midi_to_classes(83) == (3, 11)
    assert midi_to_classes(SILENCE) == (4, 12)
    assert classes_to_midi(1, 0) == 48
    assert classes_to_midi(4, 12) == SILENCE
    assert classes_to_midi(0, 9) == 45
    assert midi_name(45) == "A2"


@pytest.mark.parametrize("pair", [(4, 3), (2, 12), (0, 12), (4, 0)])
def test_mixed_silence_resolves_to_silence(pair):
    assert classes_to_midi(*pair) == SILENCE


@pytest.mark.parametrize("midi", [35, 84, 0, 127, 60.5])
def test_out_of_range_midi(midi):
    with pytest.raises(PitchRangeError):
        midi_to_classes(midi)


@pytest.mark.parametrize("pair", [(5, 0), (-1, 0), (0, 13), (0, -1)])
def test_out_of_range_classes(pair):
    with pytest.raises(PitchRangeError):
        classes_to_midi(*pair)


def test_midi_to_hz_reference_values():
    assert midi_to_hz(36) == pytest.approx(65.41, abs=0.01)
    assert midi_to_hz(69) == pytest.approx(440.00, abs=0.01)
    assert midi_to_hz(83) == pytest.approx(987.77, abs=0.01)
    with pytest.raises(PitchRangeError):
        midi_to_hz(84)


def test_midi_to_hz_semitone_ratio():
    hz = np.array([midi_to_hz(m) for m in range(36, 84)])
    assert np.all(np.diff(hz) > 0)
    np.testing.assert_allclose(hz[1:] / hz[:-1], 2 ** (1 / 12), rtol=1e-12)


def test_frame_grid_for_duration():
    grid = FrameGrid.for_duration(1.0, 0.02)
    assert grid.num_frames == 50
    assert FrameGrid.for_duration(0.3, 0.02).num_frames == 15
    with pytest.raises(ValueError):
        FrameGrid(0.0, 10, 1.0)


class TestValidate:
    def test_well_ordered(self):
        seq = NoteSequence([(0.0, 0.5, 60), (0.5, 1.0, 62), (1.2, 1.5, 64)], 2.0)
        assert validate_sequence(seq) == []

    def test_overlap(self):
        seq = NoteSequence([(0.0, 0.6, 60), (0.5, 1.0, 62), (1.2, 1.5, 64)])
        found = validate_sequence(seq)
        assert [(v.index, v.rule) for v in found] == [(1, "overlap")]

    def test_zero_duration(self):
        found = validate_sequence(NoteSequence([(0.3, 0.3, 60)]))
        assert [(v.index, v.rule) for v in found] == [(0, "non-positive duration")]

    def test_other_rules(self):
        seq = NoteSequence([(-0.1, 0.2, 60), (0.3, 0.4, 90), (0.5, 0.6, SILENCE), (0.7, 3.0, 60)], 2.0)
        rules = {(v.index, v.rule) for v in validate_sequence(seq)}
        assert rules == {(0, "negative onset"), (1, "pitch out of range"),
                         (2, "silence pitch"), (3, "exceeds duration")}
        assert validate_sequence(NoteSequence([(0.3, 0.4, 90)]), allow_out_of_range=True) == []


@st.composite
def valid_sequences(draw):
    n = draw(st.integers(0, 12))
    gaps = draw(st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n))
    lengths = draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
    pitches = draw(st.lists(st.integers(36, 83), min_size=n, max_size=n))
    notes, t = [], 0.0
    for gap, length, pitch in zip(gaps, lengths, pitches):
        onset = t + gap
        notes.append(NoteEvent(onset, onset + length, pitch))
        t = onset + length
    return NoteSequence(notes, t + draw(st.floats(0.0, 1.0)))


@settings(max_examples=200, deadline=None)
@given(valid_sequences())
def test_validator_accepts_valid(seq):
    assert validate_sequence(seq) == []


@settings(max_examples=200, deadline=None)
@given(valid_sequences().filter(lambda s: len(s) >= 2), st.data())
def test_validator_finds_planted_overlap(seq, data):
    i = data.draw(st.integers(1, len(seq) - 1))
    notes = list(seq.notes)
    prev = notes[i - 1]
    # push the previous offset past this onset while keeping it after its own onset
    notes[i - 1] = NoteEvent(prev.onset, notes[i].onset + 0.05, prev.pitch)
    found = validate_sequence(NoteSequence(notes))
    assert (i, "overlap") in {(v.index, v.rule) for v in found}


@settings(max_examples=100, deadline=None)
@given(valid_sequences().filter(lambda s: len(s) >= 1), st.data())
def test_validator_finds_planted_zero_length(seq, data):
    i = data.draw(st.integers(0, len(seq) - 1))
    notes = list(seq.notes)
    notes[i] = NoteEvent(notes[i].onset, notes[i].onset, notes[i].pitch)
    found = validate_sequence(NoteSequence(notes))
    assert (i, "non-positive duration") in {(v.index, v.rule) for v in found}


class TestLabelFiles:
    def test_round_trip(self, tmp_path):
        seq = NoteSequence([(0.1, 0.5, 48), (0.5, 0.61, 83), (1.0000001, 2.5, 36)])
        path = tmp_path / "a.json"
        write_labels(path, seq)
        back = read_labels(path)
        assert back.notes == seq.notes
        assert format_labels(back) == path.read_text()
        assert json.loads(path.read_text()) == [[0.1, 0.5, 48], [0.5, 0.61, 83], [1.0000001, 2.5, 36]]

    def test_empty(self, tmp_path):
        path = tmp_path / "e.json"
        write_labels(path, NoteSequence([]))
        assert len(read_labels(path)) == 0

    def test_out_of_range_rejected_with_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("[\n  [0.1, 0.2, 60],\n  [0.3, 0.4, 90]\n]\n")
        with pytest.raises(LabelFormatError, match="line 3: pitch out of range"):
            read_labels(path)
        assert read_labels(path, allow_out_of_range=True)[1].pitch == 90

    def test_unordered_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("[[0.5, 0.9, 60],\n [0.3, 0.4, 61]]")
        with pytest.raises(LabelFormatError, match="line 2: overlap"):
            read_labels(path)

    @pytest.mark.parametrize("text,line", [
        ("[\n[0.1, 0.2]\n]", 2),
        ("[\n[0.1, 0.2, 60],\n[0.1, \"x\", 60]]", 3),
        ("{\"a\": 1}", 1),
        ("[\n[0.1, 0.2, 60],\n[0.3, 0.4, 61]\n", 4),
    ])
    def test_malformed(self, tmp_path, text, line):
        path = tmp_path / "bad.json"
        path.write_text(text)
        with pytest.raises(LabelFormatError, match=f"line {line}"):
            read_labels(path)
