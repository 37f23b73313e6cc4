import warnings
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avsvt.labeling import (
    FrameTargets,
    LabelingWarning,
    ManifestEntry,
    collate,
    events_to_frames,
    read_manifest,
    segment_bounds,
    segment_song,
    write_manifest,
)
from avsvt.notation import FrameGrid, NoteEvent, NoteSequence, midi_to_classes


@contextmanager
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LabelingWarning)
        yield


def scan_oracle(seq, frame_length, num_frames):
    """Frame-by-frame labelling in exact rational arithmetic.

    A frame belongs to the latest note that either starts inside it or spans
    its center; it is an onset frame if any onset falls inside it.
    """
    dt = Fraction(frame_length).limit_denominator(10**6)
    notes = [(Fraction(n.onset).limit_denominator(10**9), Fraction(n.offset).limit_denominator(10**9), n.pitch)
             for n in seq.notes]
    onset, silence, octave, name = [], [], [], []
    for t in range(num_frames):
        lo, hi, center = t * dt, (t + 1) * dt, (t + Fraction(1, 2)) * dt
        onset.append(int(any(lo <= o < hi for o, _, _ in notes)))
        owner = None
        for o, f, p in notes:
            if lo <= o < hi or o <= center < f:
                owner = p
        if owner is None:
            silence.append(1), octave.append(4), name.append(12)
        else:
            v, n = midi_to_classes(owner)
            silence.append(0), octave.append(v), name.append(n)
    return onset, silence, octave, name


def assert_matches_oracle(seq, grid):
    got = events_to_frames(seq, grid)
    o, s, v, p = scan_oracle(seq, grid.frame_length, grid.num_frames)
    np.testing.assert_array_equal(got.onset, o)
    np.testing.assert_array_equal(got.silence, s)
    np.testing.assert_array_equal(got.octave, v)
    np.testing.assert_array_equal(got.name, p)
    return got


def test_single_note_example():
    grid = FrameGrid(0.02, 50, 1.0)
    got = assert_matches_oracle(NoteSequence([(0.10, 0.50, 48)], 1.0), grid)
    assert np.flatnonzero(got.onset).tolist() == [5]
    assert np.flatnonzero(got.silence == 0).tolist() == list(range(5, 25))
    assert set(got.octave[5:25]) == {1} and set(got.name[5:25]) == {0}


def test_empty_sequence():
    got = events_to_frames(NoteSequence([], 1.0), FrameGrid(0.02, 50, 1.0))
    assert not got.onset.any()
    assert got.silence.all()
    assert (got.octave == 4).all() and (got.name == 12).all()


def test_onset_on_frame_boundary():
    got = events_to_frames(NoteSequence([(0.3, 0.5, 60)]), FrameGrid(0.02, 50, 1.0))
    # 0.3 / 0.02 evaluates to 14.999999999999998 in floating point
    assert np.flatnonzero(got.onset).tolist() == [15]


def test_late_onset_frame_is_not_silent():
    # onset after the frame center still labels its frame as voiced
    got = events_to_frames(NoteSequence([(0.035, 0.2, 60)]), FrameGrid(0.02, 20, 0.4))
    assert got.onset[1] == 1 and got.silence[1] == 0


def test_shared_boundary_goes_to_later_note():
    # offset of the first and onset of the second both sit on frame 5's center
    got = events_to_frames(NoteSequence([(0.0, 0.11, 60), (0.11, 0.3, 62)]), FrameGrid(0.02, 20, 0.4))
    assert midi_to_classes(62) == (got.octave[5], got.name[5])


def test_onset_collision_warns():
    seq = NoteSequence([(0.100, 0.105, 60), (0.110, 0.3, 62)])
    with pytest.warns(LabelingWarning):
        got = events_to_frames(seq, FrameGrid(0.02, 20, 0.4))
    assert got.onset.sum() == 1


@st.composite
def sequences(draw, min_gap=0.0, min_len=0.005):
    n = draw(st.integers(0, 15))
    notes, t = [], draw(st.floats(0.0, 0.3))
    for _ in range(n):
        length = draw(st.floats(min_len, 0.7))
        notes.append(NoteEvent(round(t, 4), round(t + length, 4), draw(st.integers(36, 83))))
        t = round(t + length, 4) + draw(st.floats(min_gap, 0.5))
    return NoteSequence(notes, t)


@settings(max_examples=200, deadline=None)
@given(sequences())
def test_matches_scan_oracle(seq):
    with quiet():
        assert_matches_oracle(seq, FrameGrid.for_duration(seq.duration + 0.1, 0.02))


@settings(max_examples=200, deadline=None)
@given(sequences(min_gap=0.0, min_len=0.02))
def test_target_invariants(seq):
    with quiet():
        got = events_to_frames(seq, FrameGrid.for_duration(seq.duration + 0.1, 0.02))
    silent_classes = (got.octave == 4) & (got.name == 12)
    np.testing.assert_array_equal(got.silence == 1, silent_classes)
    assert (got.silence[got.onset == 1] == 0).all()


@settings(max_examples=200, deadline=None)
@given(sequences(min_gap=0.02, min_len=0.02))
def test_onset_count_without_collisions(seq):
    # notes at least one frame long with one-frame gaps never share an onset frame
    grid = FrameGrid.for_duration(seq.duration, 0.02)
    got = events_to_frames(seq, grid)
    in_range = sum(1 for n in seq.notes if n.onset < grid.num_frames * grid.frame_length - 1e-9)
    assert int(got.onset.sum()) == in_range


class TestSegmentation:
    @pytest.mark.parametrize("seconds,expected", [
        (17.0, [5, 5, 7]),
        (15.0, [5, 5, 5]),
        (18.0, [5, 5, 5, 3]),
        (4.0, [4]),
        (7.4, [7.4]),
        (7.5, [5, 2.5]),
    ])
    def test_lengths(self, seconds, expected):
        n = int(round(seconds / 0.02))
        bounds = segment_bounds(n, 0.02, 5.0)
        assert [round((b - a) * 0.02, 6) for a, b in bounds] == expected

    def test_short_song_warns(self):
        with pytest.warns(LabelingWarning):
            assert segment_bounds(100, 0.02) == [(0, 100)]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(125, 20000))
    def test_conserves_frames(self, n):
        bounds = segment_bounds(n, 0.02, 5.0)
        assert bounds[0][0] == 0 and bounds[-1][1] == n
        for (a0, b0), (a1, b1) in zip(bounds, bounds[1:]):
            assert b0 == a1 and a0 < b0
        lengths = [b - a for a, b in bounds]
        assert all(length == 250 for length in lengths[:-1])
        assert 125 <= lengths[-1] < 375

    def test_slices_inputs_consistently(self):
        T = 850
        targets = FrameTargets.silent(T)
        targets.onset[:] = np.arange(T) % 7 == 0
        audio = np.arange(T * 320, dtype=np.float32)
        video = np.arange(T, dtype=np.float32)[:, None]
        segs = segment_song(targets, {"audio": (audio, 16000), "video": (video, 50)}, 0.02, 5.0)
        assert [len(s.targets) for s in segs] == [250, 250, 350]
        assert sum(len(s.inputs["audio"]) for s in segs) == len(audio)
        for s in segs:
            assert len(s.inputs["audio"]) == 320 * len(s.targets)
            assert s.inputs["video"][0, 0] == s.start_frame
            np.testing.assert_array_equal(s.targets.onset, targets.onset[s.start_frame:s.stop_frame])


class TestCollate:
    def _item(self, T):
        return {"audio": np.ones(T * 320, np.float32)}, FrameTargets(np.ones(T), np.ones(T), np.ones(T), np.ones(T))

    def test_padding_and_mask(self):
        batch = collate([self._item(250), self._item(375)])
        assert batch.mask.shape == (2, 375)
        assert batch.mask[0].tolist() == [1] * 250 + [0] * 125
        assert batch.mask[1].all()
        assert batch.targets.onset[0, 250:].sum() == 0
        assert batch.inputs["audio"].shape == (2, 375 * 320)
        assert batch.input_lengths["audio"].tolist() == [250 * 320, 375 * 320]

    def test_single_and_equal(self):
        assert collate([self._item(10)]).mask.all()
        batch = collate([self._item(10), self._item(10)])
        assert batch.mask.all() and batch.mask.shape == (2, 10)

    def test_empty(self):
        with pytest.raises(ValueError):
            collate([])


def test_manifest_round_trip(tmp_path):
    entries = [
        ManifestEntry("a", "train", tmp_path / "audio/a.wav", tmp_path / "video/a.npy", tmp_path / "labels/a.json"),
        ManifestEntry("b", "test", tmp_path / "audio/b.wav", None, tmp_path / "labels/b.json"),
    ]
    path = tmp_path / "manifest.csv"
    write_manifest(path, entries)
    assert "audio/a.wav" in path.read_text()
    assert read_manifest(path) == entries


def test_manifest_rejects_bad_split(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("song_id,split,audio_path,video_feature_path,label_path\na,dev,a.wav,,a.json\n")
    with pytest.raises(ValueError, match="unknown split"):
        read_manifest(path)
