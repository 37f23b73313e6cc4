import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avsvt.decoder import decode, idealize
from avsvt.labeling import events_to_frames
from avsvt.metrics import MODES, evaluate
from avsvt.notation import FrameGrid, NoteSequence
from avsvt.signals import (
    NOISE_FAMILIES,
    NoiseSpec,
    SignalError,
    Waveform,
    active_fraction,
    gen_noise,
    mix_at_snr,
    random_sequence,
    resample_to_16k_mono,
    synth_song,
)

from oracles import measured_snr

FINITE_SNRS = (-10.0, -5.0, 0.0, 5.0, 10.0)


class TestMix:
    def test_clean_condition_is_identity(self):
        x = Waveform(np.random.default_rng(0).normal(0, 0.1, 1000))
        np.testing.assert_array_equal(mix_at_snr(x, Waveform(np.ones(10)), math.inf).samples, x.samples)

    def test_same_signal_at_zero_db_has_unit_scale(self):
        x = Waveform(np.random.default_rng(1).normal(0, 0.1, 1000))
        mix, c, n = mix_at_snr(x, x, 0.0, return_components=True)
        np.testing.assert_allclose(n.samples, x.samples, rtol=1e-12)
        np.testing.assert_allclose(mix.samples, 2 * x.samples, rtol=1e-12)

    @pytest.mark.parametrize("snr", FINITE_SNRS)
    @pytest.mark.parametrize("seed", range(5))
    def test_requested_snr(self, snr, seed):
        rng = np.random.default_rng(seed)
        clean = Waveform(rng.normal(0, rng.uniform(0.01, 0.5), 8000))
        noise = Waveform(rng.uniform(-1, 1, 3000))  # shorter: gets looped
        mix, c, n = mix_at_snr(clean, noise, snr, return_components=True)
        assert abs(measured_snr(c.samples, n.samples) - snr) <= 0.1
        np.testing.assert_allclose(mix.samples, c.samples + n.samples, atol=1e-12)
        assert np.max(np.abs(mix.samples)) <= 1.0 + 1e-12

    def test_peak_normalisation_keeps_ratio(self):
        clean = Waveform(0.9 * np.sin(np.linspace(0, 100, 4000)))
        mix, c, n = mix_at_snr(clean, Waveform(np.random.default_rng(0).normal(size=4000)), -10.0, True)
        assert np.max(np.abs(mix.samples)) == pytest.approx(1.0)
        assert measured_snr(c.samples, n.samples) == pytest.approx(-10.0, abs=1e-9)

    def test_errors(self):
        with pytest.raises(SignalError):
            mix_at_snr(Waveform(np.zeros(100)), Waveform(np.ones(100)), 0.0)
        with pytest.raises(SignalError):
            mix_at_snr(Waveform(np.ones(100), 16000), Waveform(np.ones(100), 8000), 0.0)


class TestNoise:
    def test_white_statistics(self):
        x = gen_noise(NoiseSpec("white", seed=3), 10.0).samples
        assert len(x) == 160000
        assert abs(x.mean()) <= 0.01
        assert abs(x.var() - 1.0) <= 0.05

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("duty", [0.1, 0.2, 0.3])
    def test_natural_is_sparse(self, seed, duty):
        x = gen_noise(NoiseSpec("natural", seed=seed, duty_cycle=duty), 10.0).samples
        assert 0 < active_fraction(x) <= 0.3

    @pytest.mark.parametrize("family", ["babble", "accompaniment"])
    def test_continuous_families(self, family):
        x = gen_noise(NoiseSpec(family, seed=0), 10.0).samples
        assert active_fraction(x) > 0.9

    @pytest.mark.parametrize("family", NOISE_FAMILIES)
    def test_deterministic(self, family):
        a = gen_noise(NoiseSpec(family, seed=7), 2.0).samples
        b = gen_noise(NoiseSpec(family, seed=7), 2.0).samples
        c = gen_noise(NoiseSpec(family, seed=8), 2.0).samples
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)
        assert np.all(np.isfinite(a))

    @pytest.mark.parametrize("family", NOISE_FAMILIES)
    @pytest.mark.parametrize("snr", FINITE_SNRS)
    def test_every_family_mixes_at_requested_snr(self, family, snr):
        seq = random_sequence(np.random.default_rng(0), 5.0)
        clean, _, _ = synth_song(seq, seed=0, duration=5.0)
        noise = gen_noise(NoiseSpec(family, snr, seed=1), 5.0)
        _, c, n = mix_at_snr(clean, noise, snr, return_components=True)
        assert abs(measured_snr(c.samples, n.samples) - snr) <= 0.1

    def test_bad_specs(self):
        with pytest.raises(SignalError):
            NoiseSpec("pink")
        with pytest.raises(SignalError):
            NoiseSpec("natural", duty_cycle=0.5)
        with pytest.raises(SignalError):
            gen_noise(NoiseSpec("white"), 0.0)


class TestResample:
    def test_identity_at_16k(self):
        x = np.random.default_rng(0).normal(size=1000)
        np.testing.assert_array_equal(resample_to_16k_mono(Waveform(x, 16000)).samples, x)

    def test_stereo_identical_channels(self):
        x = np.random.default_rng(0).normal(size=1000)
        out = resample_to_16k_mono(Waveform(np.stack([x, x], axis=1), 16000))
        np.testing.assert_allclose(out.samples, x)

    def test_sine_from_44k1(self):
        sr = 44100
        t = np.arange(sr) / sr
        out = resample_to_16k_mono(Waveform(0.5 * np.sin(2 * np.pi * 1000 * t), sr))
        assert out.sample_rate == 16000 and len(out.samples) == 16000
        y = out.samples[1000:-1000]  # skip filter edges
        tt = (np.arange(len(y)) + 1000) / 16000
        # least-squares sine fit over a grid of candidate frequencies
        best = None
        for f in np.linspace(995, 1005, 2001):
            basis = np.stack([np.sin(2 * np.pi * f * tt), np.cos(2 * np.pi * f * tt)], axis=1)
            coef, res, *_ = np.linalg.lstsq(basis, y, rcond=None)
            err = float(np.sum((basis @ coef - y) ** 2))
            if best is None or err < best[0]:
                best = (err, f, float(np.hypot(*coef)))
        _, freq, amp = best
        assert abs(freq - 1000) / 1000 <= 1e-3
        assert abs(amp - 0.5) / 0.5 <= 0.01

    def test_low_rate_rejected(self):
        with pytest.raises(SignalError):
            resample_to_16k_mono(Waveform(np.zeros(100), 4000))


class TestSynth:
    def test_empty_sequence(self):
        audio, visual, _ = synth_song(NoteSequence([], 2.0), seed=0)
        assert np.max(np.abs(audio.samples)) < 0.01
        assert visual.shape == (100, 1)
        assert np.max(np.abs(visual)) < 0.2

    def test_a4_spectral_peak(self):
        audio, _, _ = synth_song(NoteSequence([(0.0, 2.0, 69)], 2.0), seed=0)
        x = audio.samples
        spectrum = np.abs(np.fft.rfft(x * np.hanning(len(x)), n=16 * len(x)))
        freqs = np.fft.rfftfreq(16 * len(x), 1 / 16000)
        assert abs(freqs[np.argmax(spectrum)] - 440.0) <= 1.0

    @pytest.mark.parametrize("seed", range(5))
    def test_visual_half_max_near_onsets(self, seed):
        rng = np.random.default_rng(seed)
        seq = random_sequence(rng, 10.0)
        _, visual, labels = synth_song(seq, seed=seed, duration=10.0)
        assert labels is seq
        v = visual[:, 0].astype(float)
        centers = (np.arange(len(v)) + 0.5) / 50
        # upward half-maximum crossings, linearly interpolated between frame centers
        up = np.flatnonzero((v[:-1] < 0.5) & (v[1:] >= 0.5))
        times = centers[up] + (0.5 - v[up]) / (v[up + 1] - v[up]) / 50
        for note in seq.notes:
            assert np.min(np.abs(times - note.onset)) <= 0.03

    def test_lengths_are_consistent(self):
        seq = random_sequence(np.random.default_rng(0), 7.3)
        audio, visual, _ = synth_song(seq, seed=0, duration=7.3)
        assert len(audio.samples) == round(7.3 * 16000)
        assert len(visual) == math.floor(7.3 * 50)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_labels_survive_ideal_decoding(self, seed):
        rng = np.random.default_rng(seed)
        seq = random_sequence(rng, 8.0)
        _, _, labels = synth_song(seq, seed=seed, duration=8.0)
        grid = FrameGrid.for_duration(8.0, 0.02)
        est = decode(idealize(events_to_frames(labels, grid)), 0.02)
        assert evaluate(seq, est).f1() == {m: 1.0 for m in MODES}

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1.0, 40.0))
    def test_random_sequence_bounds(self, seed, duration):
        seq = random_sequence(np.random.default_rng(seed), duration)
        for n in seq.notes:
            assert 0.12 - 1e-6 <= n.duration <= 0.8 + 1e-6 and 48 <= n.pitch <= 76
            assert n.offset <= duration
        for a, b in zip(seq.notes, seq.notes[1:]):
            assert b.onset - a.offset >= 0.06 - 2e-6
