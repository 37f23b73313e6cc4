"""Audio utilities, synthetic noise families and the synthetic singing generator.

Everything here is a pure function of its arguments and seed, so datasets
and noisy conditions can be regenerated bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import lfilter, resample_poly

from .notation import NoteSequence, midi_to_hz

SAMPLE_RATE = 16000
VIDEO_RATE = 50
NOISE_FAMILIES = ("accompaniment", "babble", "white", "natural")
SNR_GRID = (-10.0, -5.0, 0.0, 5.0, 10.0, math.inf)


class SignalError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate

    @property
    def num_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * math.log10(power(clean) / power(noise))


def fit_length(noise: np.ndarray, length: int) -> np.ndarray:
    """Loop or trim ``noise`` to exactly ``length`` samples."""
    if len(noise) == 0:
        raise SignalError("noise is empty")
    reps = -(-length // len(noise))
    return np.tile(noise, reps)[:length]


def mix_at_snr(clean: Waveform, noise: Waveform, snr: float, return_components: bool = False):
    """Add ``noise`` to ``clean`` at ``snr`` dB (mean-square power over the whole clip).

    ``snr = inf`` returns the clean signal untouched. If the mixture clips it
    is peak-normalised; the same gain is applied to both components, so the
    ratio is unaffected. With ``return_components`` the call returns
    ``(mix, clean_part, noise_part)`` where ``mix = clean_part + noise_part``.
    """
    if clean.sample_rate != noise.sample_rate:
        raise SignalError(f"sample rates differ: {clean.sample_rate} vs {noise.sample_rate}")
    x = clean.samples
    if math.isinf(snr) and snr > 0:
        out = Waveform(x.copy(), clean.sample_rate)
        if return_components:
            return out, Waveform(x.copy(), clean.sample_rate), Waveform(np.zeros_like(x), clean.sample_rate)
        return out
    if not math.isfinite(snr):
        raise SignalError(f"unsupported SNR {snr}")
    p_clean = power(x)
    if p_clean == 0.0:
        raise SignalError("clean signal is silent; SNR is undefined")
    n = fit_length(noise.samples, len(x))
    p_noise = power(n)
    if p_noise == 0.0:
        raise SignalError("noise signal is silent")
    n = n * math.sqrt(p_clean / (p_noise * 10.0 ** (snr / 10.0)))
    mix = x + n
    peak = float(np.max(np.abs(mix)))
    gain = 1.0 / peak if peak > 1.0 else 1.0
    out = Waveform(mix * gain, clean.sample_rate)
    if return_components:
        return out, Waveform(x * gain, clean.sample_rate), Waveform(n * gain, clean.sample_rate)
    return out


def resample_to_16k_mono(wave: Waveform) -> Waveform:
    """Average channels, then polyphase-resample to 16 kHz."""
    if wave.sample_rate < 8000:
        raise SignalError(f"sample rate {wave.sample_rate} Hz is below the supported 8 kHz")
    x = wave.samples
    if x.ndim == 2:
        x = x.mean(axis=1)
    elif x.ndim != 1:
        raise SignalError(f"expected 1-D or (samples, channels) audio, got shape {x.shape}")
    if wave.sample_rate == SAMPLE_RATE:
        return Waveform(x if wave.samples.ndim == 1 else x.copy(), SAMPLE_RATE)
    ratio = Fraction(SAMPLE_RATE, int(wave.sample_rate))
    if wave.sample_rate != int(wave.sample_rate):
        raise SignalError("non-integer sample rates are not supported")
    return Waveform(resample_poly(x, ratio.numerator, ratio.denominator), SAMPLE_RATE)


# ---------------------------------------------------------------------------
# Noise families


@dataclass(frozen=True)
class NoiseSpec:
    family: str
    snr_db: float = math.inf
    seed: int = 0
    duty_cycle: float = 0.2

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise SignalError(f"unknown noise family {self.family!r}; choose from {NOISE_FAMILIES}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise SignalError(f"invalid SNR {self.snr_db}")
        if not 0.0 < self.duty_cycle <= 0.3:
            raise SignalError("duty_cycle must lie in (0, 0.3]")


def _white(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n)


def _harmonic_stack(phase: np.ndarray, harmonics: int) -> np.ndarray:
    """``sum_k sin(k * phase) / k`` via the Chebyshev recurrence (one sin, one cos)."""
    two_cos = 2.0 * np.cos(phase)
    prev, cur = np.zeros_like(phase), np.sin(phase)
    out = cur.copy()
    for k in range(2, harmonics + 1):
        prev, cur = cur, two_cos * cur - prev
        out += cur / k
    return out


def _babble(rng: np.random.Generator, n: int, sr: int, talkers: int = 8) -> np.ndarray:
    t = np.arange(n) / sr
    out = np.zeros(n)
    for _ in range(talkers):
        # slowly drifting f0 with syllable-rate amplitude modulation
        f0 = rng.uniform(90, 260) * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.2, 0.8) * t + rng.uniform(0, 2 * np.pi)))
        phase = 2 * np.pi * np.cumsum(f0) / sr
        voice = _harmonic_stack(phase, 8)
        rate = rng.uniform(3.0, 6.0)
        env = 0.5 * (1 + np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
        env = env ** 2 * (0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.3, 1.0) * t) ** 2)
        out += voice * env
    out += 0.05 * rng.standard_normal(n) * np.std(out)
    return out


def _natural(rng: np.random.Generator, n: int, sr: int, duty_cycle: float) -> np.ndarray:
    out = np.zeros(n)
    target = int(duty_cycle * n)
    covered = np.zeros(n, dtype=bool)
    filled = 0
    for _ in range(10000):
        if filled >= 0.8 * target:
            break
        length = int(rng.uniform(0.05, 0.4) * sr)
        start = int(rng.integers(0, max(1, n - length)))
        stop = min(n, start + length)
        if covered[start:stop].any() or filled + (stop - start) > target:
            continue
        seg = rng.standard_normal(stop - start)
        # crude colouring: first-order low-pass with a random pole
        seg = lfilter([1.0], [1.0, -rng.uniform(0.0, 0.95)], seg)
        env = np.hanning(stop - start) ** 0.5
        out[start:stop] = seg * env * rng.uniform(0.5, 1.0)
        covered[start:stop] = True
        filled += stop - start
    return out


def _accompaniment(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    out = np.zeros(n)
    pos = 0
    while pos < n:
        length = int(rng.uniform(1.0, 2.0) * sr)
        stop = min(n, pos + length)
        root = int(rng.integers(45, 57))
        quality = (0, 4, 7) if rng.random() < 0.5 else (0, 3, 7)
        seg_t = t[pos:stop]
        fade = np.minimum(1.0, np.minimum(seg_t - seg_t[0], seg_t[-1] - seg_t + 1.0 / sr) / 0.02)
        chord = np.zeros(stop - pos)
        for interval in quality + (-12,):
            f = 440.0 * 2.0 ** ((root + interval - 69) / 12.0)
            for k in range(1, 5):
                chord += np.sin(2 * np.pi * k * f * seg_t + rng.uniform(0, 2 * np.pi)) / k
        out[pos:stop] = chord * fade
        pos = stop
    return out


def gen_noise(spec: NoiseSpec, duration: float, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Generate ``duration`` seconds of the requested noise family (unit-scale)."""
    if duration <= 0:
        raise SignalError("duration must be positive")
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng([spec.seed, NOISE_FAMILIES.index(spec.family)])
    if spec.family == "white":
        x = _white(rng, n)
    elif spec.family == "babble":
        x = _babble(rng, n, sample_rate)
    elif spec.family == "natural":
        x = _natural(rng, n, sample_rate, spec.duty_cycle)
    else:
        x = _accompaniment(rng, n, sample_rate)
    if spec.family != "white":
        peak = np.max(np.abs(x))
        if peak > 0:
            x = 0.5 * x / peak
    return Waveform(x, sample_rate)


def active_fraction(x: np.ndarray, frame: int = 320, rel_threshold: float = 1e-3) -> float:
    """Fraction of frames whose energy exceeds ``rel_threshold`` of the loudest frame."""
    n = len(x) // frame
    energy = np.square(x[: n * frame]).reshape(n, frame).mean(axis=1)
    if energy.max() == 0:
        return 0.0
    return float(np.mean(energy > rel_threshold * energy.max()))


# ---------------------------------------------------------------------------
# Synthetic songs

ATTACK = 0.02
RELEASE = 0.015
VISUAL_RISE = 0.04
VISUAL_FALL = 0.06


def random_sequence(
    rng: np.random.Generator,
    duration: float,
    min_note: float = 0.12,
    max_note: float = 0.8,
    min_gap: float = 0.06,
    max_gap: float = 0.4,
    midi_range: tuple[int, int] = (48, 76),
    lead_in: float = 0.2,
) -> NoteSequence:
    """Random melody whose notes and rests stay inside the given length bounds."""
    notes = []
    t = lead_in * rng.random()
    midi = int(rng.integers(midi_range[0], midi_range[1] + 1))
    while True:
        length = rng.uniform(min_note, max_note)
        if t + length > duration:
            break
        notes.append((round(t, 6), round(t + length, 6), midi))
        t += length + rng.uniform(min_gap, max_gap)
        step = int(rng.integers(-4, 5))
        midi = int(np.clip(midi + step, midi_range[0], midi_range[1]))
    seq = NoteSequence.from_triples(notes, duration)
    return seq


def synth_song(seq: NoteSequence, seed: int = 0, duration: float | None = None,
               sample_rate: int = SAMPLE_RATE, video_rate: int = VIDEO_RATE,
               noise_level: float = 1e-3, jitter: float = 0.03):
    """Render a note sequence as a harmonic-tone "vocal" and a mouth-aperture track.

    Each note is four harmonics of its MIDI frequency under an attack / decay
    envelope. The visual track rises over 40 ms at each onset and falls over
    60 ms at each offset; it carries timing only, no pitch.

    Returns:
        ``(audio, visual, seq)``: a :class:`Waveform`, a ``(frames, 1)``
        array sampled at ``video_rate`` and the unchanged labels.
    """
    duration = seq.duration if duration is None else duration
    if duration is None:
        duration = max((n.offset for n in seq.notes), default=0.0)
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    audio = np.zeros(n)
    for note in seq.notes:
        lo = int(round(note.onset * sample_rate))
        hi = min(n, int(round(note.offset * sample_rate)))
        if hi <= lo:
            continue
        tt = np.arange(hi - lo) / sample_rate
        f0 = midi_to_hz(note.pitch)
        phase0 = rng.uniform(0, 2 * np.pi, size=4)
        tone = sum(np.sin(2 * np.pi * k * f0 * tt + phase0[k - 1]) / k for k in range(1, 5))
        dur = tt[-1] + 1.0 / sample_rate
        env = np.minimum(1.0, tt / ATTACK) * np.exp(-1.2 * tt) * np.minimum(1.0, (dur - tt) / RELEASE)
        audio[lo:hi] += 0.3 * rng.uniform(0.7, 1.0) * tone * env
    audio += noise_level * rng.standard_normal(n)

    frames = int(math.floor(duration * video_rate + 1e-9))
    centers = (np.arange(frames) + 0.5) / video_rate
    aperture = np.zeros(frames)
    for note in seq.notes:
        rise = np.clip((centers - note.onset) / VISUAL_RISE, 0.0, 1.0)
        fall = np.clip(1.0 - (centers - note.offset) / VISUAL_FALL, 0.0, 1.0)
        aperture = np.maximum(aperture, np.minimum(rise, fall))
    aperture += jitter * rng.standard_normal(frames)
    return Waveform(audio, sample_rate), aperture[:, None].astype(np.float32), seq
