"""Waveforms, log-mel features, SNR mixing and the synthetic speech/noise corpus.

All synthesis is a pure function of its arguments: randomness comes only from
``numpy.random.default_rng`` seeded with tuples built from the inputs.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

_SPEAKER_STREAM = 0x5EED
_UTTERANCE_STREAM = 0xA11CE
_NOISE_STREAM = 0x0015E
_BABBLE_ID_BASE = 100_000


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a nonempty 1-D sequence")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    win_length: int = 400
    hop_length: int = 160
    n_fft: int = 512
    n_mels: int = 24
    f_min: float = 40.0
    f_max: float = 7600.0

    def __post_init__(self):
        if not 0 <= self.f_min < self.f_max <= self.sample_rate / 2:
            raise ValueError("need 0 <= f_min < f_max <= sample_rate / 2")
        if self.n_mels < 2:
            raise ValueError("need at least 2 mel bins")
        if self.win_length > self.n_fft:
            raise ValueError("window longer than the FFT size")

    @property
    def frame_shift(self) -> float:
        return self.hop_length / self.sample_rate


@dataclass
class FeatureMap:
    """Nonnegative T x F log1p-mel features."""

    values: np.ndarray
    frame_shift: float = 0.01
    mel_config: MelConfig | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"feature map must be T x F, got shape {self.values.shape}")
        if np.any(self.values < 0):
            raise ValueError("feature maps are nonnegative")

    @property
    def shape(self):
        return self.values.shape

    def crop(self, start: int, frames: int) -> "FeatureMap":
        return FeatureMap(self.values[start:start + frames], self.frame_shift, self.mel_config)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_centers(cfg: MelConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    return pts[1:-1]


@lru_cache(maxsize=16)
def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """F x (n_fft/2+1) triangular weights, peak 1 at each center frequency."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def frame_count(n_samples: int, cfg: MelConfig) -> int:
    return 1 + (n_samples - cfg.win_length) // cfg.hop_length


def mel_features(w: Waveform, cfg: MelConfig = MelConfig()) -> FeatureMap:
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"waveform rate {w.sample_rate} != feature rate {cfg.sample_rate}")
    if len(w) < cfg.win_length:
        raise ValueError(f"waveform too short: {len(w)} samples < window {cfg.win_length}")
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, cfg.win_length)[::cfg.hop_length]
    window = np.hanning(cfg.win_length + 1)[:-1]
    power = np.abs(np.fft.rfft(frames * window, cfg.n_fft, axis=1)) ** 2
    mel = power @ mel_filterbank(cfg).T
    return FeatureMap(np.log1p(mel), cfg.frame_shift, cfg)


def signal_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def measure_snr(clean: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * np.log10(signal_power(clean) / signal_power(noise))


def fit_length(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Random crop when longer than ``n``, wraparound loop when shorter."""
    if x.size > n:
        start = int(rng.integers(0, x.size - n + 1))
        return x[start:start + n]
    if x.size < n:
        return np.resize(x, n)
    return x


class Mixture(NamedTuple):
    mixture: Waveform
    noise: np.ndarray
    alpha: float
    gain: float


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, seed: int = 0,
               peak_normalize: bool = False) -> Mixture:
    """Return clean + alpha * noise with the noise fitted to the clean length.

    ``noise`` in the result is the scaled noise term actually added; ``gain``
    is the peak-normalization factor applied to the mixture (1.0 when off).
    """
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("sample rates differ")
    n = fit_length(noise.samples, len(clean), np.random.default_rng([_NOISE_STREAM, seed]))
    p_clean, p_noise = signal_power(clean.samples), signal_power(n)
    if p_clean <= 0 or p_noise <= 0:
        raise ValueError("clean and noise must both have positive power")
    alpha = float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))
    scaled = alpha * n
    mixed = clean.samples + scaled
    gain = 1.0
    if peak_normalize:
        gain = 1.0 / max(np.max(np.abs(mixed)), 1e-12)
        mixed = mixed * gain
    return Mixture(Waveform(mixed, clean.sample_rate), scaled, alpha, gain)


def make_babble(sources: Sequence[Waveform], per_source_snr_db: Sequence[float], reference: Waveform,
                seed: int = 0, min_sources: int = 3, max_sources: int = 8) -> Waveform:
    """Sum of sources, each scaled to its own SNR against ``reference``."""
    if len(sources) != len(per_source_snr_db):
        raise ValueError("sources and SNR lists differ in length")
    if not min_sources <= len(sources) <= max_sources:
        raise ValueError(f"need {min_sources}..{max_sources} babble sources, got {len(sources)}")
    total = np.zeros(len(reference))
    for i, (src, snr) in enumerate(zip(sources, per_source_snr_db)):
        total += mix_at_snr(reference, src, snr, seed=_sub_seed(seed, i)).noise
    return Waveform(total, reference.sample_rate)


def _sub_seed(seed: int, i: int) -> int:
    return int(np.random.default_rng([seed, i, 7]).integers(0, 2**31))


# ---------------------------------------------------------------------------
# synthetic speakers and noise


@dataclass(frozen=True)
class VocalSignature:
    f0: float
    tilt: float
    harmonic_jitter: tuple
    formants: tuple  # ((center Hz, bandwidth Hz, gain), ...)


@lru_cache(maxsize=4096)
def vocal_signature(speaker_id: int) -> VocalSignature:
    rng = np.random.default_rng([_SPEAKER_STREAM, speaker_id])
    f0 = float(rng.uniform(90.0, 260.0))
    tilt = float(rng.uniform(0.6, 1.4))
    jitter = tuple(rng.uniform(0.4, 1.6, 64).round(6))
    formants = (
        (float(rng.uniform(300, 900)), float(rng.uniform(60, 160)), float(rng.uniform(4.0, 9.0))),
        (float(rng.uniform(1000, 2600)), float(rng.uniform(90, 220)), float(rng.uniform(2.0, 6.0))),
    )
    return VocalSignature(f0, tilt, jitter, formants)


def synth_utterance(speaker_id: int, duration_s: float, seed: int, sample_rate: int = 16000) -> Waveform:
    """Harmonic "voice" with a fixed per-speaker signature.

    The speaker id fixes the mean pitch, spectral tilt, per-harmonic jitter and
    two formant resonances; the seed varies the pitch contour, syllable
    envelope and loudness.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    sig = vocal_signature(speaker_id)
    rng = np.random.default_rng([_UTTERANCE_STREAM, speaker_id, seed])
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    # slow pitch contour: random low-order cosine series around the speaker f0
    contour = np.zeros(n)
    for k in range(1, 4):
        contour += rng.normal(0, 0.04 / k) * np.cos(2 * np.pi * k * t / max(duration_s, 1e-3) + rng.uniform(0, 2 * np.pi))
    f0 = sig.f0 * (1.0 + contour) * rng.uniform(0.95, 1.05)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    n_harm = min(len(sig.harmonic_jitter), int((sample_rate / 2 - 200) // (sig.f0 * 1.15)))
    h = np.arange(1, n_harm + 1)
    out = np.zeros(n)
    for k in h:
        fk = k * f0
        amp = sig.harmonic_jitter[k - 1] * k ** (-sig.tilt)
        res = 1.0
        for fc, bw, g in sig.formants:
            res = res + g / (1.0 + ((fk - fc) / bw) ** 2)
        amp = amp * res * (fk < sample_rate / 2 - 100)
        out += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    # syllable envelope: smoothed on/off segments
    env = np.zeros(n)
    pos = int(rng.integers(0, sample_rate // 20))
    while pos < n:
        length = int(rng.uniform(0.12, 0.35) * sample_rate)
        seg = np.hanning(length) ** 0.5 * rng.uniform(0.5, 1.0)
        end = min(n, pos + length)
        env[pos:end] = np.maximum(env[pos:end], seg[: end - pos])
        pos = end + int(rng.uniform(0.02, 0.12) * sample_rate)
    out *= env
    out += 0.002 * rng.standard_normal(n)  # breath floor
    peak = np.max(np.abs(out))
    out *= rng.uniform(0.3, 0.6) / peak
    return Waveform(out, sample_rate)


NOISE_KINDS = ("white", "tonal", "babble_source")


def synth_noise(kind: str, duration_s: float, seed: int, sample_rate: int = 16000) -> Waveform:
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration_s * sample_rate))
    rng = np.random.default_rng([_NOISE_STREAM, NOISE_KINDS.index(kind) if kind in NOISE_KINDS else -1, seed])
    if kind == "white":
        return Waveform(0.1 * rng.standard_normal(n), sample_rate)
    if kind == "tonal":
        t = np.arange(n) / sample_rate
        freqs = rng.uniform(150.0, 4000.0, 3)
        amps = rng.uniform(0.3, 1.0, 3)
        x = sum(a * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) for a, f in zip(amps, freqs))
        return Waveform(0.1 * x, sample_rate)
    if kind == "babble_source":
        speaker = _BABBLE_ID_BASE + int(rng.integers(0, 10_000))
        return synth_utterance(speaker, duration_s, int(rng.integers(0, 2**31)), sample_rate)
    raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")


# ---------------------------------------------------------------------------
# WAV and CSV


def write_wav(path, w: Waveform) -> float:
    """Write 16-bit mono PCM; returns the gain applied to avoid clipping."""
    peak = float(np.max(np.abs(w.samples)))
    gain = 1.0 if peak <= 1.0 else 1.0 / peak
    pcm = np.clip(np.round(w.samples * gain * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
    return gain


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono 16-bit PCM")
        rate = f.getframerate()
        pcm = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32767.0, rate)


def write_feature_csv(path, values: np.ndarray) -> None:
    """Rows are frames, columns mel bins (or any 2-D grid)."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    lines = [",".join(f"{v:.9g}" for v in row) for row in values]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_feature_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
