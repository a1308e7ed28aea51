"""Desk-scale corpora and the noise-augmentation recipes built on :mod:`gradw.dsp`."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsp import (Waveform, make_babble, mix_at_snr, read_wav, synth_noise, synth_utterance, write_wav)


@dataclass
class Utterance:
    utt_id: str
    speaker_id: int
    wave: Waveform


@dataclass
class Corpus:
    utterances: list[Utterance]
    noise: dict[str, list[Waveform]] = field(default_factory=dict)

    @property
    def speakers(self) -> list[int]:
        return sorted({u.speaker_id for u in self.utterances})

    def by_speaker(self, speakers: Sequence[int]) -> "Corpus":
        keep = set(speakers)
        return Corpus([u for u in self.utterances if u.speaker_id in keep], self.noise)

    def lookup(self) -> dict[str, Waveform]:
        return {u.utt_id: u.wave for u in self.utterances}


def synth_corpus(n_speakers: int = 8, utts_per_speaker: int = 20, duration_s: float = 2.0,
                 noise_clips: int = 40, noise_duration_s: float = 4.0, seed: int = 0,
                 first_speaker: int = 0) -> Corpus:
    """Speakers ``first_speaker..`` with seeded utterances plus a mixed noise pool."""
    utts = []
    for s in range(first_speaker, first_speaker + n_speakers):
        for k in range(utts_per_speaker):
            useed = seed * 1_000_003 + k
            utts.append(Utterance(f"spk{s:03d}_utt{k:03d}", s, synth_utterance(s, duration_s, useed)))
    noise = {"white": [], "tonal": [], "babble_source": []}
    kinds = list(noise)
    for i in range(noise_clips):
        kind = kinds[i % len(kinds)]
        noise[kind].append(synth_noise(kind, noise_duration_s, seed * 1_000_003 + i))
    return Corpus(utts, noise)


def write_corpus(corpus: Corpus, out_dir) -> Path:
    """WAV files plus a manifest of ``utt_id speaker_id path duration`` lines."""
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    (out_dir / "noise").mkdir(parents=True, exist_ok=True)
    lines = []
    for u in corpus.utterances:
        rel = Path("wav") / f"{u.utt_id}.wav"
        write_wav(out_dir / rel, u.wave)
        lines.append(f"{u.utt_id} {u.speaker_id} {rel.as_posix()} {u.wave.duration:.4f}")
    for kind, clips in corpus.noise.items():
        for i, w in enumerate(clips):
            rel = Path("noise") / f"{kind}_{i:03d}.wav"
            write_wav(out_dir / rel, w)
            lines.append(f"noise:{kind}_{i:03d} -1 {rel.as_posix()} {w.duration:.4f}")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", newline="\n")
    return manifest


def read_corpus(manifest) -> Corpus:
    manifest = Path(manifest)
    base = manifest.parent
    utts, noise = [], {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        uid, spk, rel, _ = line.split()
        w = read_wav(base / rel)
        if uid.startswith("noise:"):
            kind = uid[len("noise:"):].rsplit("_", 1)[0]
            noise.setdefault(kind, []).append(w)
        else:
            utts.append(Utterance(uid, int(spk), w))
    return Corpus(utts, noise)


# ---------------------------------------------------------------------------
# augmentation recipes


def _pick(rng, pool):
    return pool[int(rng.integers(len(pool)))]


def _babble(rng, reference: Waveform, pool, n_range, snr_choices, seed) -> Waveform:
    k = int(rng.integers(n_range[0], n_range[1] + 1))
    sources = [_pick(rng, pool) for _ in range(k)]
    snrs = [float(rng.choice(snr_choices)) for _ in range(k)]
    return make_babble(sources, snrs, reference, seed=seed, min_sources=min(3, k))


@dataclass(frozen=True)
class AugmentPolicy:
    """Speaker-net pretraining augmentation: clean / noise-or-music / babble."""

    clean_ratio: float = 0.4
    noise_ratio: float = 0.3
    babble_ratio: float = 0.3
    noise_snrs: tuple = (0.0, 5.0, 10.0, 15.0)
    music_snrs: tuple = (5.0, 8.0, 10.0, 15.0)
    babble_sources: tuple = (3, 7)
    babble_snrs: tuple = (13.0, 15.0, 17.0, 20.0)

    def apply(self, w: Waveform, noise: dict, rng: np.random.Generator) -> Waveform:
        u = rng.uniform()
        seed = int(rng.integers(0, 2**31))
        if u < self.clean_ratio:
            return w
        if u < self.clean_ratio + self.noise_ratio:
            if rng.uniform() < 0.5:
                return mix_at_snr(w, _pick(rng, noise["white"]), float(rng.choice(self.noise_snrs)), seed).mixture
            return mix_at_snr(w, _pick(rng, noise["tonal"]), float(rng.choice(self.music_snrs)), seed).mixture
        babble = _babble(rng, w, noise["babble_source"], self.babble_sources, self.babble_snrs, seed)
        return Waveform(w.samples + babble.samples, w.sample_rate)


@dataclass(frozen=True)
class NoisyRecipe:
    """Enhancement-training corruption: noise, music or babble, mixed at a uniform SNR.

    Babble is first built from its sources at the per-source SNRs, then scaled
    as a whole like any other noise.
    """

    snr_range: tuple = (-10.0, 0.0)
    babble_sources: tuple = (5, 8)
    babble_snrs: tuple = (5.0, 8.0, 10.0, 13.0, 15.0)

    def apply(self, w: Waveform, noise: dict, rng: np.random.Generator) -> Waveform:
        kind = int(rng.integers(3))
        seed = int(rng.integers(0, 2**31))
        snr = float(rng.uniform(*self.snr_range))
        if kind < 2:
            src = _pick(rng, noise["white"] if kind == 0 else noise["tonal"])
        else:
            src = _babble(rng, w, noise["babble_source"], self.babble_sources, self.babble_snrs, seed)
        return mix_at_snr(w, src, snr, seed).mixture


def corrupt_at_snr(w: Waveform, kind: str, snr_db: float, noise: dict, rng: np.random.Generator) -> Waveform:
    """Test-condition corruption: one noise kind scaled to an exact overall SNR."""
    seed = int(rng.integers(0, 2**31))
    if kind == "mixed":
        kind = ("white", "tonal", "babble")[int(rng.integers(3))]
    if kind == "babble":
        src = _babble(rng, w, noise["babble_source"], (5, 8), (5.0, 8.0, 10.0, 13.0, 15.0), seed)
    elif kind in ("white", "tonal"):
        src = _pick(rng, noise[kind])
    else:
        raise ValueError(f"unknown test noise kind {kind!r}")
    return mix_at_snr(w, src, snr_db, seed).mixture
