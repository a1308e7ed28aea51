"""Enhancement training: noisy/clean feature pairs, Adam with warmup, checkpoints."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tape, Tensor, backward_to
from .corpus import Corpus, NoisyRecipe
from .dsp import MelConfig, mel_features
from .enhance import UNet, enhance
from .loss import compose_loss, get_variant
from .optim import Adam, AdamState, adam_step, lr_schedule
from .speaker import SpeakerNet

__all__ = ["TrainConfig", "TrainLog", "TrainResult", "TrainingDiverged", "train_enhancer",
           "make_pairs", "lr_schedule", "adam_step", "AdamState"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    warmup_epochs: int = 5
    epochs: int = 10
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    variant: str = "grad_w"
    crop_frames: int = 200
    snr_low: float = -10.0
    snr_high: float = 0.0
    babble_snrs: tuple = (5.0, 8.0, 10.0, 13.0, 15.0)
    babble_min_sources: int = 5
    babble_max_sources: int = 8
    pairs_per_utterance: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs]")
        get_variant(self.variant)

    @property
    def recipe(self) -> NoisyRecipe:
        return NoisyRecipe((self.snr_low, self.snr_high), (self.babble_min_sources, self.babble_max_sources),
                           tuple(self.babble_snrs))


@dataclass
class TrainLog:
    records: list = field(default_factory=list)  # (epoch, train_loss, val_loss, lr, seconds)

    def append(self, epoch, train_loss, val_loss, lr, seconds):
        if self.records and epoch <= self.records[-1][0]:
            raise ValueError("epoch indices must increase")
        self.records.append((epoch, train_loss, val_loss, lr, seconds))

    def column(self, name: str) -> list:
        i = ("epoch", "train_loss", "val_loss", "lr", "seconds").index(name)
        return [r[i] for r in self.records]

    def to_csv(self, include_seconds: bool = True) -> str:
        head = "epoch,train_loss,val_loss,lr,seconds" if include_seconds else "epoch,train_loss,val_loss,lr"
        rows = [head]
        for e, tl, vl, lr, sec in self.records:
            row = f"{e},{tl:.9g},{vl:.9g},{lr:.9g}"
            rows.append(row + (f",{sec:.3f}" if include_seconds else ""))
        return "\n".join(rows) + "\n"

    def write_csv(self, path, include_seconds: bool = True) -> None:
        Path(path).write_text(self.to_csv(include_seconds), newline="\n")

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        out = cls()
        lines = Path(path).read_text().splitlines()[1:]
        for line in lines:
            vals = line.split(",")
            sec = float(vals[4]) if len(vals) > 4 else 0.0
            out.append(int(vals[0]), float(vals[1]), float(vals[2]), float(vals[3]), sec)
        return out


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    unet: UNet
    log: TrainLog
    best_epoch: int
    checkpoints: list = field(default_factory=list)


def make_pairs(corpus: Corpus, recipe: NoisyRecipe, crop_frames: int, rng: np.random.Generator,
               mel: MelConfig = MelConfig(), repeats: int = 1):
    """Aligned (clean, noisy) feature crops and speaker labels for one pass."""
    clean, noisy, labels = [], [], []
    for _ in range(repeats):
        for u in corpus.utterances:
            x = recipe.apply(u.wave, corpus.noise, rng)
            r = mel_features(u.wave, mel).values
            xv = mel_features(x, mel).values
            if r.shape[0] < crop_frames:
                raise ValueError(f"{u.utt_id}: {r.shape[0]} frames is shorter than the crop ({crop_frames})")
            start = int(rng.integers(0, r.shape[0] - crop_frames + 1))
            clean.append(r[start:start + crop_frames])
            noisy.append(xv[start:start + crop_frames])
            labels.append(u.speaker_id)
    return np.stack(clean), np.stack(noisy), np.asarray(labels)


def _batch_loss(unet, speaker, clean, noisy, labels, variant):
    x = Tensor(noisy[:, None])
    m = unet(x)
    e = enhance(x, m)
    return compose_loss(speaker, clean[:, None], e, labels, variant)


def _validate(unet, speaker, val, batch_size) -> float:
    if val is None:
        return float("nan")
    clean, noisy, labels = val
    unet.eval()
    total = 0.0
    for s in range(0, len(labels), batch_size):
        sl = slice(s, s + batch_size)
        loss = _batch_loss(unet, speaker, clean[sl], noisy[sl], labels[sl], "equal_w")
        total += loss.item() * len(labels[sl])
    unet.train()
    return total / len(labels)


def _dump_batch(out_dir, epoch, step, clean, noisy, labels) -> Path | None:
    if out_dir is None:
        return None
    path = Path(out_dir) / "diagnostics" / f"nonfinite_e{epoch}_s{step}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, clean=clean, noisy=noisy, labels=labels)
    return path


def train_enhancer(unet: UNet, speaker: SpeakerNet, corpus: Corpus, config: TrainConfig,
                   val_corpus: Corpus | None = None, out_dir=None, mel: MelConfig = MelConfig(),
                   tag: str | None = None) -> TrainResult:
    """Train ``unet`` against the frozen ``speaker`` with the configured loss variant.

    Writes ``checkpoints/<tag>_epochNN.gwckpt``, ``<tag>_best.gwckpt``,
    ``reports/<tag>_trainlog.csv`` and ``reports/<tag>_timing.csv`` under
    ``out_dir`` when given.
    """
    if not speaker.frozen:
        raise ValueError("the speaker model must be frozen before enhancement training")
    k = speaker.config.num_speakers
    bad = [s for s in corpus.speakers if not 0 <= s < k]
    if bad:
        raise ValueError(f"corpus speakers {bad} are outside the speaker model's {k} classes")
    variant = get_variant(config.variant)
    tag = tag or variant.name
    rng = np.random.default_rng([config.seed, 31])
    val = None
    if val_corpus is not None and val_corpus.utterances:
        val = make_pairs(val_corpus, config.recipe, config.crop_frames,
                         np.random.default_rng([config.seed, 37]), mel)
        val = (val[0], val[1], np.zeros_like(val[2]))  # equal_w ignores targets

    params = unet.params()
    opt = Adam(params, (config.beta1, config.beta2), config.adam_eps)
    history = TrainLog()
    best = (math.inf, 0)
    ckpts = []
    unet.train()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        clean, noisy, labels = make_pairs(corpus, config.recipe, config.crop_frames, rng, mel,
                                          config.pairs_per_utterance)
        order = rng.permutation(len(labels))
        clean, noisy, labels = clean[order], noisy[order], labels[order]
        steps = math.ceil(len(labels) / config.batch_size)
        total, lr = 0.0, config.learning_rate
        for s in range(steps):
            sl = slice(s * config.batch_size, (s + 1) * config.batch_size)
            lr = lr_schedule(config.learning_rate, config.warmup_epochs, epoch, s, steps)
            with Tape():
                loss = _batch_loss(unet, speaker, clean[sl], noisy[sl], labels[sl], variant)
                if not np.isfinite(loss.item()):
                    dump = _dump_batch(out_dir, epoch + 1, s, clean[sl], noisy[sl], labels[sl])
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1} step {s}; batch dumped to {dump}")
                grads = backward_to(loss, params=params)
            opt.step(grads.params, lr)
            total += loss.item() * len(labels[sl])
        train_loss = total / len(labels)
        val_loss = _validate(unet, speaker, val, config.batch_size)
        history.append(epoch + 1, train_loss, val_loss, lr, time.perf_counter() - t0)
        log.info("%s epoch %d train %.5g val %.5g lr %.3g", tag, epoch + 1, train_loss, val_loss, lr)
        meta = {"frozen": False, "epoch": epoch + 1, "variant": variant.name}
        if out_dir is not None:
            ckpts.append(checkpoint.save_model(Path(out_dir) / "checkpoints" / f"{tag}_epoch{epoch + 1:02d}.gwckpt",
                                               unet, "unet", config.seed, meta))
        score = val_loss if val is not None else train_loss
        if score < best[0]:
            best = (score, epoch + 1)
            best_state = {k: v.copy() for k, v in unet.state().items()}
    unet.load_state(best_state)
    unet.eval()
    if out_dir is not None:
        meta = {"frozen": False, "epoch": best[1], "variant": variant.name}
        ckpts.append(checkpoint.save_model(Path(out_dir) / "checkpoints" / f"{tag}_best.gwckpt",
                                           unet, "unet", config.seed, meta))
        reports = Path(out_dir) / "reports"
        reports.mkdir(parents=True, exist_ok=True)
        # wall time lives apart so the log itself is byte-reproducible
        history.write_csv(reports / f"{tag}_trainlog.csv", include_seconds=False)
        timing = ["epoch,seconds"] + [f"{r[0]},{r[4]:.3f}" for r in history.records]
        (reports / f"{tag}_timing.csv").write_text("\n".join(timing) + "\n", newline="\n")
    return TrainResult(unet, history, best[1], ckpts)
