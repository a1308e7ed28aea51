"""Residual speaker-recognition network: features -> activation map -> embedding -> logits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward_to
from .corpus import AugmentPolicy, Corpus
from .dsp import FeatureMap, MelConfig, mel_features
from .nn import BatchNorm2d, Conv2d, Linear, Module
from .optim import Adam, lr_schedule

log = logging.getLogger(__name__)

INPUT_NORM_EPS = 1e-4


@dataclass(frozen=True)
class SpeakerNetConfig:
    n_mels: int = 24
    first_conv_channels: int = 8
    block_depths: tuple = (2, 2, 2, 2)
    embedding_dim: int = 32
    num_speakers: int = 8
    input_norm: bool = False  # per-utterance mean/variance normalization over the whole (t, f) map

    def __post_init__(self):
        if len(self.block_depths) != 4:
            raise ValueError("block_depths must list four blocks")
        if any(d < 2 or d % 2 for d in self.block_depths):
            raise ValueError("each block depth must be an even number of conv layers >= 2")
        if self.num_speakers < 2:
            raise ValueError("need at least two speakers")

    @property
    def block_channels(self) -> tuple:
        c = self.first_conv_channels
        return tuple(c * 2 ** i for i in range(4))


class BasicUnit(Module):
    """conv-BN-ReLU-conv-BN plus shortcut, then ReLU."""

    def __init__(self, c_in, c_out, stride, rng):
        super().__init__()
        self.conv1 = Conv2d(c_in, c_out, 3, stride, rng=rng)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, 1, rng=rng)
        self.bn2 = BatchNorm2d(c_out)
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, stride, padding=0, rng=rng)
            self.proj_bn = BatchNorm2d(c_out)
        else:
            self.proj = None

    def forward(self, x):
        h = ad.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        short = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return ad.relu(h + short)


class ConvBlock(Module):
    """``depth`` conv layers as depth/2 residual units; the first halves T and F."""

    def __init__(self, c_in, c_out, depth, rng):
        super().__init__()
        self.units = [BasicUnit(c_in if i == 0 else c_out, c_out, 2 if i == 0 else 1, rng)
                      for i in range(depth // 2)]

    def forward(self, x):
        for u in self.units:
            x = u(x)
        return x


class FrameEncoder(Module):
    """Stem conv + four downsampling blocks; shared architecture of both networks."""

    def __init__(self, first_channels: int, block_depths, rng):
        super().__init__()
        self.stem = Conv2d(1, first_channels, 3, 1, rng=rng)
        self.stem_bn = BatchNorm2d(first_channels)
        chans = [first_channels * 2 ** i for i in range(4)]
        self.blocks = [ConvBlock(first_channels if i == 0 else chans[i - 1], chans[i], d, rng)
                       for i, d in enumerate(block_depths)]

    def forward(self, x) -> list:
        """Return [stem output, block1, ..., block4] outputs."""
        outs = [ad.relu(self.stem_bn(self.stem(x)))]
        for b in self.blocks:
            outs.append(b(outs[-1]))
        return outs


@dataclass
class ForwardTrace:
    activation: Tensor
    embedding: Tensor
    logits: Tensor
    target_logit_index: int | None = None


class SpeakerNet(Module):
    def __init__(self, config: SpeakerNetConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng([seed, 17])
        self.encoder = FrameEncoder(config.first_conv_channels, config.block_depths, rng)
        c_out = config.block_channels[-1]
        self.embed_layer = Linear(2 * c_out, config.embedding_dim, rng=rng)
        self.classifier = Linear(config.embedding_dim, config.num_speakers, rng=rng)

    def forward(self, x: Tensor, tap: bool = False) -> ForwardTrace:
        """``x`` is N x 1 x T x F; the activation map is tapped on request."""
        if x.shape[-1] != self.config.n_mels:
            raise ad.ShapeError(f"feature width {x.shape[-1]} != expected {self.config.n_mels} mel bins")
        if self.config.input_norm:
            x = ad.normalize(x, axes=(2, 3), eps=INPUT_NORM_EPS)
        act = self.encoder(x)[-1]
        if tap:
            tape = ad.current_tape()
            if tape is None or act.node is None:
                raise ad.TapeError("tapping the activation map needs an active tape")
            tape.tap(act)
        pooled = ad.mean_and_std(act, axes=(2, 3))
        emb = self.embed_layer(pooled)
        return ForwardTrace(act, emb, self.classifier(emb))


def activation_shape(config: SpeakerNetConfig, frames: int, bins: int) -> tuple:
    t, f = frames, bins
    for _ in range(4):
        t, f = math.ceil(t / 2), math.ceil(f / 2)
    return config.block_channels[-1], t, f


def as_batch(features) -> Tensor:
    """FeatureMap / T x F array / N x T x F array -> N x 1 x T x F tensor."""
    if isinstance(features, Tensor):
        return features if features.ndim == 4 else features.reshape((1, 1) + features.shape[-2:])
    if isinstance(features, FeatureMap):
        features = features.values
    arr = np.asarray(features)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    return Tensor(arr)


def speaker_forward(model: SpeakerNet, features, stats_mode: str = "eval", tap: bool = False,
                    target: int | None = None) -> ForwardTrace:
    if stats_mode == "train":
        model.train()
    elif stats_mode == "eval":
        model.eval()
    else:
        raise ValueError(f"unknown stats mode {stats_mode!r}")
    if target is not None and not 0 <= target < model.config.num_speakers:
        raise IndexError(f"target speaker {target} out of range")
    trace = model(as_batch(features), tap=tap)
    trace.target_logit_index = target
    return trace


def embed(model: SpeakerNet, features, normalize: bool = False) -> np.ndarray:
    if model.training:
        raise RuntimeError("embed needs an eval-mode or frozen model")
    e = model(as_batch(features)).embedding.data.astype(np.float64)
    if normalize:
        e = e / np.linalg.norm(e, axis=-1, keepdims=True)
    return e[0] if e.shape[0] == 1 else e


# ---------------------------------------------------------------------------
# pretraining


@dataclass
class PretrainLog:
    epochs: list = field(default_factory=list)  # (epoch, loss, accuracy, lr)

    @property
    def final_accuracy(self) -> float:
        return self.epochs[-1][2]


def random_crop(values: np.ndarray, frames: int, rng: np.random.Generator) -> np.ndarray:
    if values.shape[0] < frames:
        raise ValueError(f"utterance has {values.shape[0]} frames, crop needs {frames}")
    start = int(rng.integers(0, values.shape[0] - frames + 1))
    return values[start:start + frames]


def pretrain_speaker(config: SpeakerNetConfig, corpus: Corpus, augment: AugmentPolicy | None = None,
                     epochs: int = 30, seed: int = 0, batch_size: int = 16, learning_rate: float = 2e-3,
                     warmup_epochs: int = 2, crop_frames: int = 100,
                     mel: MelConfig = MelConfig()) -> tuple[SpeakerNet, PretrainLog]:
    """Cross-entropy training on augmented crops; returns a frozen model."""
    if not corpus.utterances:
        raise ValueError("empty corpus")
    speakers = corpus.speakers
    if len(speakers) < 2:
        raise ValueError("pretraining needs at least two speakers")
    counts = {s: 0 for s in speakers}
    for u in corpus.utterances:
        counts[u.speaker_id] += 1
    if min(counts.values()) < 2:
        raise ValueError("every speaker needs at least two utterances")
    if config.num_speakers != len(speakers) or speakers != list(range(len(speakers))):
        raise ValueError("corpus speakers must be 0..num_speakers-1")
    augment = augment or AugmentPolicy()

    model = SpeakerNet(config, seed=seed)
    params = model.params()
    opt = Adam(params)
    rng = np.random.default_rng([seed, 23])
    n = len(corpus.utterances)
    steps = math.ceil(n / batch_size)
    history = PretrainLog()
    for epoch in range(epochs):
        model.train()
        order = rng.permutation(n)
        feats, labels = [], []
        for i in order:
            u = corpus.utterances[i]
            w = augment.apply(u.wave, corpus.noise, rng)
            feats.append(random_crop(mel_features(w, mel).values, crop_frames, rng))
            labels.append(u.speaker_id)
        feats = np.stack(feats)
        labels = np.asarray(labels)
        tot_loss = tot_correct = 0.0
        lr = learning_rate
        for s in range(steps):
            sl = slice(s * batch_size, (s + 1) * batch_size)
            lr = lr_schedule(learning_rate, warmup_epochs, epoch, s, steps)
            with Tape():
                trace = model(as_batch(feats[sl]))
                loss = ad.cross_entropy(trace.logits, labels[sl])
                grads = backward_to(loss, params=params)
            opt.step(grads.params, lr)
            k = labels[sl].size
            tot_loss += loss.item() * k
            tot_correct += float(np.sum(trace.logits.data.argmax(axis=1) == labels[sl]))
        history.epochs.append((epoch + 1, tot_loss / n, tot_correct / n, lr))
        log.info("pretrain epoch %d loss %.4f acc %.3f", epoch + 1, tot_loss / n, tot_correct / n)
    model.freeze()
    return model, history
