"""Masking U-Net: noisy features -> mask in (0, 1) -> enhanced features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dsp import FeatureMap
from .nn import Conv2d, ConvTranspose2d, InstanceNorm2d, Module
from .speaker import FrameEncoder, as_batch

MIN_FRAMES = 16


@dataclass(frozen=True)
class UNetConfig:
    n_mels: int = 24
    first_conv_channels: int = 8
    block_depths: tuple = (2, 2, 2, 2)
    decoder_depths: tuple = (2, 2, 2)
    mask_bias_init: float = 0.0  # initial mask is about sigmoid(mask_bias_init)

    def __post_init__(self):
        if len(self.block_depths) != 4 or any(d < 2 or d % 2 for d in self.block_depths):
            raise ValueError("encoder needs four blocks of even depth >= 2")
        if len(self.decoder_depths) != len(self.block_depths) - 1 or any(d < 1 for d in self.decoder_depths):
            raise ValueError("decoder needs three blocks of depth >= 1")


@dataclass
class Mask:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if np.any(self.values <= 0) or np.any(self.values >= 1):
            raise ValueError("mask entries must lie strictly inside (0, 1)")


class DeconvBlock(Module):
    """Upsample d, concatenate the encoder skip s, two convs with a residual path.

    The first transposed conv doubles T and F (exact extent restored from the
    encoder record); any further ones keep the size.  Each is followed by
    instance norm and ReLU.
    """

    def __init__(self, c_in, c_out, depth, rng):
        super().__init__()
        self.ups = [ConvTranspose2d(c_in if i == 0 else c_out, c_out, 3, 2 if i == 0 else 1, rng=rng)
                    for i in range(depth)]
        self.up_norms = [InstanceNorm2d(c_out) for _ in range(depth)]
        self.conv1 = Conv2d(2 * c_out, c_out, 3, 1, rng=rng)
        self.norm1 = InstanceNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, 1, rng=rng)
        self.norm2 = InstanceNorm2d(c_out)

    def forward(self, d, s):
        size = s.shape[2:]
        for i, (up, norm) in enumerate(zip(self.ups, self.up_norms)):
            d = ad.relu(norm(up(d, size=size)))
        h = ad.concat([d, s], axis=1)
        h = ad.relu(self.norm1(self.conv1(h)))
        h = self.norm2(self.conv2(h))
        return ad.relu(h + d)


class UNet(Module):
    def __init__(self, config: UNetConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng([seed, 29])
        self.encoder = FrameEncoder(config.first_conv_channels, config.block_depths, rng)
        chans = [config.first_conv_channels * 2 ** i for i in range(4)]
        # decoder i maps encoder level (3 - i) up to level (2 - i)
        self.decoder = [DeconvBlock(chans[3 - i], chans[2 - i], depth, rng)
                        for i, depth in enumerate(config.decoder_depths)]
        self.head = ConvTranspose2d(chans[0], 1, 3, 2, rng=rng, bias=True)
        self.head.bias.data[:] = config.mask_bias_init

    def forward(self, x: Tensor) -> Tensor:
        """N x 1 x T x F noisy features -> N x 1 x T x F mask."""
        if x.shape[-1] != self.config.n_mels:
            raise ad.ShapeError(f"feature width {x.shape[-1]} != expected {self.config.n_mels} mel bins")
        if x.shape[-2] < MIN_FRAMES:
            raise ad.ShapeError(f"need at least {MIN_FRAMES} frames, got {x.shape[-2]}")
        stem, *levels = self.encoder(x)
        d = levels[-1]
        for i, block in enumerate(self.decoder):
            d = block(d, levels[2 - i])
        return ad.sigmoid(self.head(d, size=x.shape[2:]))


def estimate_mask(unet: UNet, noisy) -> Mask:
    """Mask for one utterance (eval-mode statistics)."""
    unet.eval()
    m = unet(as_batch(noisy))
    return Mask(m.data[0, 0])


def enhance(noisy, mask):
    """Elementwise E = M * X for FeatureMap/Mask pairs or tensors."""
    if isinstance(noisy, Tensor) or isinstance(mask, Tensor):
        if tuple(noisy.shape) != tuple(mask.shape):
            raise ad.ShapeError(f"mask shape {mask.shape} != feature shape {noisy.shape}")
        return ad.mul(mask, noisy)
    x = noisy.values if isinstance(noisy, FeatureMap) else np.asarray(noisy)
    m = mask.values if isinstance(mask, Mask) else np.asarray(mask)
    if x.shape != m.shape:
        raise ad.ShapeError(f"mask shape {m.shape} != feature shape {x.shape}")
    out = x * m
    if isinstance(noisy, FeatureMap):
        return FeatureMap(out, noisy.frame_shift, noisy.mel_config)
    return out
