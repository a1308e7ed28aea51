"""From a clean/noisy pair to the weight map P and every loss variant.

Synthesizes one utterance, corrupts it with white noise at -5 dB, and runs an
untrained speaker network and U-Net over the pair.  The intermediate maps
(noisy features X, mask M, enhanced E, activations, distance D, weights P)
are written as CSV and PGM heat maps to ``demo_out/weight_maps``.
"""

from pathlib import Path

import numpy as np

from gradw.diagnostics import diagnose_pair, write_diagnostics
from gradw.dsp import mel_features, mix_at_snr, synth_noise, synth_utterance
from gradw.enhance import UNet, UNetConfig
from gradw.speaker import SpeakerNet, SpeakerNetConfig

clean_wave = synth_utterance(speaker_id=3, duration_s=1.5, seed=11)
noisy_wave = mix_at_snr(clean_wave, synth_noise("white", 2.0, seed=12), snr_db=-5.0).mixture
clean = mel_features(clean_wave).values
noisy = mel_features(noisy_wave).values
print(f"features: {clean.shape[0]} frames x {clean.shape[1]} mel bins")

speaker = SpeakerNet(SpeakerNetConfig(), seed=0).freeze()
unet = UNet(UNetConfig(), seed=0)

maps = diagnose_pair(speaker, clean, noisy, unet, target=3)
print(f"activation grid T' x F' = {maps.p.shape}, P sums to {maps.p.sum():.9f}")
print(f"max |D| = {np.abs(maps.d).max():.4g}, P range {maps.p.min():.4f}..{maps.p.max():.4f}"
      f" (uniform {1 / maps.p.size:.4f})")
print("loss per variant:")
for name, value in maps.losses.items():
    print(f"  {name:11s} {value:.6g}" if isinstance(value, float) else f"  {name:11s} {value}")

out = Path("demo_out/weight_maps")
files = write_diagnostics(maps, out)
print(f"wrote {len(files)} files to {out}")

same = diagnose_pair(speaker, clean, clean)
print(f"identical inputs without a U-Net: max |D| = {np.abs(same.d).max()}, "
      f"P uniform: {np.allclose(same.p, 1 / same.p.size)}")
