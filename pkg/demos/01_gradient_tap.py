"""Gradient taps: dy/dA for an intermediate activation, checked against finite differences.

A small speaker network runs in 64-bit mode.  One backward pass returns the
gradient of a target logit with respect to the last activation map; we then
perturb A entry by entry and re-run only the pooling head to confirm it.
"""

import numpy as np

from gradw import autodiff as ad
from gradw.autodiff import Tape, Tensor, backward_to
from gradw.speaker import SpeakerNet, SpeakerNetConfig

with ad.precision(np.float64):
    net = SpeakerNet(SpeakerNetConfig(n_mels=24, first_conv_channels=2, num_speakers=3, embedding_dim=6),
                     seed=0).freeze()
    x = np.random.default_rng(0).gamma(2.0, 0.5, (1, 1, 48, 24))
    target = 2

    with Tape():
        trace = net(Tensor(x), tap=True)
        y = ad.sum_over(trace.logits[:, target])
        g = backward_to(y, taps=[trace.activation]).taps[trace.activation]
    a = trace.activation.data
    print(f"activation map A: {a.shape}, target logit y = {y.item():.6f}")

    def head(a_values):
        emb = net.embed_layer(ad.mean_and_std(Tensor(a_values), axes=(2, 3)))
        return float(net.classifier(emb).data[0, target])

    h = 1e-5
    fd = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        up, down = a.copy(), a.copy()
        up[idx] += h
        down[idx] -= h
        fd[idx] = (head(up) - head(down)) / (2 * h)

    err = np.linalg.norm(g - fd) / np.linalg.norm(fd)
    print(f"tap gradient vs central differences: relative error {err:.2e}")
    print("gradient summed over channels (rows = time cells):")
    print(np.array2string(g[0].sum(axis=0), precision=4, suppress_small=True))
