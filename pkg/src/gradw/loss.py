"""Gradient-weighted activation-map loss and its ablation variants.

The frozen speaker network supplies, for clean and enhanced inputs, the last
activation map A (C x T' x F') and its gradient G = d(target logit)/dA.  The
difference of the two gradients locates bins where the network attends to the
enhanced input but not the clean one; its softmax weights the L1 distance
between the activation maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward_to, detach
from .speaker import SpeakerNet, as_batch

DISTANCE_MODES = ("artifact", "residual", "both", "channel", "clean")
WEIGHT_SCHEMES = ("softmax", "minmax", "softmax_plus_one", "clean_softmax")


@dataclass(frozen=True)
class LossVariant:
    name: str
    distance: str | None  # None: unweighted
    scheme: str | None

    @property
    def domain(self) -> str | None:
        if self.distance is None:
            return None
        return "channel" if self.distance == "channel" else "time_freq"


VARIANTS = {
    "grad_w": LossVariant("grad_w", "artifact", "softmax"),
    "equal_w": LossVariant("equal_w", None, None),
    "clean_w": LossVariant("clean_w", "clean", "softmax"),
    "res_w": LossVariant("res_w", "artifact", "softmax_plus_one"),
    "no_softmax": LossVariant("no_softmax", "artifact", "minmax"),
    "channel": LossVariant("channel", "channel", "softmax"),
    "residual": LossVariant("residual", "residual", "softmax"),
    "both": LossVariant("both", "both", "softmax"),
}
VARIANT_NAMES = tuple(VARIANTS)


def get_variant(name) -> LossVariant:
    if isinstance(name, LossVariant):
        return name
    try:
        return VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown loss variant {name!r}; valid: {', '.join(VARIANT_NAMES)}") from None


@dataclass
class GradientMap:
    values: np.ndarray  # [N x] C x T' x F'
    source: str = "ref"


@dataclass
class DistanceMap:
    values: np.ndarray  # [N x] T' x F'  or  [N x] C
    domain: str = "time_freq"


@dataclass
class WeightMap:
    values: np.ndarray
    normalization: str = "softmax"
    domain: str = "time_freq"


# ---------------------------------------------------------------------------
# gradient maps


def _target_logit_sum(logits: Tensor, targets) -> Tensor:
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if targets.shape[0] != logits.shape[0]:
        raise ValueError(f"{targets.shape[0]} targets for a batch of {logits.shape[0]}")
    k = logits.shape[1]
    if np.any(targets < 0) or np.any(targets >= k):
        raise IndexError(f"target speaker index out of range 0..{k - 1}")
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(targets.size), targets] = 1
    return ad.sum_over(ad.mul(logits, onehot))


def activation_and_gradient(model: SpeakerNet, x: Tensor, targets) -> tuple[Tensor, np.ndarray]:
    """Forward ``x`` with the activation tapped and return (A, dy/dA).

    Runs on the current tape when ``x`` lives there, so A can carry gradient
    on to the inputs; the returned gradient is a plain array.  The model must
    be in eval mode, which keeps batch items independent: the gradient of the
    summed target logits w.r.t. item n is that item's own gradient.
    """
    if model.training:
        raise RuntimeError("gradient maps need the speaker model in eval mode")
    trace = model(x, tap=True)
    y = _target_logit_sum(trace.logits, targets)
    g = backward_to(y, taps=[trace.activation]).taps[trace.activation]
    return trace.activation, g


def gradient_map(model: SpeakerNet, features, target_speaker, source: str = "ref") -> GradientMap:
    """d(target logit)/d(activation map) for one utterance or a batch."""
    x = as_batch(features)
    k = model.config.num_speakers
    t = np.atleast_1d(np.asarray(target_speaker))
    if np.any(t < 0) or np.any(t >= k):
        raise IndexError(f"target speaker index out of range 0..{k - 1}")
    was_training = model.training
    model.eval()
    try:
        with Tape():
            _, g = activation_and_gradient(model, x, target_speaker)
    finally:
        if was_training:
            model.train()
    return GradientMap(g[0] if np.ndim(target_speaker) == 0 else g, source)


# ---------------------------------------------------------------------------
# distance and weights


def _values(g) -> np.ndarray:
    return g.values if isinstance(g, GradientMap) else np.asarray(g)


def artifact_distance(g_enh, g_ref, mode: str = "artifact") -> DistanceMap:
    """Channel-summed gradient differences (or the per-channel sum for ``channel``).

    Works on C x T' x F' maps or N x C x T' x F' batches.
    """
    e, r = _values(g_enh), _values(g_ref)
    if e.shape != r.shape:
        raise ad.ShapeError(f"gradient map shapes differ: {e.shape} vs {r.shape}")
    c_axis = e.ndim - 3
    if mode == "artifact":
        return DistanceMap((e - r).sum(axis=c_axis), "time_freq")
    if mode == "residual":
        return DistanceMap((r - e).sum(axis=c_axis), "time_freq")
    if mode == "both":
        return DistanceMap(np.abs(e - r).sum(axis=c_axis), "time_freq")
    if mode == "clean":
        return DistanceMap(r.sum(axis=c_axis), "time_freq")
    if mode == "channel":
        return DistanceMap((e - r).sum(axis=(-2, -1)), "channel")
    raise ValueError(f"unknown distance mode {mode!r}; expected one of {DISTANCE_MODES}")


def weight_map(d, scheme: str = "softmax", domain: str | None = None) -> WeightMap:
    """Normalize a distance map per utterance; the result is always detached.

    ``d`` may be a DistanceMap, an array, or a Tensor that lives on a tape;
    in every case no gradient flows back through the weights.
    """
    if isinstance(d, DistanceMap):
        domain = domain or d.domain
        d = d.values
    domain = domain or "time_freq"
    # weights never carry gradient, so they are computed off-tape in 64-bit
    t = Tensor(d.data if isinstance(d, Tensor) else np.asarray(d), dtype=np.float64)
    axes = (-2, -1) if domain == "time_freq" else (-1,)
    if scheme in ("softmax", "clean_softmax"):
        p = ad.softmax_over(t, axes).data
    elif scheme == "softmax_plus_one":
        # keep entries strictly inside (1, 2) even where softmax underflows
        p = np.clip(1.0 + ad.softmax_over(t, axes).data, np.nextafter(1.0, 2.0), np.nextafter(2.0, 1.0))
    elif scheme == "minmax":
        v = t.data
        lo = v.min(axis=axes, keepdims=True)
        hi = v.max(axis=axes, keepdims=True)
        if np.any(hi <= lo):
            raise ValueError("min-max normalization of a constant distance map")
        p = (v - lo) / (hi - lo)
    else:
        raise ValueError(f"unknown weight scheme {scheme!r}; expected one of {WEIGHT_SCHEMES}")
    return WeightMap(p, scheme, domain)


# ---------------------------------------------------------------------------
# losses


def _batch4(t) -> Tensor:
    t = t if isinstance(t, Tensor) else Tensor(np.asarray(t))
    return t if t.ndim == 4 else t.reshape((1,) + t.shape)


def enhancement_loss(a_ref, a_enh, p: WeightMap | None, variant="grad_w") -> Tensor:
    """Weighted L1 between activation maps, averaged over the batch.

    Per item: sum_c sum_{t,f} |A_ref - A_enh| * P, with a time-frequency P
    broadcast over channels or a channel P broadcast over (t, f).  ``equal_w``
    ignores ``p``.  Gradient reaches only ``a_enh``.
    """
    v = get_variant(variant)
    a_ref = detach(_batch4(a_ref))
    a_enh = _batch4(a_enh)
    if a_ref.shape != a_enh.shape:
        raise ad.ShapeError(f"activation shapes differ: {a_ref.shape} vs {a_enh.shape}")
    n, c, t, f = a_enh.shape
    diff = ad.absolute(ad.sub(a_ref, a_enh))
    if v.distance is not None:
        if p is None:
            raise ValueError(f"variant {v.name} needs a weight map")
        pv = np.asarray(p.values if isinstance(p, WeightMap) else p, dtype=a_enh.dtype)
        domain = p.domain if isinstance(p, WeightMap) else v.domain
        if domain != v.domain:
            raise ValueError(f"variant {v.name} expects a {v.domain} weight map, got {domain}")
        if v.domain == "time_freq":
            pv = pv.reshape(-1, 1, t, f) if pv.size in (t * f, n * t * f) else _bad_p(pv, (t, f))
        else:
            pv = pv.reshape(-1, c, 1, 1) if pv.size in (c, n * c) else _bad_p(pv, (c,))
        diff = ad.mul(diff, Tensor(pv))
    return ad.mul(ad.sum_over(diff), 1.0 / n)


def _bad_p(pv, expected):
    raise ad.ShapeError(f"weight map shape {pv.shape} does not fit activation grid {expected}")


def compose_loss(model: SpeakerNet, clean_feat, enh_feat: Tensor, target_speaker, variant="grad_w",
                 return_parts: bool = False):
    """Full loss for a batch: activation maps, gradient maps, weights, weighted L1.

    ``clean_feat`` is constant; ``enh_feat`` should live on the active tape
    (typically the output of :func:`gradw.enhance.enhance`).  ``equal_w`` skips
    the gradient maps entirely.
    """
    v = get_variant(variant)
    if model.training:
        raise RuntimeError("the speaker model must be frozen / in eval mode")
    x_ref = as_batch(clean_feat.data if isinstance(clean_feat, Tensor) else clean_feat)
    x_enh = as_batch(enh_feat)
    parts = {}
    if v.distance is None:
        with Tape():
            a_ref = detach(model(x_ref).activation)
        a_enh = model(x_enh).activation
        p = None
    else:
        with Tape():
            a_ref, g_ref = activation_and_gradient(model, x_ref, target_speaker)
            a_ref = detach(a_ref)
        a_enh, g_enh = activation_and_gradient(model, x_enh, target_speaker)
        d = artifact_distance(g_enh, g_ref, v.distance)
        p = weight_map(d, v.scheme)
        parts.update(g_ref=g_ref, g_enh=g_enh, d=d, p=p)
    loss = enhancement_loss(a_ref, a_enh, p, v)
    if return_parts:
        parts.update(a_ref=a_ref.data, a_enh=a_enh.data)
        return loss, parts
    return loss
