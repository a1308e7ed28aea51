"""Verification scoring, EER / minDCF, and per-condition trial evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import corrupt_at_snr
from .dsp import MelConfig, Waveform, mel_features
from .enhance import UNet, enhance
from .speaker import SpeakerNet, as_batch

REPORT_HEADER = "condition,variant,eer,min_dcf,n_trials,seed"


def cosine_score(e1, e2) -> float:
    e1, e2 = np.asarray(e1, dtype=np.float64), np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 == 0 or n2 == 0:
        raise ValueError("cannot score a zero-norm embedding")
    return float(np.clip(e1 @ e2 / (n1 * n2), -1.0, 1.0))


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    if labels.all() or not labels.any():
        raise ValueError("need at least one target and one nontarget trial")
    return scores, labels


def error_rates(scores, labels):
    """FRR and FAR at each distinct score used as an accept-if->= threshold.

    A final point at +inf (reject everything) is appended.
    """
    scores, labels = _check(scores, labels)
    thr, inv = np.unique(scores, return_inverse=True)
    n_t, n_n = labels.sum(), (~labels).sum()
    tgt = np.bincount(inv[labels], minlength=thr.size)
    non = np.bincount(inv[~labels], minlength=thr.size)
    # targets strictly below each threshold are misses
    frr = np.concatenate([[0], np.cumsum(tgt)]) / n_t
    far = 1.0 - np.concatenate([[0], np.cumsum(non)]) / n_n
    return frr, far, np.append(thr, np.inf)


def compute_eer(scores, labels) -> tuple[float, float]:
    """Equal error rate with linear interpolation at the FRR/FAR crossing."""
    frr, far, thr = error_rates(scores, labels)
    i = int(np.argmax(frr >= far))  # first sweep point at or past the crossing
    if i == 0 or frr[i] == far[i]:
        return float((frr[i] + far[i]) / 2), float(thr[i])
    d0 = far[i - 1] - frr[i - 1]
    d1 = frr[i] - far[i]
    lam = d0 / (d0 + d1)
    eer = frr[i - 1] + lam * (frr[i] - frr[i - 1])
    t_hi = thr[i] if np.isfinite(thr[i]) else thr[i - 1]
    return float(eer), float(thr[i - 1] + lam * (t_hi - thr[i - 1]))


def compute_min_dcf(scores, labels, p_target: float = 0.01, c_miss: float = 1.0, c_fa: float = 1.0) -> float:
    """Minimum normalized detection cost over all thresholds."""
    if not 0 < p_target < 1:
        raise ValueError("p_target must lie in (0, 1)")
    if c_miss <= 0 or c_fa <= 0:
        raise ValueError("costs must be positive")
    frr, far, _ = error_rates(scores, labels)
    cost = c_miss * p_target * frr + c_fa * (1 - p_target) * far
    return float(cost.min() / min(c_miss * p_target, c_fa * (1 - p_target)))


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class Trial:
    label: bool
    enroll: str
    test: str


def read_trials(path) -> list[Trial]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            lab, e, t = line.split()
            if lab not in ("0", "1"):
                raise ValueError(f"bad trial label {lab!r}")
            out.append(Trial(lab == "1", e, t))
    return out


def write_trials(path, trials: Sequence[Trial]) -> None:
    lines = [f"{int(t.label)} {t.enroll} {t.test}" for t in trials]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def make_trials(utt_speakers: dict[str, int], n_trials: int, seed: int) -> list[Trial]:
    """Half target, half nontarget trials drawn without repeats."""
    rng = np.random.default_rng([seed, 41])
    ids = sorted(utt_speakers)
    by_spk: dict[int, list[str]] = {}
    for u in ids:
        by_spk.setdefault(utt_speakers[u], []).append(u)
    out, seen = [], set()
    n_target = n_trials // 2
    while len(out) < n_trials:
        want_target = len(out) < n_target
        e = ids[int(rng.integers(len(ids)))]
        if want_target:
            pool = [u for u in by_spk[utt_speakers[e]] if u != e]
        else:
            pool = [u for u in ids if utt_speakers[u] != utt_speakers[e]]
        if not pool:
            continue
        t = pool[int(rng.integers(len(pool)))]
        if (e, t) in seen:
            continue
        seen.add((e, t))
        out.append(Trial(want_target, e, t))
    return out


@dataclass
class EvalRow:
    condition: str
    variant: str
    eer: float
    min_dcf: float
    n_trials: int
    seed: int

    def csv(self) -> str:
        return f"{self.condition},{self.variant},{self.eer:.6f},{self.min_dcf:.6f},{self.n_trials},{self.seed}"


def write_report(path, rows: Sequence[EvalRow]) -> None:
    Path(path).write_text("\n".join([REPORT_HEADER] + [r.csv() for r in rows]) + "\n", newline="\n")


def read_report(path) -> list[EvalRow]:
    lines = Path(path).read_text().splitlines()
    if lines[0] != REPORT_HEADER:
        raise ValueError("unexpected report header")
    out = []
    for line in lines[1:]:
        c, v, e, d, n, s = line.split(",")
        out.append(EvalRow(c, v, float(e), float(d), int(n), int(s)))
    return out


def condition_name(condition) -> str:
    return "clean" if condition == "clean" else f"{float(condition):g}"


def _features(w: Waveform, mel: MelConfig) -> np.ndarray:
    return mel_features(w, mel).values


def run_trial_eval(trials: Sequence[Trial], speaker: SpeakerNet, utterances: dict[str, Waveform],
                   noise: dict, condition="clean", enhancer: UNet | None = None, noise_kind: str = "mixed",
                   seed: int = 0, variant: str | None = None, mel: MelConfig = MelConfig(),
                   p_target: float = 0.01, c_miss: float = 1.0, c_fa: float = 1.0,
                   return_scores: bool = False):
    """Score every trial under one condition; enrollment stays clean.

    The test side of each trial is corrupted at ``condition`` dB (skipped for
    "clean") with noise seeded by (seed, test utterance), optionally enhanced,
    then both sides are embedded and cosine-scored.
    """
    if not trials:
        raise ValueError("no trials")
    missing = {u for t in trials for u in (t.enroll, t.test)} - set(utterances)
    if missing:
        raise KeyError(f"unresolvable utterance refs: {sorted(missing)[:5]}")
    if speaker.training:
        raise RuntimeError("the speaker model must be in eval mode")
    if enhancer is not None:
        enhancer.eval()
    cond = condition_name(condition)
    cache: dict[tuple, np.ndarray] = {}

    def embedding(utt: str, side: str) -> np.ndarray:
        key = (utt, side)
        if key not in cache:
            w = utterances[utt]
            if side == "test" and cond != "clean":
                rng = np.random.default_rng([seed, 43, sorted(utterances).index(utt)])
                w = corrupt_at_snr(w, noise_kind, float(condition), noise, rng)
            x = _features(w, mel)
            if side == "test" and enhancer is not None:
                m = enhancer(as_batch(x)).data[0, 0]
                x = enhance(x, m)
            cache[key] = speaker(as_batch(x)).embedding.data[0].astype(np.float64)
        return cache[key]

    scores = np.array([cosine_score(embedding(t.enroll, "enroll"), embedding(t.test, "test")) for t in trials])
    labels = np.array([t.label for t in trials])
    eer, _ = compute_eer(scores, labels)
    row = EvalRow(cond, variant or ("noisy" if enhancer is None else "enhanced"), eer,
                  compute_min_dcf(scores, labels, p_target, c_miss, c_fa), len(trials), seed)
    return (row, scores) if return_scores else row
