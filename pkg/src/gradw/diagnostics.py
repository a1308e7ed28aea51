"""Heat-map exports and the artifact-injection probe."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor
from .enhance import UNet, enhance
from .loss import VARIANT_NAMES, artifact_distance, compose_loss, gradient_map, weight_map
from .speaker import SpeakerNet, as_batch

BLOCK = 16  # input bins per activation cell under four stride-2 blocks


def write_pgm(path, values) -> Path:
    """Binary 8-bit PGM; rows are time, columns frequency, min-max scaled."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"PGM needs a 2-D map, got shape {v.shape}")
    lo, hi = v.min(), v.max()
    img = np.zeros(v.shape, np.uint8) if hi <= lo else np.round(255 * (v - lo) / (hi - lo)).astype(np.uint8)
    path = Path(path)
    path.write_bytes(f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii") + img.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    head = buf.split(b"\n", 3)
    if head[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(x) for x in head[1].split())
    return np.frombuffer(head[3], np.uint8, count=w * h).reshape(h, w)


def write_matrix_csv(path, values) -> Path:
    v = np.atleast_2d(np.asarray(values, dtype=np.float64))
    path = Path(path)
    path.write_text("\n".join(",".join(f"{x:.9g}" for x in row) for row in v) + "\n", newline="\n")
    return path


def read_matrix_csv(path) -> np.ndarray:
    return np.array([[float(x) for x in ln.split(",")] for ln in Path(path).read_text().splitlines() if ln])


@dataclass
class PairMaps:
    x: np.ndarray
    e: np.ndarray
    m: np.ndarray
    a_ref: np.ndarray
    a_enh: np.ndarray
    d: np.ndarray
    p: np.ndarray
    target: int
    losses: dict


def diagnose_pair(speaker: SpeakerNet, clean, noisy, unet: UNet | None = None, target: int | None = None,
                  variants=VARIANT_NAMES) -> PairMaps:
    """All intermediate maps of the Grad-W loss for one aligned utterance pair.

    Without a U-Net the mask is identically 1 (the unenhanced bypass).  The
    target speaker defaults to the frozen model's decision on the clean side.
    """
    r = np.asarray(clean, dtype=np.float64)
    x = np.asarray(noisy, dtype=np.float64)
    if r.shape != x.shape:
        raise ValueError(f"clean {r.shape} and noisy {x.shape} features are not aligned")
    m = np.ones_like(x) if unet is None else unet.eval()(as_batch(x)).data[0, 0].astype(np.float64)
    e = enhance(x, m)
    if target is None:
        target = int(np.argmax(speaker(as_batch(r)).logits.data[0]))
    g_ref = gradient_map(speaker, r, target)
    g_enh = gradient_map(speaker, e, target)
    d = artifact_distance(g_enh, g_ref).values
    p = weight_map(d).values
    a_ref = speaker(as_batch(r)).activation.data[0]
    a_enh = speaker(as_batch(e)).activation.data[0]
    losses = {}
    for v in variants:
        try:
            with Tape():
                losses[v] = compose_loss(speaker, r[None], Tensor(e[None, None]), [target], v).item()
        except ValueError as exc:
            losses[v] = str(exc)
    return PairMaps(x, e, m, a_ref, a_enh, d, p, target, losses)


def write_diagnostics(maps: PairMaps, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grids = {"X": maps.x, "E": maps.e, "M": maps.m, "A_ref": maps.a_ref.mean(axis=0),
             "A_enh": maps.a_enh.mean(axis=0), "D": maps.d, "P": maps.p}
    written = []
    for name, g in grids.items():
        written.append(write_matrix_csv(out / f"{name}.csv", g))
        written.append(write_pgm(out / f"{name}.pgm", g))
    lines = [f"target_speaker={maps.target}", f"max_abs_D={np.abs(maps.d).max():.9g}",
             f"P_sum={maps.p.sum():.9g}"]
    for v, val in maps.losses.items():
        lines.append(f"loss.{v}={val:.9g}" if isinstance(val, float) else f"loss.{v}=undefined ({val})")
    summary = out / "summary.txt"
    summary.write_text("\n".join(lines) + "\n", newline="\n")
    return written + [summary]


# ---------------------------------------------------------------------------
# artifact-injection probe


def inject_blob(features: np.ndarray, cell: tuple[int, int], amplitude: float,
                size: tuple[int, int] = (BLOCK, 8)) -> np.ndarray:
    """Add a bright rectangle inside one activation cell's input block."""
    out = np.array(features, dtype=np.float64, copy=True)
    t0, f0 = cell[0] * BLOCK, cell[1] * BLOCK
    if t0 + size[0] > out.shape[0] or f0 + size[1] > out.shape[1]:
        raise ValueError(f"blob at cell {cell} does not fit a {out.shape} feature map")
    out[t0:t0 + size[0], f0:f0 + size[1]] += amplitude
    return out


def probe_concentration(speaker: SpeakerNet, features: np.ndarray, target: int, cell: tuple[int, int],
                        amplitude: float) -> float:
    """P at the blob's activation cell relative to the uniform level 1/(T'F')."""
    enh = inject_blob(features, cell, amplitude)
    g_ref = gradient_map(speaker, features, target)
    g_enh = gradient_map(speaker, enh, target)
    p = weight_map(artifact_distance(g_enh, g_ref)).values
    return float(p[cell] * p.size)
