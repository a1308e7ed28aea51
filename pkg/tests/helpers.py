"""Shared test oracles."""

import numpy as np

from gradw import autodiff as ad


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x`` (every entry)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)
    return float(np.linalg.norm(a - b) / denom)


def autodiff_grad(build, x: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Gradient of ``build(tensor) -> scalar tensor`` w.r.t. a leaf input."""
    with ad.precision(dtype):
        t = ad.Tensor(x, requires_grad=True)
        with ad.Tape():
            y = build(t)
            return ad.backward_to(y, params=[t]).params[t]


def scalar_value(build, x: np.ndarray, dtype=np.float64) -> float:
    with ad.precision(dtype):
        return float(build(ad.Tensor(x)).data.astype(np.float64).sum())
