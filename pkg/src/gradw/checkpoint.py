"""GWCKPT1 checkpoint files.

Layout: the 8 magic bytes ``GWCKPT1\\0``, a little-endian uint32 byte count,
that many bytes of UTF-8 ``key=value`` metadata lines, then each tensor as raw
little-endian float32 in the declared order.  Tensor lines read
``tensor.<name>=<d0>x<d1>...;<byte offset>``.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

MAGIC = b"GWCKPT1\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def encode(state: dict[str, np.ndarray], meta: dict[str, object]) -> bytes:
    lines = [f"format_version={FORMAT_VERSION}"]
    lines += [f"{k}={_fmt(v)}" for k, v in meta.items()]
    blobs, offset = [], 0
    for name, arr in state.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        shape = "x".join(str(d) for d in a.shape) or "scalar"
        lines.append(f"tensor.{name}={shape};{offset}")
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = ("\n".join(lines) + "\n").encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a GWCKPT1 checkpoint (bad magic)")
    (n,) = struct.unpack("<I", buf[8:12])
    meta, state = {}, {}
    body = 12 + n
    for line in buf[12:body].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        if key.startswith("tensor."):
            shape_s, off = value.split(";")
            shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split("x"))
            count = int(np.prod(shape)) if shape else 1
            start = body + int(off)
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=start)
            state[key[len("tensor."):]] = arr.reshape(shape).copy()
        else:
            meta[key] = value
    if meta.get("format_version") != str(FORMAT_VERSION):
        raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
    return state, meta


def save(path, state: dict[str, np.ndarray], meta: dict[str, object]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(state, meta))
    return path


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return decode(Path(path).read_bytes())


def config_meta(config, prefix: str = "config.") -> dict[str, object]:
    return {prefix + k: v for k, v in asdict(config).items()}


def config_from_meta(cls, meta: dict[str, str], prefix: str = "config."):
    kwargs = {}
    for f in fields(cls):
        raw = meta.get(prefix + f.name)
        if raw is None:
            continue
        default = f.default
        if isinstance(default, tuple):
            kwargs[f.name] = tuple(type(default[0])(x) for x in raw.split(",") if x)
        elif isinstance(default, bool):
            kwargs[f.name] = raw == "True"
        else:
            kwargs[f.name] = type(default)(raw)
    return cls(**kwargs)


def save_model(path, model, kind: str, seed: int, extra: dict | None = None) -> Path:
    meta = {"kind": kind, "seed": seed, **config_meta(model.config), **(extra or {})}
    return save(path, model.state(), meta)


def load_speaker(path):
    from .speaker import SpeakerNet, SpeakerNetConfig

    state, meta = load(path)
    if meta.get("kind") != "speaker":
        raise CheckpointError(f"{path}: not a speaker checkpoint")
    model = SpeakerNet(config_from_meta(SpeakerNetConfig, meta))
    model.load_state(state)
    if meta.get("frozen") == "True":
        model.freeze()
    return model


def load_unet(path):
    from .enhance import UNet, UNetConfig

    state, meta = load(path)
    if meta.get("kind") != "unet":
        raise CheckpointError(f"{path}: not a U-Net checkpoint")
    model = UNet(config_from_meta(UNetConfig, meta))
    model.load_state(state)
    model.eval()
    return model
