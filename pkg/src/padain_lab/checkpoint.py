"""Binary checkpoint format.

Layout (little-endian)::

    b"PDLB" | u32 version | u32 len | arch tag (utf-8) | u32 count |
    count x [ u32 len | name | u8 dtype (0 = f32) | u32 rank | u32 dims... | f32 payload ]

The arch tag is ``"<arch>|<json>"`` where the JSON holds the builder
arguments and pAdaIN config needed to rebuild the layer list.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import IngestionError
from .models import Model, rebuild
from .norm import PAdaINConfig

MAGIC = b"PDLB"
VERSION = 1
_F32 = 0


def _cfg_to_dict(cfg: PAdaINConfig) -> dict:
    return {
        "p": cfg.p,
        "eps": cfg.eps,
        "backprop_scheme": cfg.backprop_scheme.value,
        "stats_source": cfg.stats_source.value,
        "permutation_policy": cfg.permutation_policy.value,
        "block_mask": None if cfg.block_mask is None else sorted(cfg.block_mask),
        "random_std_floor": cfg.random_std_floor,
        "on_shortcut": cfg.on_shortcut,
    }


def arch_tag(model: Model) -> str:
    payload = {"meta": model.meta, "padain": _cfg_to_dict(model.padain_cfg)}
    return f"{model.arch.value}|{json.dumps(payload, sort_keys=True)}"


def encode(model: Model) -> bytes:
    tag = arch_tag(model).encode()
    arrays = model.state_arrays()
    parts = [MAGIC, struct.pack("<II", VERSION, len(tag)), tag, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<BI", _F32, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_model(model: Model, path) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(encode(model))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise IngestionError(f"{self.path}: truncated checkpoint (need {self.pos + n} bytes, have {len(self.buf)})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes, path="<bytes>"):
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise IngestionError(f"{path}: bad magic, not a PDLB checkpoint")
    version, tag_len = r.unpack("<II")
    if version != VERSION:
        raise IngestionError(f"{path}: unsupported checkpoint version {version}")
    tag = r.take(tag_len).decode()
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode()
        dtype, rank = r.unpack("<BI")
        if dtype != _F32:
            raise IngestionError(f"{path}: array {name!r} has unknown dtype tag {dtype}")
        shape = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    return tag, arrays


def load_model(path) -> Model:
    with open(path, "rb") as f:
        tag, arrays = decode(f.read(), path)
    arch, _, payload = tag.partition("|")
    info = json.loads(payload)
    pc = dict(info["padain"])
    model = rebuild(arch, info["meta"], PAdaINConfig(**pc))
    expected = model.state_arrays()
    if set(expected) != set(arrays):
        raise IngestionError(f"{path}: array names do not match a {arch} model")
    for name, arr in arrays.items():
        expected[name][...] = arr
    return model
