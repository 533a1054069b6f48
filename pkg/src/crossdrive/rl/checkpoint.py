"""Binary policy checkpoints.

Layout: magic string, format version (u32), mode tag (u8), policy layer
dimension list, value layer dimension list (each a u32 count followed by u32
dims), then every parameter as little-endian float32 in layer order, weights
row-major before biases, with the log-std vector last.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nets import ENDTOEND, SPEEDREF, GaussianPolicy

MAGIC = b"XDRIVEPOL"
FORMAT_VERSION = 1
_MODE_TAGS = {SPEEDREF: 0, ENDTOEND: 1}
_TAG_MODES = {v: k for k, v in _MODE_TAGS.items()}


def _write_dims(buf: bytearray, dims: list[int]) -> None:
    buf += struct.pack("<I", len(dims))
    buf += struct.pack(f"<{len(dims)}I", *dims)


def save_checkpoint(path: str | Path, policy: GaussianPolicy) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", FORMAT_VERSION)
    buf += struct.pack("<B", _MODE_TAGS[policy.mode])
    _write_dims(buf, policy.trunk.sizes)
    _write_dims(buf, policy.value_net.sizes)
    for param in policy.params():
        buf += np.ascontiguousarray(param, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("checkpoint file truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def dims(self) -> list[int]:
        count = self.u32()
        return list(struct.unpack(f"<{count}I", self.take(4 * count)))

    def floats(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape))
        raw = np.frombuffer(self.take(4 * n), dtype="<f4")
        return raw.astype(float).reshape(shape)


def load_checkpoint(path: str | Path) -> GaussianPolicy:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(MAGIC)) != MAGIC:
        raise ValueError("not a policy checkpoint")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    mode_tag = reader.u8()
    if mode_tag not in _TAG_MODES:
        raise ValueError(f"unknown mode tag {mode_tag}")
    mode = _TAG_MODES[mode_tag]
    policy_dims = reader.dims()
    value_dims = reader.dims()
    if len(policy_dims) < 2 or policy_dims[0] != value_dims[0]:
        raise ValueError("inconsistent layer dimensions")
    if tuple(policy_dims[1:-1]) != tuple(value_dims[1:-1]) or value_dims[-1] != 1:
        raise ValueError("inconsistent layer dimensions")

    policy = GaussianPolicy(policy_dims[0], mode,
                            hidden=tuple(policy_dims[1:-1]), seed=None)
    if policy.trunk.sizes != policy_dims:
        raise ValueError("layer dimensions do not match the declared mode")
    values = []
    for param in policy.params():
        values.append(reader.floats(param.shape))
    if reader.pos != len(reader.data):
        raise ValueError("trailing bytes after checkpoint payload")
    policy.set_params(values)
    return policy
