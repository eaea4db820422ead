"""Binary model files.

Layout (little-endian)::

    "LKMD"  u32 version
    u8 len, task tag (ascii)
    u32 n_inputs, u32 n_conv, u32 conv_channels[n_conv], u32 kernel, u32 hidden
    f32 norm_mean[n_inputs], f32 norm_std[n_inputs]
    f32 tensors, in the architecture's fixed order
    u32 CRC32 of everything above
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..dsp import NormStats
from ..errors import Corrupt, ModelIOError, VersionMismatch
from .model import Architecture, ModelParams

MAGIC = b"LKMD"
VERSION = 1


def model_bytes(params: ModelParams) -> bytes:
    a = params.arch
    task = params.task.encode("ascii")
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<B", len(task)),
        task,
        struct.pack("<II", a.n_inputs, len(a.conv_channels)),
        struct.pack(f"<{len(a.conv_channels)}I", *a.conv_channels),
        struct.pack("<II", a.kernel, a.hidden),
        params.norm.mean.astype("<f4").tobytes(),
        params.norm.std.astype("<f4").tobytes(),
    ]
    for name in a.tensor_shapes():
        parts.append(np.ascontiguousarray(params.tensors[name], dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_model(params: ModelParams, path) -> None:
    try:
        Path(path).write_bytes(model_bytes(params))
    except OSError as e:
        raise ModelIOError(f"{path}: {e}") from e


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise Corrupt("unexpected end of model file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64)


def parse_model(buf: bytes) -> ModelParams:
    if len(buf) < 8:
        raise Corrupt("model file too short")
    if buf[:4] != MAGIC:
        raise VersionMismatch(f"bad magic {buf[:4]!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise VersionMismatch(f"model format version {version}, expected {VERSION}")
    if len(buf) < 12:
        raise Corrupt("model file too short")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise Corrupt("checksum mismatch")
    r = _Reader(body)
    r.take(8)
    (tlen,) = r.unpack("<B")
    task = r.take(tlen).decode("ascii")
    n_inputs, n_conv = r.unpack("<II")
    conv = r.unpack(f"<{n_conv}I")
    kernel, hidden = r.unpack("<II")
    arch = Architecture(n_inputs=n_inputs, conv_channels=tuple(conv), kernel=kernel, hidden=hidden)
    norm = NormStats(r.floats(n_inputs), r.floats(n_inputs))
    tensors = {}
    for name, shape in arch.tensor_shapes().items():
        tensors[name] = r.floats(int(np.prod(shape))).reshape(shape)
    if r.pos != len(body):
        raise Corrupt("trailing bytes in model file")
    return ModelParams(arch=arch, tensors=tensors, norm=norm, task=task)


def load_model(path) -> ModelParams:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise ModelIOError(f"{path}: {e}") from e
    return parse_model(buf)
