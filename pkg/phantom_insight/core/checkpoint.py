"""PHIN checkpoint format.

Layout (all integers little-endian):
    b"PHIN" | u32 version | u32 tensor count
    per tensor: u32 name length | utf-8 name | u32 rank | u64 dims... | f32 payload
"""
import struct
from collections import OrderedDict

import numpy as np
import torch

from phantom_insight.utils.errors import FormatError

MAGIC = b"PHIN"
VERSION = 1


def _tensor_to_array(tensor):
    if isinstance(tensor, torch.Tensor):
        tensor = tensor.detach().cpu().to(torch.float32).numpy()
    # np.array keeps rank 0 where ascontiguousarray promotes to (1,)
    return np.array(tensor, dtype="<f4", order="C", copy=True)


def save_checkpoint(named_tensors, path):
    names = list(named_tensors.keys())
    if len(set(names)) != len(names):
        raise FormatError(f"duplicate tensor names in checkpoint {path}")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(names)))
        for name in names:
            array = _tensor_to_array(named_tensors[name])
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", array.ndim))
            f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
            f.write(array.tobytes(order="C"))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.data):
            raise FormatError(f"{self.path}: truncated while reading {what}")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    reader = _Reader(data, path)

    if reader.take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic, not a PHIN checkpoint")
    version, count = reader.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")

    tensors = OrderedDict()
    for index in range(count):
        (name_len,) = reader.unpack("<I", f"name length of tensor {index}")
        try:
            name = reader.take(name_len, f"name of tensor {index}").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"{path}: tensor {index} has an invalid name") from e
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        (rank,) = reader.unpack("<I", f"rank of {name}")
        shape = reader.unpack(f"<{rank}Q", f"dims of {name}")
        numel = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = reader.take(4 * numel, f"payload of {name}")
        array = np.frombuffer(payload, dtype="<f4").reshape(shape)
        tensors[name] = torch.from_numpy(array.astype(np.float32))

    if reader.offset != len(data):
        raise FormatError(f"{path}: {len(data) - reader.offset} unexpected trailing bytes")

    return tensors
