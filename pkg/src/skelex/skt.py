"""Raw tensor file format and the multi-tensor checkpoint container.

Tensor file ("SKT1"): magic bytes, u32 little-endian rank, u32 dims,
float32 little-endian payload in row-major order. Checkpoint container
("SKC1"): u32 header length, UTF-8 JSON header (tensor ids/shapes plus
arbitrary metadata), then the named tensors as back-to-back SKT1 blobs
in header order.
"""

import json
import struct

import numpy as np

from .util import atomic_write_bytes

TENSOR_MAGIC = b"SKT1"
CONTAINER_MAGIC = b"SKC1"


class FormatError(ValueError):
    pass


def encode_tensor(array):
    array = np.ascontiguousarray(array, dtype=np.float32)
    head = TENSOR_MAGIC + struct.pack("<I", array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape)
    return head + array.astype("<f4").tobytes()


def decode_tensor(buf, offset=0):
    """Decode one tensor starting at offset; returns (array, next_offset)."""
    if buf[offset:offset + 4] != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic at offset {offset}")
    rank, = struct.unpack_from("<I", buf, offset + 4)
    dims = struct.unpack_from(f"<{rank}I", buf, offset + 8)
    start = offset + 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    end = start + 4 * count
    if end > len(buf):
        raise FormatError("truncated tensor payload")
    data = np.frombuffer(buf[start:end], dtype="<f4").reshape(dims)
    return data.astype(np.float32), end


def write_tensor(path, array):
    atomic_write_bytes(path, encode_tensor(array))


def read_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    array, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{path}: trailing bytes after tensor")
    return array


def write_container(path, tensors, meta=None):
    """Write named tensors ({id: array}) with a JSON metadata header."""
    ids = list(tensors.keys())
    header = {
        "meta": meta or {},
        "tensors": [{"id": i, "shape": list(tensors[i].shape)} for i in ids],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = CONTAINER_MAGIC + struct.pack("<I", len(hbytes)) + hbytes
    blob += b"".join(encode_tensor(tensors[i]) for i in ids)
    atomic_write_bytes(path, blob)


def read_container(path):
    """Read a container; returns ({id: array}, meta dict)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CONTAINER_MAGIC:
        raise FormatError(f"{path}: not a checkpoint container")
    hlen, = struct.unpack_from("<I", buf, 4)
    header = json.loads(buf[8:8 + hlen].decode("utf-8"))
    tensors = {}
    offset = 8 + hlen
    for entry in header["tensors"]:
        array, offset = decode_tensor(buf, offset)
        if list(array.shape) != entry["shape"]:
            raise FormatError(f"{path}: tensor {entry['id']} shape mismatch")
        tensors[entry["id"]] = array
    return tensors, header["meta"]
