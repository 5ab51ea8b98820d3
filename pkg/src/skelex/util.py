"""Shared plumbing: atomic writes and named deterministic RNG streams."""

import os
import tempfile
import zlib

import numpy as np


def atomic_write_bytes(path, data):
    """Write bytes via temp file + rename so readers never see partials."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def rng_stream(seed, name):
    """Independent generator for a named sub-stream of one root seed."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))]))


def sample_seeds(seed, name, count):
    """Stable per-item seeds for parallel, order-independent work."""
    return [int(s) for s in
            rng_stream(seed, name).integers(0, 2**63 - 1, size=count)]
