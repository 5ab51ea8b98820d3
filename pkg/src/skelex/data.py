"""Dataset directory layout, manifest, and cached skeleton/scale targets.

Layout: images/NNNN.png (8-bit gray), masks/NNNN.png (0/255),
cache/NNNN.skt (2,H,W tensor: skeleton, scale), manifest.json.
"""

import io
import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import gt, skt
from .util import atomic_write_bytes, atomic_write_text


@dataclass
class Sample:
    id: str
    split: str
    image: str
    mask: str


@dataclass
class Manifest:
    provenance: str
    samples: list

    def split(self, name):
        return [s for s in self.samples if s.split == name]

    def by_id(self, sid):
        for s in self.samples:
            if s.id == sid:
                return s
        raise KeyError(f"sample {sid} not in manifest")


def _png_bytes(array):
    buf = io.BytesIO()
    Image.fromarray(array, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def save_png(path, array):
    atomic_write_bytes(path, _png_bytes(array))


def load_image(path):
    """8-bit grayscale (RGB collapses by mean) -> float32 in [0, 1]."""
    arr = np.asarray(Image.open(path))
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return (arr / 255.0).astype(np.float32)


def load_mask(path):
    arr = np.asarray(Image.open(path))
    if arr.ndim == 3:
        arr = arr.max(axis=2)
    return arr > 127


def to_input(image):
    """Zero-center a [0,1] grayscale image for the network."""
    return (np.asarray(image, dtype=np.float32) - 0.5)


def write_dataset(root, pairs, train_count, provenance, force=False):
    """Write (image, mask) pairs; first train_count go to the train split."""
    root = os.fspath(root)
    manifest_path = os.path.join(root, "manifest.json")
    if os.path.exists(manifest_path) and not force:
        raise FileExistsError(f"{manifest_path} exists; use force to overwrite")
    samples = []
    for n, (img, mask) in enumerate(pairs):
        sid = f"{n:04d}"
        split = "train" if n < train_count else "test"
        rel_img = f"images/{sid}.png"
        rel_mask = f"masks/{sid}.png"
        save_png(os.path.join(root, rel_img), img)
        save_png(os.path.join(root, rel_mask),
                 (mask.astype(np.uint8) * 255))
        samples.append(Sample(id=sid, split=split, image=rel_img,
                              mask=rel_mask))
    doc = {
        "version": 1,
        "provenance": provenance,
        "samples": [vars(s) for s in samples],
    }
    atomic_write_text(manifest_path, json.dumps(doc, indent=1, sort_keys=True))
    return Manifest(provenance=provenance, samples=samples)


def load_manifest(root):
    root = os.fspath(root)
    with open(os.path.join(root, "manifest.json")) as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported manifest version {doc.get('version')}")
    samples = [Sample(**s) for s in doc["samples"]]
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids in manifest")
    missing = [s.id for s in samples
               if not (os.path.exists(os.path.join(root, s.image))
                       and os.path.exists(os.path.join(root, s.mask)))]
    if missing:
        raise FileNotFoundError(f"manifest references missing files for "
                                f"ids {missing}")
    return Manifest(provenance=doc["provenance"], samples=samples)


def _cache_path(root, sid):
    return os.path.join(os.fspath(root), "cache", f"{sid}.skt")


def cache_targets(root, manifest, ids=None):
    """Precompute skeleton/scale maps for all (or the given) samples."""
    for s in manifest.samples:
        if ids is not None and s.id not in ids:
            continue
        path = _cache_path(root, s.id)
        if os.path.exists(path):
            continue
        mask = load_mask(os.path.join(root, s.mask))
        skel, scale = gt.skeletonize(mask)
        skt.write_tensor(path, np.stack([skel.astype(np.float32),
                                         scale.astype(np.float32)]))


def sample_arrays(root, sample):
    """image [0,1], mask bool, skeleton bool, scale float32 for one sample."""
    image = load_image(os.path.join(root, sample.image))
    mask = load_mask(os.path.join(root, sample.mask))
    path = _cache_path(root, sample.id)
    if os.path.exists(path):
        pair = skt.read_tensor(path)
        skel = pair[0] > 0.5
        scale = pair[1]
    else:
        skel, scale = gt.skeletonize(mask)
        scale = scale.astype(np.float32)
    return image, mask, skel, scale
