"""Groundtruth generation: masks -> skeleton/scale maps -> per-stage targets.

Conventions (fixed here, relied on everywhere else):
  - distances are exact Euclidean, measured between pixel centers, so a
    full-width stripe of odd height h has a center-row distance of
    (h+1)/2 and a scale of h+1;
  - the scale of a skeleton pixel is twice its distance to the nearest
    background pixel (maximal-disk diameter);
  - quantized scale z is the index of the shallowest stage whose receptive
    field exceeds rho times the scale, 0 on non-skeleton pixels.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import medial_axis, thin

log = logging.getLogger(__name__)


class ScaleOverflowError(ValueError):
    """rho*s >= r_M at some pixel; the deepest stage cannot capture it."""


def distance_transform(mask):
    """Exact Euclidean distance to the nearest background pixel center."""
    mask = np.asarray(mask, dtype=bool)
    if mask.all() and mask.size:
        raise ValueError("mask has foreground but no background pixel")
    return ndimage.distance_transform_edt(mask)


_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
            if (dy, dx) != (0, 0)]


def _shift(arr, dy, dx, fill):
    out = np.full_like(arr, fill)
    h, w = arr.shape
    ys = slice(max(0, dy), min(h, h + dy))
    xs = slice(max(0, dx), min(w, w + dx))
    yd = slice(max(0, -dy), min(h, h - dy))
    xd = slice(max(0, -dx), min(w, w - dx))
    out[yd, xd] = arr[ys, xs]
    return out


def _prune_contained_endpoints(skel, dist, slack=0.6):
    """Drop endpoint pixels whose maximal disk sits (nearly) inside a
    neighbor's: dist(q) + slack >= dist(p) + |p - q|.

    Staircase spurs on a rasterized boundary are chains of disks each
    poking less than a pixel beyond the next, so a sub-pixel slack eats
    them from the tips inward; along a constant-width tube the gap is a
    full pixel, so true centerline endpoints survive. Removal affects any
    disk-union reconstruction only within a sub-pixel boundary fringe.
    """
    skel = skel.copy()
    while True:
        nbrs = np.zeros(skel.shape, dtype=np.int32)
        contained = np.zeros(skel.shape, dtype=bool)
        for dy, dx in _OFFSETS:
            nb = _shift(skel, dy, dx, False)
            nbrs += nb
            nd = _shift(np.where(skel, dist, -np.inf), dy, dx, -np.inf)
            contained |= nb & (nd >= dist + np.hypot(dy, dx) - slack)
        remove = skel & (nbrs == 1) & contained
        if not remove.any():
            return skel
        skel &= ~remove


def skeletonize(mask):
    """Medial curve of a binary mask with per-pixel scales.

    Returns (skeleton, scale): skeleton is a unit-width boolean ridge of
    the distance transform with discretization spurs pruned; scale is
    2*distance there and 0 elsewhere.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        z = np.zeros(mask.shape)
        return mask.copy(), z
    # fixed rng: medial_axis breaks ridge ties randomly by default, which
    # would make cached targets differ between identical runs
    ridge, dist = medial_axis(mask, return_distance=True, rng=0)
    skel = thin(ridge)
    # thinning may drop an isolated single-pixel component entirely
    if not skel.any():
        skel = ridge
    skel = _prune_contained_endpoints(skel, dist)
    scale = np.where(skel, 2.0 * dist, 0.0)
    return skel, scale


def quantize_scale(s, receptive_fields, rho):
    """Quantized scale of one value: least i (1-based) with r_i > rho*s."""
    if s < 0:
        raise ValueError(f"negative scale {s}")
    if s == 0:
        return 0
    target = rho * s
    for i, r in enumerate(receptive_fields, start=1):
        if r > target:
            return i
    raise ScaleOverflowError(
        f"rho*s = {target:.2f} >= r_M = {receptive_fields[-1]}")


def quantize_scale_map(scale, receptive_fields, rho, clip=True):
    """Per-pixel quantized scales; overflow clips to M with a warning."""
    scale = np.asarray(scale, dtype=np.float64)
    rf = np.asarray(receptive_fields, dtype=np.float64)
    if rho <= 1.0:
        raise ValueError(f"rho must exceed 1, got {rho}")
    if np.any(np.diff(rf) <= 0):
        raise ValueError(f"receptive fields not strictly increasing: {rf}")
    target = rho * scale
    z = np.searchsorted(rf, target, side="right") + 1
    z[scale == 0] = 0
    over = z > len(rf)
    if over.any():
        if not clip:
            ys, xs = np.nonzero(over)
            raise ScaleOverflowError(
                f"scale overflow at pixel ({ys[0]}, {xs[0]}): "
                f"rho*s = {target[ys[0], xs[0]]:.2f} >= r_M = {rf[-1]}")
        log.warning("clipping %d overflowing scale pixels to stage %d",
                    int(over.sum()), len(rf))
        z[over] = len(rf)
    return z.astype(np.int32)


@dataclass
class StageTargets:
    """Supervision for one stage: class labels, regression targets, validity."""

    stage: int
    cls: np.ndarray     # int labels in {0..stage}
    reg: np.ndarray     # normalized scale targets, only meaningful where valid
    valid: np.ndarray   # bool, True where cls > 0


def stage_targets(z, scale, stage, receptive_fields, rho):
    """Per-stage targets: deeper classes mask to 0, scales normalize by r_i.

    cls = z where z <= stage else 0; reg = 2*scale/r_i - 1 on valid pixels
    (clamped to the attainable [-1, 2/rho - 1] range when overflow was
    clipped upstream), -1 elsewhere.
    """
    if not 1 <= stage <= len(receptive_fields):
        raise ValueError(f"stage {stage} out of range")
    z = np.asarray(z)
    keep = z <= stage
    cls = np.where(keep, z, 0).astype(np.int32)
    valid = cls > 0
    r_i = float(receptive_fields[stage - 1])
    reg = np.where(valid, 2.0 * np.asarray(scale) / r_i - 1.0, -1.0)
    reg = np.minimum(reg, 2.0 / rho - 1.0)
    return StageTargets(stage=stage, cls=cls, reg=reg.astype(np.float32),
                        valid=valid)


# ---------------------------------------------------------------------------
# augmentation

ROTATIONS = (0, 90, 180, 270)
FLIPS = ("none", "ud", "lr")
RESIZES = (0.8, 1.0, 1.2)


@dataclass(frozen=True)
class Transform:
    rotation: int = 0
    flip: str = "none"
    resize: float = 1.0


def all_transforms(rotate=True, flip=True, resize=True):
    """The augmentation set; full set has 4*3*3 = 36 members."""
    rots = ROTATIONS if rotate else (0,)
    flips = FLIPS if flip else ("none",)
    sizes = RESIZES if resize else (1.0,)
    return [Transform(r, f, s) for r in rots for f in flips for s in sizes]


def _interp_matrix(n_out, n_in):
    # same half-pixel convention as the network upsampler, any output size
    a = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(src).astype(int)
    t = src - i0
    lo = np.clip(i0, 0, n_in - 1)
    hi = np.clip(i0 + 1, 0, n_in - 1)
    rows = np.arange(n_out)
    np.add.at(a, (rows, lo), 1.0 - t)
    np.add.at(a, (rows, hi), t)
    return a


def _resize_bilinear(img, factor):
    h, w = img.shape
    nh, nw = max(1, round(h * factor)), max(1, round(w * factor))
    return _interp_matrix(nh, h) @ img @ _interp_matrix(nw, w).T


def _resize_nearest(img, factor):
    h, w = img.shape
    nh, nw = max(1, round(h * factor)), max(1, round(w * factor))
    ri = np.clip(((np.arange(nh) + 0.5) / factor - 0.5).round(), 0, h - 1)
    ci = np.clip(((np.arange(nw) + 0.5) / factor - 0.5).round(), 0, w - 1)
    return img[ri.astype(int)[:, None], ci.astype(int)[None, :]]


def augment(image, skeleton, scale, transform):
    """Apply one geometric transform consistently to image/skeleton/scale.

    Rotations and flips are exact isometries; resizing remaps the maps by
    nearest pixel and multiplies scale values by the resize factor.
    """
    img = np.asarray(image, dtype=np.float32)
    skel = np.asarray(skeleton, dtype=bool)
    sc = np.asarray(scale, dtype=np.float32)
    if transform.resize != 1.0:
        img = _resize_bilinear(img, transform.resize).astype(np.float32)
        skel = _resize_nearest(skel, transform.resize)
        sc = _resize_nearest(sc, transform.resize) * transform.resize
        sc = np.where(skel, sc, 0.0).astype(np.float32)
    k = transform.rotation // 90
    if k:
        img, skel, sc = (np.rot90(a, k) for a in (img, skel, sc))
    if transform.flip == "ud":
        img, skel, sc = (np.flipud(a) for a in (img, skel, sc))
    elif transform.flip == "lr":
        img, skel, sc = (np.fliplr(a) for a in (img, skel, sc))
    return (np.ascontiguousarray(img), np.ascontiguousarray(skel),
            np.ascontiguousarray(sc))
