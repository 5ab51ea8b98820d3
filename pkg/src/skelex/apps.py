"""Downstream uses of extracted skeletons: object segmentation by disk
unions, coarse expectation-based scales for classification-only models,
and objectness rescoring of bounding-box proposals."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_EIGHT = np.ones((3, 3), dtype=int)


@dataclass
class SkeletonSegment:
    pixels: np.ndarray  # (N,2) int, (y, x)
    scales: np.ndarray  # (N,) float


@dataclass
class ScoredBox:
    x: int
    y: int
    w: int
    h: int
    base: float
    score: float = 0.0


def group_segments(support, scale):
    """8-connected components of a thinned skeleton with attached scales."""
    support = np.asarray(support, dtype=bool)
    labels, n = ndimage.label(support, structure=_EIGHT)
    segs = []
    for k in range(1, n + 1):
        pix = np.argwhere(labels == k)
        segs.append(SkeletonSegment(
            pixels=pix, scales=np.asarray(scale)[pix[:, 0], pix[:, 1]]))
    return segs


def reconstruct_mask(segment, shape):
    """Union of disks: pixel p joins disk j iff dist(p, x_j) < scale_j / 2.

    The strict inequality keeps groundtruth-scale disks inside the source
    object (scale = 2 * distance-to-nearest-background puts the background
    ring exactly at scale/2).
    """
    out = np.zeros(shape, dtype=bool)
    h, w = shape
    for (y, x), s in zip(segment.pixels, segment.scales):
        if s <= 0:
            raise ValueError(f"non-positive scale {s} at pixel ({y}, {x})")
        r = s / 2.0
        ri = int(np.ceil(r))
        y0, y1 = max(0, y - ri), min(h, y + ri + 1)
        x0, x1 = max(0, x - ri), min(w, x + ri + 1)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        out[y0:y1, x0:x1] |= ((yy - y) ** 2 + (xx - x) ** 2) < r * r - 1e-9
    return out


def fsds_scale_estimate(fused_probs, receptive_fields):
    """Expected receptive field over the skeleton classes (k >= 1).

    The coarse per-pixel scale available when the model has no regressor
    heads: sum_i r_i * P(z = i).
    """
    rf = np.asarray(receptive_fields, dtype=np.float64)
    probs = np.asarray(fused_probs, dtype=np.float64)
    if probs.shape[0] != len(rf) + 1:
        raise ValueError(f"{probs.shape[0]} channels vs {len(rf)} stages")
    return np.tensordot(rf, probs[1:], axes=([0], [0])).astype(np.float32)


def _mask_bbox(mask):
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), \
        int(ys.max() - ys.min() + 1)


def rescore_proposals(boxes, part_masks, image_shape):
    """Rescale each box's base objectness by skeleton-part coverage.

    For box B and the part masks M intersecting it: ratio =
    area(union of (bbox(M) & B)) / area(union of bbox(M) | B), score =
    ratio * base. No intersecting part, or a degenerate box, scores 0.
    """
    h, w = image_shape
    rects = []
    for m in part_masks:
        if not m.any():
            continue
        rects.append((_mask_bbox(m), m))
    out = []
    for box in boxes:
        x0 = max(0, int(box.x))
        y0 = max(0, int(box.y))
        x1 = min(w, int(box.x) + int(box.w))
        y1 = min(h, int(box.y) + int(box.h))
        if x1 <= x0 or y1 <= y0:
            out.append(ScoredBox(box.x, box.y, box.w, box.h, box.base, 0.0))
            continue
        num = np.zeros(image_shape, dtype=bool)
        den = np.zeros(image_shape, dtype=bool)
        den[y0:y1, x0:x1] = True
        hit = False
        for (bx, by, bw, bh), m in rects:
            if not m[y0:y1, x0:x1].any():
                continue
            hit = True
            den[by:by + bh, bx:bx + bw] = True
            iy0, iy1 = max(y0, by), min(y1, by + bh)
            ix0, ix1 = max(x0, bx), min(x1, bx + bw)
            if iy1 > iy0 and ix1 > ix0:
                num[iy0:iy1, ix0:ix1] = True
        ratio = float(num.sum()) / float(den.sum()) if hit else 0.0
        out.append(ScoredBox(box.x, box.y, box.w, box.h, box.base,
                             ratio * box.base))
    return out


def _box_iou(a, b):
    ax0, ay0, ax1, ay1 = a[0], a[1], a[0] + a[2], a[1] + a[3]
    bx0, by0, bx1, by1 = b[0], b[1], b[0] + b[2], b[1] + b[3]
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / float(a[2] * a[3] + b[2] * b[3] - inter)


def detection_rate_curve(scored_per_image, gt_per_image, iou=0.7):
    """Fraction of groundtruth boxes hit by a top-n proposal, for each n."""
    max_n = max((len(s) for s in scored_per_image), default=0)
    total_gt = sum(len(g) for g in gt_per_image)
    ns = np.arange(1, max_n + 1)
    rates = np.zeros(max_n)
    if total_gt == 0 or max_n == 0:
        return ns, rates
    for scored, gts in zip(scored_per_image, gt_per_image):
        order = sorted(range(len(scored)),
                       key=lambda i: (-scored[i].score, i))
        for g in gts:
            found = None
            for rank, i in enumerate(order):
                b = scored[i]
                if _box_iou((b.x, b.y, b.w, b.h), g) >= iou:
                    found = rank
                    break
            if found is not None:
                rates[found:] += 1
    return ns, rates / total_gt
