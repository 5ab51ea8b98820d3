"""From fused activations to skeleton responses and thinned binary maps."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import thin

_NMS_TOL = 1.01  # a pixel survives if 1.01*value >= interpolated neighbors


@dataclass
class SkeletonResponse:
    response: np.ndarray  # (H,W) float32, 1 - P(background)
    stage: np.ndarray     # (H,W) int32, most likely skeleton stage (1-based)
    scale: np.ndarray     # (H,W) float32, predicted scale in pixels


@dataclass
class ThinnedSkeleton:
    support: np.ndarray   # (H,W) bool, unit-width survivor set
    values: np.ndarray    # (H,W) float32, response retained on the support


def predict(acts, receptive_fields):
    """Skeleton probability, most likely stage, and regressed scale.

    response = 1 - P(class 0); stage = argmax over skeleton classes (ties
    break to the shallowest stage); scale inverts the stage normalization
    of the chosen regressor, clamped into (0, r_stage].
    """
    if acts.scale_preds is None:
        raise ValueError("activations carry no scale regressors; use "
                         "fsds_scale_estimate for classification-only models")
    fused = acts.fused_probs
    response = (1.0 - fused[0]).astype(np.float32)
    stage = (np.argmax(fused[1:], axis=0) + 1).astype(np.int32)
    rf = np.asarray(receptive_fields, dtype=np.float32)
    pred_norm = np.stack(acts.scale_preds)  # (M,H,W)
    chosen = np.take_along_axis(pred_norm, stage[None] - 1, axis=0)[0]
    frac = np.clip((chosen + 1.0) / 2.0, 1e-6, 1.0)
    scale = (frac * rf[stage - 1]).astype(np.float32)
    return SkeletonResponse(response=response, stage=stage, scale=scale)


def _orientations(response, radius):
    """Local curve direction from second moments of the response."""
    size = 2 * radius + 1
    r = np.maximum(response, 0.0)
    h, w = r.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    m0 = ndimage.uniform_filter(r, size)
    my = ndimage.uniform_filter(r * yy, size)
    mx = ndimage.uniform_filter(r * xx, size)
    myy = ndimage.uniform_filter(r * yy * yy, size)
    mxx = ndimage.uniform_filter(r * xx * xx, size)
    mxy = ndimage.uniform_filter(r * xx * yy, size)
    safe = np.maximum(m0, 1e-12)
    cy, cx = my / safe, mx / safe
    syy = myy / safe - cy * cy
    sxx = mxx / safe - cx * cx
    sxy = mxy / safe - cx * cy
    return 0.5 * np.arctan2(2.0 * sxy, sxx - syy)


def _sample_bilinear(img, ys, xs):
    h, w = img.shape
    ys = np.clip(ys, 0, h - 1.001)
    xs = np.clip(xs, 0, w - 1.001)
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    ty = ys - y0
    tx = xs - x0
    return ((1 - ty) * (1 - tx) * img[y0, x0]
            + (1 - ty) * tx * img[y0, x0 + 1]
            + ty * (1 - tx) * img[y0 + 1, x0]
            + ty * tx * img[y0 + 1, x0 + 1])


def nms_thin(response, radius=2):
    """Suppress non-maxima across the local curve direction, then thin.

    Orientation comes from response second moments in a radius-r window;
    pixels beaten by an interpolated sample along the curve normal are
    dropped, and the surviving support is morphologically thinned so no
    2x2 block stays fully set (plateaus keep their center line).
    """
    r = np.asarray(response, dtype=np.float64)
    h, w = r.shape
    theta = _orientations(r, radius)
    ny, nx = np.cos(theta), -np.sin(theta)  # normal to the curve direction
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    keep = r > 0
    for d in range(1, radius + 1):
        for sgn in (-1.0, 1.0):
            smp = _sample_bilinear(r, yy + sgn * d * ny, xx + sgn * d * nx)
            keep &= r * _NMS_TOL >= smp
    support = thin(keep)
    values = np.where(support, r, 0.0).astype(np.float32)
    return ThinnedSkeleton(support=support, values=values)


def threshold_binarize(thinned, t):
    """Keep thinned pixels whose retained response reaches the threshold."""
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold {t} outside (0, 1)")
    return thinned.support & (thinned.values >= t)
