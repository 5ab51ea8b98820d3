"""Synthetic desk-scale dataset: ribbons, ellipses and rounded polygons
over textured grayscale backgrounds, with exact foreground masks.

Every sample is a pure function of its seed, so regenerated datasets are
byte-identical. Shape thickness is capped so that rho * max_scale stays
below the deepest receptive field of the default backbone.
"""

import numpy as np
from scipy import ndimage

SHAPE_KINDS = ("ribbon", "ellipse", "polygon")

_MARGIN = 3


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size]
    return yy.astype(np.float64), xx.astype(np.float64)


def _ribbon(rng, size, wmin, wmax):
    """Tube around a smooth low-curvature path with slowly varying width."""
    width0 = rng.uniform(wmin, wmax)
    length = rng.uniform(0.45, 0.8) * size
    ang = rng.uniform(0, np.pi)
    cx = size / 2 + rng.uniform(-size / 8, size / 8)
    cy = size / 2 + rng.uniform(-size / 8, size / 8)
    t = np.linspace(-0.5, 0.5, 350)
    px = cx + length * t * np.cos(ang)
    py = cy + length * t * np.sin(ang)
    # perpendicular wiggle, amplitude limited so curvature radius >> width
    wavelength = rng.uniform(0.6, 1.3) * size
    amp_cap = 0.6 * (wavelength / (2 * np.pi)) ** 2 / max(width0, 1.0)
    amp = min(rng.uniform(1.5, 9.0), amp_cap)
    phase = rng.uniform(0, 2 * np.pi)
    wig = amp * np.sin(2 * np.pi * (t + 0.5) * size / wavelength + phase)
    px += -np.sin(ang) * wig
    py += np.cos(ang) * wig
    # slowly varying width profile, clipped to the configured bounds
    wamp = rng.uniform(0.0, 0.25) * width0
    wfreq = rng.uniform(0.5, 1.2)
    wphase = rng.uniform(0, 2 * np.pi)
    widths = np.clip(width0 + wamp * np.sin(2 * np.pi * wfreq * t + wphase),
                     wmin, wmax)
    yy, xx = _grid(size)
    signed = np.full((size, size), np.inf)
    for (sx, sy, wd) in zip(px, py, widths):
        d = np.hypot(xx - sx, yy - sy) - wd / 2.0
        np.minimum(signed, d, out=signed)
    return signed <= 0


def _ellipse(rng, size):
    b = rng.uniform(2.5, 13.0)
    a = rng.uniform(b + 1.5, min(size * 0.42, 3.5 * b + 12.0))
    ang = rng.uniform(0, np.pi)
    cx = size / 2 + rng.uniform(-size / 6, size / 6)
    cy = size / 2 + rng.uniform(-size / 6, size / 6)
    yy, xx = _grid(size)
    u = (xx - cx) * np.cos(ang) + (yy - cy) * np.sin(ang)
    v = -(xx - cx) * np.sin(ang) + (yy - cy) * np.cos(ang)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _polygon(rng, size):
    """Rounded convex polygon: hull of a jittered vertex fan, dilated."""
    nv = int(rng.integers(3, 6))
    angs = np.sort(rng.uniform(0, 2 * np.pi, nv))
    radii = rng.uniform(7.0, 19.0, nv)
    cx = size / 2 + rng.uniform(-size / 6, size / 6)
    cy = size / 2 + rng.uniform(-size / 6, size / 6)
    vx = cx + radii * np.cos(angs)
    vy = cy + radii * np.sin(angs)
    yy, xx = _grid(size)
    inside = np.ones((size, size), dtype=bool)
    hull = np.arange(nv)
    for i in hull:
        j = (i + 1) % nv
        ex, ey = vx[j] - vx[i], vy[j] - vy[i]
        inside &= (ex * (yy - vy[i]) - ey * (xx - vx[i])) >= 0
    if not inside.any():
        return None
    rr = rng.uniform(2.0, 5.0)
    return ndimage.distance_transform_edt(~inside) <= rr


def _make_shape(rng, kind, size, ribbon_width):
    if kind == "ribbon":
        return _ribbon(rng, size, *ribbon_width)
    if kind == "ellipse":
        return _ellipse(rng, size)
    return _polygon(rng, size)


def _acceptable(mask, occupied, size, max_scale):
    if mask is None or mask.sum() < 50:
        return False
    border = np.zeros_like(mask)
    border[:_MARGIN], border[-_MARGIN:] = True, True
    border[:, :_MARGIN], border[:, -_MARGIN:] = True, True
    if (mask & border).any():
        return False
    if (mask & occupied).any():
        return False
    if 2.0 * ndimage.distance_transform_edt(mask).max() > max_scale:
        return False
    return True


def _texture(rng, size, sigma, amp):
    noise = rng.standard_normal((size, size))
    tex = ndimage.gaussian_filter(noise, sigma)
    return tex / (np.abs(tex).max() + 1e-9) * amp


def generate_image(seed, size=96, shape_mix=(0.5, 0.3, 0.2),
                   ribbon_width=(5.0, 30.0), max_scale=45.0):
    """One (image uint8, mask bool) pair with 1-2 disjoint shapes."""
    if size < 64:
        raise ValueError(f"size must be >= 64, got {size}")
    rng = np.random.default_rng(seed)
    mix = np.asarray(shape_mix, dtype=np.float64)
    if mix.sum() <= 0 or (mix < 0).any():
        raise ValueError(f"bad shape mix {shape_mix}")
    mix = mix / mix.sum()

    mask = np.zeros((size, size), dtype=bool)
    shapes = []
    want = 1 if rng.random() < 0.6 else 2
    attempts = 0
    while len(shapes) < want and attempts < 200:
        attempts += 1
        kind = SHAPE_KINDS[rng.choice(3, p=mix)]
        cand = _make_shape(rng, kind, size, ribbon_width)
        if _acceptable(cand, mask, size, max_scale):
            shapes.append(cand)
            mask |= cand
    if not shapes:
        raise RuntimeError(f"could not place any shape for seed {seed}")

    bg = rng.uniform(0.08, 0.38)
    img = bg + _texture(rng, size, sigma=3.0, amp=0.06)
    for shp in shapes:
        fg = rng.uniform(bg + 0.28, 0.95)
        img = np.where(shp, fg + _texture(rng, size, sigma=2.0, amp=0.05), img)
    img += rng.standard_normal((size, size)) * 0.015
    img = ndimage.gaussian_filter(img, 0.5)
    img = np.clip(img, 0.0, 1.0)
    return (img * 255).round().astype(np.uint8), mask


def generate_synthetic(seed, count, size=96, shape_mix=(0.5, 0.3, 0.2),
                       ribbon_width=(5.0, 30.0), max_scale=45.0):
    """Deterministic list of (image, mask) pairs for one root seed."""
    from .util import sample_seeds

    out = []
    for s in sample_seeds(seed, "datagen", count):
        out.append(generate_image(s, size=size, shape_mix=shape_mix,
                                  ribbon_width=ribbon_width,
                                  max_scale=max_scale))
    return out
