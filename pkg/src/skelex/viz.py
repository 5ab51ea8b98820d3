"""Deterministic PNG/SVG emitters for responses, overlays and PR plots."""

import base64
import io

import numpy as np
from PIL import Image

from .util import atomic_write_text

# few-anchor heat colormap for scale coloring (small -> blue, large -> red)
_ANCHORS = np.array([
    [0.0, 0.2, 0.4, 1.0],
    [0.35, 0.1, 0.8, 0.6],
    [0.65, 0.9, 0.7, 0.1],
    [1.0, 0.9, 0.1, 0.1],
])


def scale_color(t):
    t = float(np.clip(t, 0.0, 1.0))
    xs = _ANCHORS[:, 0]
    i = int(np.searchsorted(xs, t, side="right")) - 1
    i = min(max(i, 0), len(xs) - 2)
    u = (t - xs[i]) / (xs[i + 1] - xs[i])
    rgb = (1 - u) * _ANCHORS[i, 1:] + u * _ANCHORS[i + 1, 1:]
    return "#%02x%02x%02x" % tuple(int(round(255 * c)) for c in rgb)


def response_png_bytes(response):
    arr = (np.clip(response, 0.0, 1.0) * 255).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def overlay_svg(image, support, scale, path, max_scale=None):
    """Grayscale image with skeleton pixels colored by predicted scale."""
    h, w = image.shape
    png = base64.b64encode(
        response_png_bytes(np.asarray(image, dtype=np.float64))).decode()
    smax = float(max_scale) if max_scale else max(float(
        np.max(np.where(support, scale, 0.0))), 1.0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<image width="{w}" height="{h}" '
        f'href="data:image/png;base64,{png}"/>',
    ]
    ys, xs = np.nonzero(support)
    for y, x in zip(ys.tolist(), xs.tolist()):
        color = scale_color(scale[y, x] / smax)
        parts.append(f'<rect x="{x}" y="{y}" width="1" height="1" '
                     f'fill="{color}"/>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts))


def pr_svg(curve, path, size=420, margin=45):
    """Recall/precision polyline with the best-F point marked."""
    inner = size - 2 * margin

    def px(r):
        return margin + r * inner

    def py(p):
        return size - margin - p * inner

    pts = " ".join(f"{px(r):.2f},{py(p):.2f}"
                   for r, p in zip(curve.recall, curve.precision))
    bi = curve.best_index
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
        f'height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{inner}" height="{inner}" '
        f'fill="none" stroke="#888"/>',
    ]
    for v in (0.25, 0.5, 0.75):
        parts.append(f'<line x1="{px(v):.1f}" y1="{py(0):.1f}" '
                     f'x2="{px(v):.1f}" y2="{py(1):.1f}" stroke="#ddd"/>')
        parts.append(f'<line x1="{px(0):.1f}" y1="{py(v):.1f}" '
                     f'x2="{px(1):.1f}" y2="{py(v):.1f}" stroke="#ddd"/>')
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#c33" '
                 f'stroke-width="1.5"/>')
    parts.append(f'<circle cx="{px(curve.recall[bi]):.2f}" '
                 f'cy="{py(curve.precision[bi]):.2f}" r="3" fill="#33c"/>')
    parts.append(f'<text x="{size / 2:.0f}" y="{size - 10}" '
                 f'text-anchor="middle" font-size="12">recall</text>')
    parts.append(f'<text x="12" y="{size / 2:.0f}" text-anchor="middle" '
                 f'font-size="12" transform="rotate(-90 12 '
                 f'{size / 2:.0f})">precision</text>')
    parts.append(f'<text x="{margin}" y="{margin - 8}" font-size="12">'
                 f'best F = {curve.best_f:.3f} at t = '
                 f'{curve.best_threshold:.2f}</text>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts))


def segment_label_png(masks, shape, path):
    """Segment masks as one gray level per segment id; first id wins overlaps."""
    from .util import atomic_write_bytes

    if len(masks) > 254:
        raise ValueError(f"{len(masks)} segments exceed 8-bit labeling")
    canvas = np.zeros(shape, dtype=np.uint8)
    for sid, mask in enumerate(masks, start=1):
        canvas[(canvas == 0) & mask] = sid
    buf = io.BytesIO()
    Image.fromarray(canvas, mode="L").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
