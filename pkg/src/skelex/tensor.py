"""Minimal dense NCHW tensor ops with hand-written forward/backward passes.

Only the operations the side-output network actually needs. Forward results
are float32; convolution and upsampling accumulate in float64 before the
final cast so finite-difference checks stay tight. All functions are pure:
backward passes take the cache returned by the matching forward.
"""

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


class NonFiniteError(RuntimeError):
    """Raised when a value that must be finite is not."""


@dataclass
class Parameter:
    """A trainable array with an accumulated gradient and a stable id."""

    id: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    lr_mult: float = 1.0

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float32)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ShapeError(
                f"parameter {self.id}: grad shape {self.grad.shape} "
                f"!= value shape {self.value.shape}")

    def zero_grad(self):
        self.grad.fill(0.0)


# ---------------------------------------------------------------------------
# convolution

def _im2col(x, k, stride, pad):
    """Window view of x as (n, oh*ow, c*k*k)."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv output empty for input {h}x{w}, k={k}, "
                         f"stride={stride}, pad={pad}")
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, c, oh, ow, k, k), (s0, s1, s2 * stride, s3 * stride, s2, s3))
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, c * k * k)
    return np.ascontiguousarray(cols), oh, ow


def conv2d_forward(x, weight, bias, stride=1, pad=0):
    """Cross-correlate x (n,c,h,w) with weight (oc,c,k,k); returns (y, cache)."""
    oc, ic, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"non-square kernel {weight.shape}")
    if x.ndim != 4 or x.shape[1] != ic:
        raise ShapeError(f"conv input {x.shape} incompatible with kernel "
                         f"{weight.shape}")
    cols, oh, ow = _im2col(x, k, stride, pad)
    n = x.shape[0]
    wmat = weight.reshape(oc, -1).astype(np.float64)
    y = cols.astype(np.float64) @ wmat.T + bias.astype(np.float64)
    y = y.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2).astype(np.float32)
    cache = (x.shape, cols, weight, stride, pad, oh, ow)
    return y, cache


def conv2d_backward(gy, cache):
    """Gradients w.r.t. (input, weight, bias) for conv2d_forward."""
    x_shape, cols, weight, stride, pad, oh, ow = cache
    n, c, h, w = x_shape
    oc, ic, k, _ = weight.shape
    g2 = gy.transpose(0, 2, 3, 1).reshape(n, oh * ow, oc).astype(np.float64)
    cols64 = cols.astype(np.float64)
    gw = np.einsum("nlo,nlk->ok", g2, cols64).reshape(weight.shape)
    gb = gy.sum(axis=(0, 2, 3), dtype=np.float64)
    gcols = g2 @ weight.reshape(oc, -1).astype(np.float64)
    # scatter columns back onto the (padded) input grid
    gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    gc = gcols.reshape(n, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    for ki in range(k):
        for kj in range(k):
            gxp[:, :, ki:ki + oh * stride:stride,
                kj:kj + ow * stride:stride] += gc[:, :, ki, kj]
    gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
    return (gx.astype(np.float32), gw.astype(np.float32),
            gb.astype(np.float32))


# ---------------------------------------------------------------------------
# pointwise / pooling

def relu_forward(x):
    y = np.maximum(x, 0.0)
    return y, (x > 0.0)


def relu_backward(gy, cache):
    return gy * cache


def maxpool_forward(x, window, stride):
    """Max pool; ties route the gradient to the first window position."""
    n, c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"pool output empty for input {h}x{w}")
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, c, oh, ow, window, window),
        (s0, s1, s2 * stride, s3 * stride, s2, s3))
    flat = view.reshape(n, c, oh, ow, window * window)
    arg = flat.argmax(axis=4)
    y = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
    cache = (x.shape, window, stride, arg, oh, ow)
    return np.ascontiguousarray(y), cache


def maxpool_backward(gy, cache):
    x_shape, window, stride, arg, oh, ow = cache
    n, c, h, w = x_shape
    gx = np.zeros(x_shape, dtype=np.float32)
    oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    ry = oy * stride + arg // window
    rx = ox * stride + arg % window
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(gx, (ni, ci, ry, rx), gy)
    return gx


# ---------------------------------------------------------------------------
# fixed bilinear upsampling

def bilinear_matrix(size_in, factor):
    """(size_in*factor, size_in) interpolation matrix, rows sum to 1."""
    size_out = size_in * factor
    a = np.zeros((size_out, size_in), dtype=np.float64)
    src = (np.arange(size_out) + 0.5) / factor - 0.5
    i0 = np.floor(src).astype(int)
    t = src - i0
    lo = np.clip(i0, 0, size_in - 1)
    hi = np.clip(i0 + 1, 0, size_in - 1)
    rows = np.arange(size_out)
    np.add.at(a, (rows, lo), 1.0 - t)
    np.add.at(a, (rows, hi), t)
    return a


def bilinear_upsample_forward(x, factor):
    """Upsample (n,c,h,w) by an integer factor with fixed bilinear weights."""
    if factor < 1 or (factor & (factor - 1)) != 0:
        raise ShapeError(f"upsample factor {factor} is not a power of two")
    if factor == 1:
        return x.copy(), (x.shape, None, None)
    n, c, h, w = x.shape
    ah = bilinear_matrix(h, factor)
    aw = bilinear_matrix(w, factor)
    t = np.tensordot(x.astype(np.float64), aw, axes=([3], [1]))
    y = np.tensordot(t, ah, axes=([2], [1])).transpose(0, 1, 3, 2)
    return y.astype(np.float32), (x.shape, ah, aw)


def bilinear_upsample_backward(gy, cache):
    x_shape, ah, aw = cache
    if ah is None:
        return gy.copy()
    t = np.tensordot(gy.astype(np.float64), aw.T, axes=([3], [1]))
    gx = np.tensordot(t, ah.T, axes=([2], [1])).transpose(0, 1, 3, 2)
    return gx.astype(np.float32)


# ---------------------------------------------------------------------------
# channel plumbing

def concat_channels(tensors):
    hw = {t.shape[2:] for t in tensors}
    if len(hw) != 1:
        raise ShapeError(f"concat with mismatched spatial sizes: {sorted(hw)}")
    return np.concatenate(tensors, axis=1)


def slice_channel(x, k):
    if not 0 <= k < x.shape[1]:
        raise ShapeError(f"channel {k} out of range for {x.shape}")
    return x[:, k:k + 1]


# ---------------------------------------------------------------------------
# backbone description

@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    channels: int
    stride: int = 1


@dataclass(frozen=True)
class PoolSpec:
    window: int
    stride: int


@dataclass(frozen=True)
class StageSpec:
    convs: tuple
    pool: PoolSpec | None = None


@dataclass(frozen=True)
class BackboneSpec:
    """Ordered conv stages; side-output heads attach to each stage's last conv."""

    stages: tuple
    in_channels: int = 1

    def __post_init__(self):
        rf = self.receptive_fields()
        if any(b <= a for a, b in zip(rf, rf[1:])):
            raise ShapeError(f"receptive fields not strictly increasing: {rf}")

    def receptive_fields(self):
        """Receptive field at the last conv of each stage (r += (k-1)*jump)."""
        r, jump, out = 1, 1, []
        for stage in self.stages:
            for conv in stage.convs:
                r += (conv.kernel - 1) * jump
                jump *= conv.stride
            out.append(r)
            if stage.pool is not None:
                r += (stage.pool.window - 1) * jump
                jump *= stage.pool.stride
        return out

    def stage_strides(self):
        """Total stride at the last conv of each stage."""
        jump, out = 1, []
        for stage in self.stages:
            for conv in stage.convs:
                jump *= conv.stride
            out.append(jump)
            if stage.pool is not None:
                jump *= stage.pool.stride
        return out

    def stage_channels(self):
        return [stage.convs[-1].channels for stage in self.stages]

    def deepest_stride(self):
        return max(self.stage_strides())

    def to_config(self):
        return {
            "in_channels": self.in_channels,
            "stages": [
                {
                    "convs": [[c.kernel, c.channels, c.stride]
                              for c in stage.convs],
                    "pool": ([stage.pool.window, stage.pool.stride]
                             if stage.pool else None),
                }
                for stage in self.stages
            ],
        }

    @staticmethod
    def from_config(cfg):
        stages = tuple(
            StageSpec(
                convs=tuple(ConvSpec(*c) for c in stage["convs"]),
                pool=PoolSpec(*stage["pool"]) if stage["pool"] else None,
            )
            for stage in cfg["stages"]
        )
        return BackboneSpec(stages=stages, in_channels=cfg["in_channels"])


def desk_backbone(in_channels=1):
    """Default 4-stage backbone: two 3x3 convs per stage, 2x2 pools between.

    Head receptive fields come out as (5, 14, 32, 68) with strides
    (1, 2, 4, 8); narrow enough to train from scratch on a CPU.
    """
    widths = (16, 32, 64, 128)
    stages = []
    for i, ch in enumerate(widths):
        pool = PoolSpec(2, 2) if i < len(widths) - 1 else None
        stages.append(StageSpec(convs=(ConvSpec(3, ch), ConvSpec(3, ch)),
                                pool=pool))
    return BackboneSpec(stages=tuple(stages), in_channels=in_channels)


def vgg16_backbone(in_channels=3):
    """VGG-16 style reference spec (head fields 5, 14, 40, 92, 196)."""
    plan = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)]
    stages = []
    for i, (n, ch) in enumerate(plan):
        pool = PoolSpec(2, 2) if i < len(plan) - 1 else None
        stages.append(StageSpec(convs=tuple(ConvSpec(3, ch) for _ in range(n)),
                                pool=pool))
    return BackboneSpec(stages=tuple(stages), in_channels=in_channels)


# ---------------------------------------------------------------------------
# optimizer

class SgdMomentum:
    """SGD with classical momentum and L2 weight decay.

    v <- momentum*v - lr*(g + weight_decay*w);  w <- w + v.
    Deterministic given parameter iteration order; per-parameter lr_mult
    scales the learning rate (fusion layers train faster, as configured).
    """

    def __init__(self, lr, momentum=0.0, weight_decay=0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = {}

    def step(self, params):
        for p in params:
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in parameter {p.id}")
            v = self._velocity.get(p.id)
            if v is None:
                v = np.zeros_like(p.value)
            v = self.momentum * v - (self.lr * p.lr_mult) * (
                g + self.weight_decay * p.value)
            p.value += v
            self._velocity[p.id] = v

    def state(self):
        return dict(self._velocity)

    def load_state(self, state):
        self._velocity = {k: np.asarray(v, dtype=np.float32)
                          for k, v in state.items()}
