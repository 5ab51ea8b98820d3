"""Multi-stage side-output network: heads, scale-specific fusion, losses.

Stage i carries two sibling 1x1-conv heads on its last backbone conv: a
localization head with i+1 class channels (class k = quantized scale k,
class 0 = background) and a scale regressor with one channel. Head maps
are upsampled to input resolution with fixed bilinear weights. Class-k
score maps from all stages that can see class k are fused by a per-class
weight vector; fused scores are softmaxed into the final distribution.

Losses: per-stage class-balanced softmax loss + lambda * masked MSE on
normalized scales, plus the same balanced softmax loss on the fused
scores. Backward passes are hand-written and finite-difference checked.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gt import StageTargets  # noqa: F401  (re-exported for callers)
from .util import rng_stream

EPS_LOG = 1e-12


@dataclass
class NetworkParams:
    spec: T.BackboneSpec
    model: str                      # "lmsds" (with regressors) or "fsds"
    params: dict                    # id -> Parameter, insertion-ordered

    @property
    def num_stages(self):
        return len(self.spec.stages)

    def parameters(self):
        return list(self.params.values())

    def p(self, pid):
        return self.params[pid]

    def fusion_weights(self, k):
        return self.params[f"fusion.k{k}.weight"]


def fusion_stage_range(k, num_stages):
    """Stages contributing to fused class k: max(k, 1) .. M (1-based)."""
    return range(max(k, 1), num_stages + 1)


def init_params(spec, seed=0, model="lmsds", fusion_lr_mult=1.0):
    """He-initialized backbone, zero heads, uniform per-class fusion weights."""
    if model not in ("lmsds", "fsds"):
        raise ValueError(f"unknown model {model!r}")
    rng = rng_stream(seed, "init")
    params = {}

    def add(pid, value, lr_mult=1.0):
        params[pid] = T.Parameter(id=pid, value=value, lr_mult=lr_mult)

    in_ch = spec.in_channels
    for si, stage in enumerate(spec.stages, start=1):
        for ci, conv in enumerate(stage.convs, start=1):
            fan_in = in_ch * conv.kernel * conv.kernel
            w = rng.standard_normal(
                (conv.channels, in_ch, conv.kernel, conv.kernel))
            w *= np.sqrt(2.0 / fan_in)
            add(f"backbone.s{si}.c{ci}.weight", w.astype(np.float32))
            add(f"backbone.s{si}.c{ci}.bias", np.zeros(conv.channels))
            in_ch = conv.channels
    chans = spec.stage_channels()
    m = len(spec.stages)
    for i in range(1, m + 1):
        add(f"loc{i}.weight", np.zeros((i + 1, chans[i - 1], 1, 1)))
        add(f"loc{i}.bias", np.zeros(i + 1))
        if model == "lmsds":
            add(f"scale{i}.weight", np.zeros((1, chans[i - 1], 1, 1)))
            add(f"scale{i}.bias", np.zeros(1))
    for k in range(0, m + 1):
        n = len(list(fusion_stage_range(k, m)))
        add(f"fusion.k{k}.weight", np.full(n, 1.0 / n),
            lr_mult=fusion_lr_mult)
    return NetworkParams(spec=spec, model=model, params=params)


# ---------------------------------------------------------------------------
# forward

def _softmax_channels(x):
    """Channel-axis softmax in float64 (numerically stable)."""
    x = x.astype(np.float64)
    x -= x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class SsoActivations:
    logits: list          # per stage: (i+1, H, W) float32, input resolution
    stage_probs: list     # per stage: (i+1, H, W) float64 softmax
    scale_preds: list | None  # per stage: (H, W) float32, None for fsds
    fused_scores: np.ndarray  # (M+1, H, W) float64
    fused_probs: np.ndarray   # (M+1, H, W) float64
    cache: dict               # everything backward() needs


def forward(net, image):
    """Run the network on one image (H,W) or (C,H,W); returns activations."""
    x = np.asarray(image, dtype=np.float32)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] != net.spec.in_channels:
        raise T.ShapeError(
            f"image shape {np.asarray(image).shape} incompatible with "
            f"{net.spec.in_channels}-channel backbone")
    h, w = x.shape[1:]
    mult = net.spec.deepest_stride()
    ph = (mult - h % mult) % mult
    pw = (mult - w % mult) % mult
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw)))
    x = x[None]  # batch of one

    m = net.num_stages
    strides = net.spec.stage_strides()
    stage_caches = []
    feats = []
    for si, stage in enumerate(net.spec.stages, start=1):
        convs = []
        for ci in range(1, len(stage.convs) + 1):
            wgt = net.p(f"backbone.s{si}.c{ci}.weight")
            bia = net.p(f"backbone.s{si}.c{ci}.bias")
            k = wgt.value.shape[2]
            x, ccache = T.conv2d_forward(x, wgt.value, bia.value,
                                         stride=stage.convs[ci - 1].stride,
                                         pad=k // 2)
            x, rcache = T.relu_forward(x)
            convs.append((ccache, rcache))
        feats.append(x)
        pcache = None
        if stage.pool is not None and si < m:
            x, pcache = T.maxpool_forward(x, stage.pool.window,
                                          stage.pool.stride)
        stage_caches.append({"convs": convs, "pool": pcache})
        if not np.all(np.isfinite(feats[-1])):
            raise T.NonFiniteError(f"non-finite activation in stage {si}")

    logits, stage_probs, loc_caches = [], [], []
    scale_preds = [] if net.model == "lmsds" else None
    scale_caches = [] if net.model == "lmsds" else None
    for i in range(1, m + 1):
        feat = feats[i - 1]
        a, ccache = T.conv2d_forward(feat, net.p(f"loc{i}.weight").value,
                                     net.p(f"loc{i}.bias").value)
        a, ucache = T.bilinear_upsample_forward(a, strides[i - 1])
        a = a[:, :, :h, :w]
        logits.append(a[0])
        stage_probs.append(_softmax_channels(a)[0])
        loc_caches.append((ccache, ucache))
        if net.model == "lmsds":
            s, scc = T.conv2d_forward(feat, net.p(f"scale{i}.weight").value,
                                      net.p(f"scale{i}.bias").value)
            s, suc = T.bilinear_upsample_forward(s, strides[i - 1])
            scale_preds.append(s[0, 0, :h, :w])
            scale_caches.append((scc, suc))

    fused = np.zeros((m + 1, h, w), dtype=np.float64)
    for k in range(0, m + 1):
        hk = net.fusion_weights(k).value
        for pos, i in enumerate(fusion_stage_range(k, m)):
            fused[k] += hk[pos] * stage_probs[i - 1][k]
    fused_probs = _softmax_channels(fused[None])[0]

    cache = {
        "padded_hw": (h + ph, w + pw),
        "hw": (h, w),
        "stages": stage_caches,
        "loc": loc_caches,
        "scale": scale_caches,
        "feat_shapes": [f.shape for f in feats],
    }
    return SsoActivations(logits=logits, stage_probs=stage_probs,
                          scale_preds=scale_preds, fused_scores=fused,
                          fused_probs=fused_probs, cache=cache)


# ---------------------------------------------------------------------------
# losses

def class_balance_weights(cls_map, num_classes):
    """Inverse-frequency class weights, normalized to sum 1 (float64).

    Classes absent from the map get weight 0 and are excluded from the
    normalization; their pixels cannot contribute to the loss anyway.
    """
    counts = np.bincount(np.asarray(cls_map).ravel(),
                         minlength=num_classes + 1).astype(np.float64)
    inv = np.zeros_like(counts)
    present = counts > 0
    inv[present] = 1.0 / counts[present]
    return inv / inv.sum()


def weighted_softmax_loss(scores, cls_map, beta):
    """Class-balanced softmax loss and its gradient w.r.t. the scores.

    loss = -(1/|X|) sum_j beta[z_j] log P(z_j); the gradient at channel l
    is (1/|X|) (beta[z_j] P_l - beta_l 1(z_j = l)).
    """
    scores = np.asarray(scores, dtype=np.float64)
    k1, h, w = scores.shape
    npix = h * w
    probs = _softmax_channels(scores[None])[0]
    z = np.asarray(cls_map)
    if z.shape != (h, w):
        raise ValueError(f"label map {z.shape} vs scores {scores.shape}")
    if z.min() < 0 or z.max() >= k1:
        raise ValueError(f"labels outside 0..{k1 - 1}")
    bz = beta[z]
    pz = np.take_along_axis(probs, z[None], axis=0)[0]
    loss = -(bz * np.log(np.maximum(pz, EPS_LOG))).sum() / npix
    grad = (bz[None] * probs) / npix
    at_true = np.take_along_axis(grad, z[None], axis=0)
    np.put_along_axis(grad, z[None], at_true - bz[None] / npix, axis=0)
    return float(loss), grad


def scale_regression_loss(pred, target, valid):
    """Mean squared error over valid pixels; zero pixels -> zero loss/grad."""
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    diff = np.where(valid, np.asarray(pred, dtype=np.float64) - target, 0.0)
    if n == 0:
        return 0.0, np.zeros_like(diff)
    loss = float((diff * diff).sum() / n)
    return loss, 2.0 * diff / n


@dataclass
class LossBreakdown:
    cls: list        # per-stage classification losses
    reg: list        # per-stage regression losses (0 when lambda == 0)
    fusion: float
    lam: float

    @property
    def side(self):
        return sum(c + self.lam * r for c, r in zip(self.cls, self.reg))

    @property
    def total(self):
        return self.side + self.fusion


def _softmax_backward(probs, gprobs):
    """Gradient through a channel softmax: P * (g - sum_k g_k P_k)."""
    dot = (gprobs * probs).sum(axis=0, keepdims=True)
    return probs * (gprobs - dot)


def _embed(grad, padded_hw):
    """Adjoint of the crop-to-original step: zero-pad back to padded size."""
    k1 = grad.shape[0]
    out = np.zeros((1, k1) + padded_hw, dtype=np.float32)
    out[0, :, :grad.shape[1], :grad.shape[2]] = grad
    return out


def total_objective(net, image, targets, z_map, lam):
    """Forward + all losses + full backward; gradients accumulate in place.

    targets: list of StageTargets (one per stage); z_map: full-resolution
    quantized scale map for the fusion loss. Returns (breakdown, acts).
    """
    acts = forward(net, image)
    m = net.num_stages
    if len(targets) != m:
        raise ValueError(f"expected {m} stage targets, got {len(targets)}")
    h, w = acts.cache["hw"]

    cls_losses, reg_losses = [], []
    g_logits = []
    g_scales = [] if net.model == "lmsds" else None
    for i in range(1, m + 1):
        tg = targets[i - 1]
        beta = class_balance_weights(tg.cls, i)
        li, gi = weighted_softmax_loss(acts.logits[i - 1], tg.cls, beta)
        cls_losses.append(li)
        g_logits.append(gi)
        if lam != 0.0 and net.model == "lmsds":
            lr_, gr = scale_regression_loss(acts.scale_preds[i - 1],
                                            tg.reg, tg.valid)
            reg_losses.append(lr_)
            g_scales.append(lam * gr)
        else:
            reg_losses.append(0.0)
            if g_scales is not None:
                g_scales.append(None)

    beta_f = class_balance_weights(z_map, m)
    fusion_l, g_fused = weighted_softmax_loss(acts.fused_scores, z_map, beta_f)

    # fused scores -> fusion weights and per-stage probabilities
    g_stage_probs = [np.zeros_like(p) for p in acts.stage_probs]
    for k in range(0, m + 1):
        hk = net.fusion_weights(k)
        gf_k = g_fused[k]
        for pos, i in enumerate(fusion_stage_range(k, m)):
            pik = acts.stage_probs[i - 1][k]
            hk.grad[pos] += float((gf_k * pik).sum())
            g_stage_probs[i - 1][k] += hk.value[pos] * gf_k

    # through each stage softmax, joined with the direct Eq-gradient path
    g_feats = [np.zeros(s, dtype=np.float32)
               for s in acts.cache["feat_shapes"]]
    for i in range(1, m + 1):
        ga = g_logits[i - 1] + _softmax_backward(acts.stage_probs[i - 1],
                                                 g_stage_probs[i - 1])
        ccache, ucache = acts.cache["loc"][i - 1]
        g = _embed(ga.astype(np.float32), acts.cache["padded_hw"])
        g = T.bilinear_upsample_backward(g, ucache)
        gx, gw, gb = T.conv2d_backward(g, ccache)
        net.p(f"loc{i}.weight").grad += gw
        net.p(f"loc{i}.bias").grad += gb
        g_feats[i - 1] += gx
        if g_scales is not None and g_scales[i - 1] is not None:
            scc, suc = acts.cache["scale"][i - 1]
            g = _embed(g_scales[i - 1][None].astype(np.float32),
                       acts.cache["padded_hw"])
            g = T.bilinear_upsample_backward(g, suc)
            gx, gw, gb = T.conv2d_backward(g, scc)
            net.p(f"scale{i}.weight").grad += gw
            net.p(f"scale{i}.bias").grad += gb
            g_feats[i - 1] += gx

    # backbone, deepest stage first
    g_into_next = None
    for si in range(m, 0, -1):
        stage_cache = acts.cache["stages"][si - 1]
        g = g_feats[si - 1]
        if g_into_next is not None:
            g = g + T.maxpool_backward(g_into_next, stage_cache["pool"])
        for ci in range(len(stage_cache["convs"]), 0, -1):
            ccache, rcache = stage_cache["convs"][ci - 1]
            g = T.relu_backward(g, rcache)
            gx, gw, gb = T.conv2d_backward(g, ccache)
            net.p(f"backbone.s{si}.c{ci}.weight").grad += gw
            net.p(f"backbone.s{si}.c{ci}.bias").grad += gb
            g = gx
        g_into_next = g

    breakdown = LossBreakdown(cls=cls_losses, reg=reg_losses,
                              fusion=fusion_l, lam=lam)
    return breakdown, acts
