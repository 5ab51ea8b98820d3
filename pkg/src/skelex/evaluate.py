"""Localization and segmentation benchmarks.

Localization: tolerance-matched precision/recall over a threshold sweep,
one-to-one greedy nearest-first matching within kappa * image diagonal,
counts summed over the dataset before the division. Segmentation:
per-groundtruth-segment best F-score and size-weighted best IoU
(Covering).
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .infer import threshold_binarize

DEFAULT_KAPPA = 0.0075


def default_thresholds(count=99):
    return np.linspace(0.0, 1.0, count + 2)[1:-1]


def match_pairs(pred, gt, d_max):
    """Greedy nearest-first one-to-one matches as (pred_yx, gt_yx) pairs.

    Candidate pairs within d_max are taken closest first; ties break on
    pixel raster order, so matching is deterministic.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    pc = np.argwhere(pred)
    gc = np.argwhere(gt)
    if len(pc) == 0 or len(gc) == 0:
        return []
    if d_max <= 0:
        both = pred & gt
        return [(tuple(yx), tuple(yx)) for yx in np.argwhere(both)]
    pairs = []
    tree = cKDTree(gc)
    for pi, hits in enumerate(tree.query_ball_point(pc, d_max)):
        for gi in hits:
            d = float(np.hypot(*(pc[pi] - gc[gi])))
            pairs.append((d, pi, gi))
    pairs.sort()
    used_p = np.zeros(len(pc), dtype=bool)
    used_g = np.zeros(len(gc), dtype=bool)
    matched = []
    for _, pi, gi in pairs:
        if not used_p[pi] and not used_g[gi]:
            used_p[pi] = used_g[gi] = True
            matched.append((tuple(pc[pi]), tuple(gc[gi])))
    return matched


def match_skeletons(pred, gt, d_max):
    """Greedy nearest-first one-to-one matching; returns (tp, fp, fn)."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    tp = len(match_pairs(pred, gt, d_max))
    return tp, int(pred.sum()) - tp, int(gt.sum()) - tp


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    @property
    def f(self):
        p, r = self.precision, self.recall
        denom = np.where(p + r > 0, p + r, 1.0)
        return np.where(p + r > 0, 2 * p * r / denom, 0.0)

    @property
    def best_index(self):
        return int(np.argmax(self.f))

    @property
    def best_f(self):
        return float(self.f[self.best_index])

    @property
    def best_threshold(self):
        return float(self.thresholds[self.best_index])

    def rows(self):
        return list(zip(self.thresholds, self.precision, self.recall, self.f))


def pr_curve(thinned_list, gt_list, thresholds=None, kappa=DEFAULT_KAPPA):
    """Dataset precision/recall over a threshold sweep of thinned responses.

    thinned_list: ThinnedSkeleton per image; gt_list: boolean groundtruth
    skeleton per image. TP/FP/FN are summed over images per threshold.
    """
    if thresholds is None:
        thresholds = default_thresholds()
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if (np.diff(thresholds) <= 0).any() or thresholds[0] <= 0 \
            or thresholds[-1] >= 1:
        raise ValueError("thresholds must be strictly increasing in (0,1)")
    if len(thinned_list) != len(gt_list):
        raise ValueError("prediction/groundtruth count mismatch")
    tp = np.zeros(len(thresholds))
    fp = np.zeros(len(thresholds))
    fn = np.zeros(len(thresholds))
    for thinned, gtm in zip(thinned_list, gt_list):
        h, w = gtm.shape
        d_max = kappa * float(np.hypot(h, w))
        for ti, t in enumerate(thresholds):
            pred = threshold_binarize(thinned, t)
            a, b, c = match_skeletons(pred, gtm, d_max)
            tp[ti] += a
            fp[ti] += b
            fn[ti] += c
    precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
    recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
    return PRCurve(thresholds=thresholds, precision=precision, recall=recall)


@dataclass
class SegmentationScore:
    f_measure: float
    covering: float           # percent
    avg_num_segments: float


def _f_score(a, b):
    inter = float((a & b).sum())
    if inter == 0:
        return 0.0
    return 2.0 * inter / (float(a.sum()) + float(b.sum()))


def _iou(a, b):
    inter = float((a & b).sum())
    if inter == 0:
        return 0.0
    return inter / float((a | b).sum())


def seg_scores(generated_per_image, groundtruth_per_image):
    """Best-match F-measure and size-weighted Covering over the dataset."""
    if len(generated_per_image) != len(groundtruth_per_image):
        raise ValueError("image count mismatch")
    best_fs = []
    coverings = []
    seg_counts = []
    for gens, gts in zip(generated_per_image, groundtruth_per_image):
        seg_counts.append(len(gens))
        weighted = 0.0
        total = 0.0
        for gtm in gts:
            best_fs.append(max((_f_score(gtm, g) for g in gens), default=0.0))
            best_iou = max((_iou(gtm, g) for g in gens), default=0.0)
            weighted += float(gtm.sum()) * best_iou
            total += float(gtm.sum())
        if total > 0:
            coverings.append(weighted / total)
    return SegmentationScore(
        f_measure=float(np.mean(best_fs)) if best_fs else 0.0,
        covering=float(np.mean(coverings)) * 100.0 if coverings else 0.0,
        avg_num_segments=float(np.mean(seg_counts)) if seg_counts else 0.0)
