"""Instance-segmentation evaluation: Dice, detection F1, AJI, PQ.

All metrics are invariant to relabeling of either mask. Empty-vs-empty
conventions: Dice = 1, AJI = 1, PQ = DQ = SQ = 1, F1 = 1; one-sided empty
cases score 0 (except SQ, which is 1 when there are no matches).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MatchTable:
    """IoU>0.5 matching between GT and predicted instances."""

    pairs: list  # (gt_label, pred_label, intersection, union, iou)
    unmatched_gt: set = field(default_factory=set)
    unmatched_pred: set = field(default_factory=set)


@dataclass(frozen=True)
class EvalReport:
    dice: float
    f1: float
    aji: float
    pq: float
    dq: float
    sq: float
    tp: int
    fp: int
    fn: int

    def as_dict(self):
        return {
            "dice": self.dice, "f1": self.f1, "aji": self.aji,
            "pq": self.pq, "dq": self.dq, "sq": self.sq,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
        }


def _check_dims(gt, pred):
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"mask shapes differ: {gt.shape} vs {pred.shape}")
    return gt, pred


def dice(gt, pred):
    """Binary Dice over foreground pixels; both empty -> 1.0."""
    gt, pred = _check_dims(gt, pred)
    a = gt > 0
    b = pred > 0
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def _intersection_table(gt, pred):
    """Pairwise intersections and per-instance areas via one joint bincount."""
    gt_labels = np.unique(gt[gt > 0])
    pred_labels = np.unique(pred[pred > 0])
    gt_area = {int(g): int((gt == g).sum()) for g in gt_labels}
    pred_area = {int(p): int((pred == p).sum()) for p in pred_labels}
    both = (gt > 0) & (pred > 0)
    inter = {}
    if both.any():
        g = gt[both].astype(np.int64)
        p = pred[both].astype(np.int64)
        span = int(p.max()) + 1
        counts = np.bincount(g * span + p)
        for flat in np.nonzero(counts)[0]:
            inter[(int(flat // span), int(flat % span))] = int(counts[flat])
    return gt_area, pred_area, inter


def aji(gt, pred):
    """Aggregated Jaccard Index.

    GT instances are visited in ascending label order; each grabs the
    still-unused overlapping prediction with the highest IoU (ties to the
    lower prediction label). Unmatched GT areas and never-used prediction
    areas inflate the denominator.
    """
    gt, pred = _check_dims(gt, pred)
    gt_area, pred_area, inter = _intersection_table(gt, pred)
    if not gt_area and not pred_area:
        return 1.0
    overlaps = {}
    for (g, p), i in inter.items():
        overlaps.setdefault(g, []).append((p, i))
    used = set()
    c = 0
    u = 0
    for g in sorted(gt_area):
        best = None
        for p, i in overlaps.get(g, []):
            if p in used:
                continue
            iou = i / (gt_area[g] + pred_area[p] - i)
            if best is None or iou > best[0] or (iou == best[0] and p < best[1]):
                best = (iou, p, i)
        if best is None:
            u += gt_area[g]
            continue
        _, p, i = best
        used.add(p)
        c += i
        u += gt_area[g] + pred_area[p] - i
    for p, area in pred_area.items():
        if p not in used:
            u += area
    return c / u if u > 0 else 1.0


def match_table(gt, pred):
    """Unique IoU>0.5 matches (at most one partner each side)."""
    gt, pred = _check_dims(gt, pred)
    gt_area, pred_area, inter = _intersection_table(gt, pred)
    pairs = []
    matched_gt = set()
    matched_pred = set()
    for (g, p), i in sorted(inter.items()):
        union = gt_area[g] + pred_area[p] - i
        iou = i / union
        if iou > 0.5:
            pairs.append((g, p, i, union, iou))
            matched_gt.add(g)
            matched_pred.add(p)
    return MatchTable(
        pairs=pairs,
        unmatched_gt=set(gt_area) - matched_gt,
        unmatched_pred=set(pred_area) - matched_pred,
    )


def pq(gt, pred):
    """Panoptic quality; returns (pq, dq, sq)."""
    gt, pred = _check_dims(gt, pred)
    table = match_table(gt, pred)
    tp = len(table.pairs)
    fp = len(table.unmatched_pred)
    fn = len(table.unmatched_gt)
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    dq = tp / (tp + 0.5 * fp + 0.5 * fn)
    sq = float(np.mean([m[4] for m in table.pairs])) if tp else 1.0
    return dq * sq, dq, sq


def f1_detect(gt, pred):
    """Detection F1 at the IoU>0.5 matching."""
    gt, pred = _check_dims(gt, pred)
    table = match_table(gt, pred)
    tp = len(table.pairs)
    fp = len(table.unmatched_pred)
    fn = len(table.unmatched_gt)
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def evaluate(gt, pred):
    """Full report for one mask pair."""
    table = match_table(gt, pred)
    tp = len(table.pairs)
    fp = len(table.unmatched_pred)
    fn = len(table.unmatched_gt)
    pq_v, dq_v, sq_v = pq(gt, pred)
    return EvalReport(
        dice=dice(gt, pred), f1=f1_detect(gt, pred), aji=aji(gt, pred),
        pq=pq_v, dq=dq_v, sq=sq_v, tp=tp, fp=fp, fn=fn,
    )
