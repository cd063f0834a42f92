"""
Dataset and error analysis in the manner of DETAD:

- near_replicates: ground truths that overlap another moment of the same
  video by a tIoU of at least 0.9.
- classify_false_positives: error type of each of the top depth x G
  predictions and the mAP gained by removing each type.
- fn_breakdown: false negative rate per bin of a moment characteristic.
- sensitivity: normalized mAP per bin and its relative change.
"""
import logging
from collections import defaultdict, OrderedDict
from dataclasses import dataclass, field

import numpy as np

from momentlite.config import (
    REPLICATE_THRESHOLD, TIOU_STRONG, TIOU_WEAK, DEPTH_MULTIPLIER, DEFAULT_TIOU_THRESHOLDS
)
from momentlite.core import as_array, tiou_matrix, tiou_vector
from momentlite.evaluation import (
    PredictionSet, evaluate, greedy_match, score_order, group_by_video_and_label, interpolated_ap
)
from momentlite.utils import label_key, quantile_edges, rounded, silent

log = logging.getLogger(__name__)

TRUE_POSITIVE = "true_positive"
DOUBLE_DETECTION = "double_detection"
WRONG_LABEL = "wrong_label"
LOCALIZATION_ERROR = "localization_error"
CONFUSION_ERROR = "confusion_error"
BACKGROUND_ERROR = "background_error"
ERROR_TYPES = (TRUE_POSITIVE, DOUBLE_DETECTION, WRONG_LABEL, LOCALIZATION_ERROR, CONFUSION_ERROR, BACKGROUND_ERROR)

CHARACTERISTICS = ("length", "coverage", "count")
SIZE_LABELS = ("XS", "S", "M", "L", "XL")


# ---------------------------------------------------------------- replicates

@dataclass(frozen=True)
class ReplicateReport:
    flagged: dict  # video_id -> tuple of flagged ground truth indices
    pairs: tuple  # of (video_id, i, j, tiou) with i < j
    num_ground_truths: int
    threshold: float

    @property
    def num_flagged(self):
        return sum(len(v) for v in self.flagged.values())

    @property
    def fraction(self):
        """ flagged ground truths / all ground truths (each pair member counts) """
        return self.num_flagged / self.num_ground_truths if self.num_ground_truths else 0.0

    @property
    def pair_fraction(self):
        """ one count per pair / all ground truths """
        return len(self.pairs) / self.num_ground_truths if self.num_ground_truths else 0.0

    def to_dict(self):
        return {
            "threshold": rounded(self.threshold),
            "num_ground_truths": self.num_ground_truths,
            "num_flagged": self.num_flagged,
            "fraction": rounded(self.fraction),
            "num_pairs": len(self.pairs),
            "pair_fraction": rounded(self.pair_fraction),
            "flagged": {vid: list(ix) for vid, ix in sorted(self.flagged.items()) if ix},
            "pairs": [[vid, i, j, rounded(t)] for vid, i, j, t in self.pairs],
        }


def near_replicates(dataset, overlap_threshold=REPLICATE_THRESHOLD, per_category=False):
    """
    flags ground truth g iff another ground truth of the same video (of the
    same label when per_category) has tIoU >= overlap_threshold with g.
    """
    if not 0 < overlap_threshold <= 1:
        raise ValueError(f"overlap_threshold must be in (0, 1], got {overlap_threshold}")
    flagged, pairs = {}, []
    for video_id in dataset.video_ids():
        gts = dataset[video_id].ground_truths
        hits = set()
        if len(gts) > 1:
            iou = tiou_matrix(as_array([s for s, _ in gts]), as_array([s for s, _ in gts]))
            for i in range(len(gts)):
                for j in range(i + 1, len(gts)):
                    if iou[i, j] < overlap_threshold:
                        continue
                    if per_category and gts[i][1] != gts[j][1]:
                        continue
                    hits.update((i, j))
                    pairs.append((video_id, i, j, float(iou[i, j])))
        flagged[video_id] = tuple(sorted(hits))
    report = ReplicateReport(flagged, tuple(pairs), dataset.num_ground_truths(), float(overlap_threshold))
    log.info(f"{report.num_flagged} of {report.num_ground_truths} ground truths are near-replicates ({report.fraction:.2%})")
    return report


# --------------------------------------------------------- false positives

@dataclass(frozen=True)
class FpProfile:
    counts: dict  # error type -> count
    impact: dict  # error type (not true_positive) -> average mAP gain if removed
    num_analyzed: int
    depth: int
    labels: tuple = ()  # (video_id, input index, error type) in analysis order

    def to_dict(self):
        return {
            "depth": self.depth,
            "num_analyzed": self.num_analyzed,
            "counts": {k: self.counts[k] for k in ERROR_TYPES},
            "impact": {k: rounded(self.impact[k]) for k in ERROR_TYPES if k in self.impact},
        }


def _check_fp_args(tiou_strong, tiou_weak, depth_multiplier):
    if not 0 < tiou_weak < tiou_strong <= 1:
        raise ValueError(f"expected 0 < tiou_weak < tiou_strong <= 1, got {tiou_weak}, {tiou_strong}")
    if not isinstance(depth_multiplier, int) or depth_multiplier < 1:
        raise ValueError(f"expected depth_multiplier as a positive integer, got {depth_multiplier}")


def analyzed_predictions(dataset, preds, depth_multiplier=DEPTH_MULTIPLIER):
    """
    the top depth_multiplier x G predictions by score over all videos
    (ties: video-id order, then input order), as (video_id, index, prediction).
    """
    flat = [(vid, ix, p) for vid in preds.video_ids() for ix, p in enumerate(preds.get(vid))]
    order = score_order([p.score for _, _, p in flat])
    depth = depth_multiplier * dataset.num_ground_truths()
    return [flat[i] for i in order[:depth]]


def label_false_positives(dataset, preds, tiou_strong=TIOU_STRONG, tiou_weak=TIOU_WEAK,
                          depth_multiplier=DEPTH_MULTIPLIER):
    """
    Labels each analyzed prediction with the first rule that applies:

    true_positive       tIoU >= strong, correct label, GT not yet matched
    double_detection    tIoU >= strong, correct label, GT already matched
    wrong_label         tIoU >= strong, wrong label
    localization_error  weak <= tIoU < strong, correct label
    confusion_error     weak <= tIoU < strong, wrong label
    background_error    tIoU < weak against every GT

    Returns list of (video_id, input index, error type) in score order.
    """
    _check_fp_args(tiou_strong, tiou_weak, depth_multiplier)
    preds.check(dataset)
    arrays, matched = {}, {}
    out = []
    for video_id, ix, p in analyzed_predictions(dataset, preds, depth_multiplier):
        gts = dataset[video_id].ground_truths
        if video_id not in arrays:
            arrays[video_id] = as_array([s for s, _ in gts])
            matched[video_id] = np.zeros(len(gts), dtype=bool)
        gt_arr = arrays[video_id]
        if not len(gts):
            out.append((video_id, ix, BACKGROUND_ERROR))
            continue
        iou = tiou_vector((p.start, p.end), gt_arr[:, 0], gt_arr[:, 1])
        same = np.array([label == p.label for _, label in gts], dtype=bool)
        strong = iou >= tiou_strong
        weak = iou >= tiou_weak

        hit = same & strong
        if hit.any():
            free = hit & ~matched[video_id]
            if free.any():
                # highest tIoU, then earliest start, then lowest index.
                cands = np.flatnonzero(free)
                best = min(cands, key=lambda g: (-iou[g], gt_arr[g, 0], g))
                matched[video_id][best] = True
                kind = TRUE_POSITIVE
            else:
                kind = DOUBLE_DETECTION
        elif (~same & strong).any():
            kind = WRONG_LABEL
        elif (same & weak).any():
            kind = LOCALIZATION_ERROR
        elif weak.any():
            kind = CONFUSION_ERROR
        else:
            kind = BACKGROUND_ERROR
        out.append((video_id, ix, kind))
    return out


def _subset(preds, keep):
    """ keep: set of (video_id, index) """
    out = PredictionSet()
    for vid in preds.video_ids():
        out.add(vid, [p for ix, p in enumerate(preds.get(vid)) if (vid, ix) in keep])
    return out


def classify_false_positives(dataset, preds, tiou_strong=TIOU_STRONG, tiou_weak=TIOU_WEAK,
                             depth_multiplier=DEPTH_MULTIPLIER, thresholds=DEFAULT_TIOU_THRESHOLDS):
    """
    DETAD false positive profile at prediction depth depth_multiplier x G.

    impact[type] is the average mAP (over thresholds) of the analyzed
    predictions without that type minus the average mAP with all of them.
    """
    labels = label_false_positives(dataset, preds, tiou_strong, tiou_weak, depth_multiplier)
    counts = OrderedDict((k, 0) for k in ERROR_TYPES)
    for _, _, kind in labels:
        counts[kind] += 1

    analyzed = _subset(preds, {(vid, ix) for vid, ix, _ in labels})
    base = evaluate(dataset, analyzed, thresholds=thresholds, recall_ks=(), tqdm=silent).average_map
    impact = OrderedDict()
    for kind in ERROR_TYPES[1:]:
        if counts[kind] == 0:
            impact[kind] = 0.0
            continue
        keep = {(vid, ix) for vid, ix, k in labels if k != kind}
        fixed = evaluate(dataset, _subset(preds, keep), thresholds=thresholds, recall_ks=(), tqdm=silent)
        impact[kind] = fixed.average_map - base
    return FpProfile(dict(counts), dict(impact), len(labels), depth_multiplier * dataset.num_ground_truths(), tuple(labels))


# ----------------------------------------------------- characteristic bins

@dataclass(frozen=True)
class Binning:
    characteristic: str
    edges: tuple  # n+1 ascending edges
    labels: tuple  # n labels

    def __post_init__(self):
        if self.characteristic not in CHARACTERISTICS:
            raise ValueError(f"characteristic must be one of {CHARACTERISTICS}, got {self.characteristic}")
        edges = tuple(float(e) for e in self.edges)
        if len(edges) < 2:
            raise ValueError("a binning needs at least two edges")
        if any(b < a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"edges must be ascending, got {edges}")
        if len(self.labels) != len(edges) - 1:
            raise ValueError(f"expected {len(edges) - 1} labels, got {len(self.labels)}")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "labels", tuple(self.labels))

    @classmethod
    def fixed(cls, characteristic, edges, labels=None):
        if labels is None:
            labels = SIZE_LABELS if len(edges) - 1 == len(SIZE_LABELS) else tuple(str(i) for i in range(len(edges) - 1))
        return cls(characteristic, tuple(edges), tuple(labels))

    @classmethod
    def quantiles(cls, characteristic, values, n=5):
        labels = SIZE_LABELS if n == len(SIZE_LABELS) else tuple(f"Q{i + 1}" for i in range(n))
        return cls(characteristic, tuple(quantile_edges(values, n)), labels)

    def assign(self, values):
        """ bin index per value; values outside the edges go to the end bins. """
        interior = np.asarray(self.edges[1:-1], dtype=np.float64)
        return np.searchsorted(interior, np.asarray(values, dtype=np.float64), side="right")


def characteristic_values(dataset, characteristic):
    """
    list of ((video_id, gt index), value) for every ground truth.

    length: moment length in seconds; coverage: moment length / video
    duration; count: number of ground truths in the video.
    """
    if characteristic not in CHARACTERISTICS:
        raise ValueError(f"characteristic must be one of {CHARACTERISTICS}, got {characteristic}")
    out = []
    for video_id in dataset.video_ids():
        video = dataset[video_id]
        for ix, (seg, _) in enumerate(video.ground_truths):
            if characteristic == "length":
                v = seg.duration()
            elif characteristic == "coverage":
                v = seg.duration() / video.duration
            else:
                v = float(len(video.ground_truths))
            out.append(((video_id, ix), v))
    return out


def default_binnings(dataset):
    """ quantile quintiles of every characteristic over the dataset """
    binnings = []
    for name in CHARACTERISTICS:
        values = [v for _, v in characteristic_values(dataset, name)]
        if values:
            binnings.append(Binning.quantiles(name, values))
    return binnings


@dataclass(frozen=True)
class BinStat:
    label: str
    low: float
    high: float
    num_gt: int
    value: float  # FN rate or normalized mAP
    relative_change: float = None


@dataclass(frozen=True)
class CharacteristicBins:
    kind: str  # "fn_rate" or "normalized_map"
    threshold: float
    overall: float
    bins: dict = field(default_factory=dict)  # characteristic -> tuple of BinStat

    def to_dict(self):
        return {
            "kind": self.kind,
            "threshold": rounded(self.threshold),
            "overall": rounded(self.overall),
            "bins": {
                name: [
                    {
                        "label": b.label, "low": rounded(b.low), "high": rounded(b.high),
                        "num_gt": b.num_gt, "value": rounded(b.value),
                        **({} if b.relative_change is None else {"relative_change": rounded(b.relative_change)}),
                    }
                    for b in stats
                ]
                for name, stats in self.bins.items()
            },
        }


def _bin_members(dataset, binning):
    """ bin index -> list of (video_id, gt index) """
    keys_values = characteristic_values(dataset, binning.characteristic)
    members = defaultdict(list)
    if not keys_values:
        return members
    idx = binning.assign([v for _, v in keys_values])
    for (key, _), b in zip(keys_values, idx):
        members[int(b)].append(key)
    return members


def matched_ground_truths(dataset, preds, threshold):
    """
    greedy matching over all predictions of each (video, category).
    Returns (set of matched (video_id, gt index), {(video_id, pred index): (video_id, gt index)}).
    """
    hits, by_pred = set(), {}
    for (video_id, label), (gts, ps) in group_by_video_and_label(dataset, preds).items():
        if not gts or not ps:
            continue
        gt_ix = [ix for ix, (_, l) in enumerate(dataset[video_id].ground_truths) if l == label]
        pred_ix = [ix for ix, p in enumerate(preds.get(video_id)) if p.label == label]
        order = score_order([p.score for p in ps])
        matched = greedy_match(as_array([ps[i] for i in order]), as_array(gts), threshold)
        for rank, g in enumerate(matched):
            if g >= 0:
                key = (video_id, gt_ix[g])
                hits.add(key)
                by_pred[(video_id, pred_ix[order[rank]])] = key
    return hits, by_pred


def fn_breakdown(dataset, preds, binnings=None, threshold=TIOU_STRONG):
    """
    false negative rate (unmatched GT / GT) per bin at the given threshold,
    matching with all predictions. Empty bins are absent from the result.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    preds.check(dataset)
    if binnings is None:
        binnings = default_binnings(dataset)
    hits, _ = matched_ground_truths(dataset, preds, threshold)
    total = dataset.num_ground_truths()
    overall = 1.0 - len(hits) / total if total else 0.0
    result = {}
    for binning in binnings:
        members = _bin_members(dataset, binning)
        stats = []
        for b, label in enumerate(binning.labels):
            keys = members.get(b)
            if not keys:
                continue
            missed = sum(1 for k in keys if k not in hits)
            stats.append(BinStat(label, binning.edges[b], binning.edges[b + 1], len(keys), missed / len(keys)))
        result[binning.characteristic] = tuple(stats)
    return CharacteristicBins("fn_rate", float(threshold), overall, result)


def normalized_average_precision(flags, num_gt, normalization):
    """
    AP with DETAD's normalized precision TP*N/G / (TP*N/G + FP), which makes
    categories (and bins) with different GT counts comparable.
    """
    flags = np.asarray(flags, dtype=bool)
    if num_gt == 0 or flags.size == 0:
        return 0.0
    tp = np.cumsum(flags, dtype=np.float64)
    fp = np.cumsum(~flags, dtype=np.float64)
    scaled = tp * normalization / num_gt
    return interpolated_ap(scaled / (scaled + fp), tp / num_gt)


def _normalized_map(dataset, preds, threshold, normalization, keep_gt=None, drop_preds=frozenset()):
    """
    normalized mAP over categories with ground truth in keep_gt (all when None);
    predictions keyed (video_id, index) in drop_preds are ignored.
    """
    per_category = defaultdict(lambda: ([], [], 0))
    for video_id in dataset.video_ids():
        gts = dataset[video_id].ground_truths
        kept = [ix for ix in range(len(gts)) if keep_gt is None or (video_id, ix) in keep_gt]
        ps = [(ix, p) for ix, p in enumerate(preds.get(video_id)) if (video_id, ix) not in drop_preds]
        labels = {gts[ix][1] for ix in kept}
        for label in labels:
            g = [gts[ix][0] for ix in kept if gts[ix][1] == label]
            lp = [p for _, p in ps if p.label == label]
            order = score_order([p.score for p in lp])
            matched = greedy_match(as_array([lp[i] for i in order]), as_array(g), threshold)
            scores, flags, n = per_category[label]
            scores.append(np.array([lp[i].score for i in order], dtype=np.float64))
            flags.append(matched >= 0)
            per_category[label] = (scores, flags, n + len(g))
    # predictions of a category in videos without its (kept) ground truth are false positives.
    for video_id in dataset.video_ids():
        gts = dataset[video_id].ground_truths
        present = {gts[ix][1] for ix in range(len(gts)) if keep_gt is None or (video_id, ix) in keep_gt}
        for ix, p in enumerate(preds.get(video_id)):
            if (video_id, ix) in drop_preds or p.label in present or p.label not in per_category:
                continue
            scores, flags, n = per_category[p.label]
            scores.append(np.array([p.score]))
            flags.append(np.array([False]))
    aps = []
    for label in sorted(per_category, key=label_key):
        scores, flags, n = per_category[label]
        s, f = np.concatenate(scores), np.concatenate(flags)
        aps.append(normalized_average_precision(f[score_order(s)], n, normalization))
    return float(np.mean(aps)) if aps else 0.0


def sensitivity(dataset, preds, binnings=None, threshold=TIOU_STRONG, normalization=None):
    """
    normalized mAP per bin. For a bin, ground truth is restricted to the bin
    and predictions matched (at threshold) to ground truth outside the bin
    are removed. relative_change = (bin mAP - overall mAP) / overall mAP.

    normalization defaults to the mean number of ground truths per category.
    Bins without ground truth are skipped.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    preds.check(dataset)
    if binnings is None:
        binnings = default_binnings(dataset)
    categories = dataset.labels()
    if normalization is None:
        normalization = dataset.num_ground_truths() / len(categories) if categories else 1.0
    if not normalization > 0:
        raise ValueError(f"normalization must be > 0, got {normalization}")

    overall = _normalized_map(dataset, preds, threshold, normalization)
    _, by_pred = matched_ground_truths(dataset, preds, threshold)
    result = {}
    for binning in binnings:
        members = _bin_members(dataset, binning)
        stats = []
        for b, label in enumerate(binning.labels):
            keys = members.get(b)
            if not keys:
                continue
            keep = set(keys)
            drop = frozenset(p for p, g in by_pred.items() if g not in keep)
            value = _normalized_map(dataset, preds, threshold, normalization, keep_gt=keep, drop_preds=drop)
            change = (value - overall) / overall if overall > 0 else 0.0
            stats.append(BinStat(label, binning.edges[b], binning.edges[b + 1], len(keys), value, change))
        result[binning.characteristic] = tuple(stats)
    return CharacteristicBins("normalized_map", float(threshold), overall, result)
