"""
Segment geometry, temporal IoU, pyramid candidate points and the decoding of
(center, offset) regression outputs into segments.

All values are immutable; every function here is pure.
"""
import math
import logging
from dataclasses import dataclass

import numpy as np

from momentlite.utils import label_key

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Segment:
    """ time interval [start, end) in seconds. Zero length is permitted. """
    start: float
    end: float

    def __post_init__(self):
        for name in ("start", "end"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
                raise TypeError(f"expected {name} as a real number, got {type(v)}")
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, float(v))
        if self.start < 0:
            raise ValueError(f"start must be >= 0, got {self.start}")
        if self.start > self.end:
            raise ValueError(f"start > end: [{self.start}, {self.end}]")

    def duration(self):
        return self.end - self.start

    def center(self):
        return (self.start + self.end) / 2

    def contains(self, t):
        return self.start <= t <= self.end

    def intersection(self, other):
        return max(0.0, min(self.end, other.end) - max(self.start, other.start))

    def clamp(self, lo, hi):
        start = min(max(self.start, lo), hi)
        end = min(max(self.end, lo), hi)
        return Segment(start, max(start, end))

    def as_tuple(self):
        return (self.start, self.end)


@dataclass(frozen=True)
class ScoredSegment:
    segment: Segment
    label: object  # opaque category id: int or str
    score: float

    def __post_init__(self):
        if not isinstance(self.segment, Segment):
            raise TypeError(f"expected Segment, got {type(self.segment)}")
        label_key(self.label)  # raises on unsupported label types.
        score = float(self.score)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        object.__setattr__(self, "score", score)

    @property
    def start(self):
        return self.segment.start

    @property
    def end(self):
        return self.segment.end

    def with_score(self, score):
        return ScoredSegment(self.segment, self.label, score)


@dataclass(frozen=True)
class PyramidPoint:
    """
    candidate location on the 1D pyramid. range_min/range_max bound the
    regression distance max(d_onset, d_offset) in stride units.
    """
    time: float
    level: int
    stride: float
    range_min: float
    range_max: float

    def __post_init__(self):
        if not isinstance(self.level, (int, np.integer)) or self.level < 0:
            raise ValueError(f"level must be a non-negative integer, got {self.level}")
        if not self.stride > 0:
            raise ValueError(f"stride must be > 0, got {self.stride}")
        if not self.range_min < self.range_max:
            raise ValueError(f"expected range_min < range_max, got [{self.range_min}, {self.range_max})")
        if self.range_min < 0:
            raise ValueError(f"range_min must be >= 0, got {self.range_min}")

    def in_range(self, distance):
        """ distance in seconds. """
        d = distance / self.stride
        return self.range_min <= d < self.range_max


@dataclass(frozen=True)
class RegressionOutput:
    d_onset: float
    d_offset: float

    def __post_init__(self):
        if self.d_onset < 0 or self.d_offset < 0:
            raise ValueError(f"offsets must be >= 0, got ({self.d_onset}, {self.d_offset})")


def tiou(a, b):
    """
    temporal IoU |a∩b| / |a∪b|. Returns 0.0 when the union has zero length.
    """
    inter = a.intersection(b)
    union = a.duration() + b.duration() - inter
    if union <= 0:
        return 0.0
    return inter / union


def as_array(segments):
    """ list of Segment (or objects with .start/.end) -> (N,2) float64 array """
    arr = np.empty((len(segments), 2), dtype=np.float64)
    for ix, s in enumerate(segments):
        arr[ix, 0] = s.start
        arr[ix, 1] = s.end
    return arr


def tiou_matrix(a, b):
    """
    pairwise tIoU between two (N,2) and (M,2) arrays of [start, end].
    Returns an (N,M) array; pairs with zero union give 0.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    inter = np.maximum(
        0.0,
        np.minimum(a[:, 1:2], b[:, 1][None, :]) - np.maximum(a[:, 0:1], b[:, 0][None, :])
    )
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def tiou_vector(segment, starts, ends):
    """ tIoU of one segment against parallel arrays of starts and ends. """
    inter = np.maximum(0.0, np.minimum(ends, segment[1]) - np.maximum(starts, segment[0]))
    union = (segment[1] - segment[0]) + (ends - starts) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def default_regression_ranges(num_levels):
    """
    [0,4), [4,8), [8,16), ..., [last, inf) in stride units.
    """
    if not isinstance(num_levels, int) or num_levels < 1:
        raise ValueError(f"expected num_levels as integer >= 1, got {num_levels}")
    ranges = []
    for level in range(num_levels):
        lo = 0.0 if level == 0 else float(2 ** (level + 1))
        hi = float(2 ** (level + 2))
        ranges.append((lo, hi))
    lo, _ = ranges[-1]
    ranges[-1] = (lo, math.inf)
    return ranges


def _check_ranges(ranges, num_levels):
    if len(ranges) != num_levels:
        raise ValueError(f"expected {num_levels} regression ranges, got {len(ranges)}")
    ranges = [(float(lo), float(hi)) for lo, hi in ranges]
    if ranges[0][0] != 0.0:
        raise ValueError(f"regression ranges must start at 0, got {ranges[0][0]}")
    if ranges[-1][1] != math.inf:
        raise ValueError(f"the last regression range must be open ended, got {ranges[-1][1]}")
    for (lo, hi), (nlo, _) in zip(ranges, ranges[1:]):
        if hi != nlo:
            raise ValueError(f"regression ranges leave a gap or overlap at {hi} / {nlo}")
    for lo, hi in ranges:
        if not lo < hi:
            raise ValueError(f"empty regression range [{lo}, {hi})")
    return ranges


def generate_pyramid(sequence_length, num_levels, base_stride, regression_ranges=None):
    """
    Builds the candidate points of a 1D feature pyramid.

    Level l holds ceil(sequence_length / 2**l) points at the cell centers
    (i + 0.5) * stride(l) with stride(l) = base_stride * 2**l.

    Args:
        sequence_length: number of feature steps (>= 1)
        num_levels: number of pyramid levels (>= 1)
        base_stride: seconds per step at level 0
        regression_ranges: optional list of (min, max) per level in stride
            units; must tile [0, inf). Defaults to default_regression_ranges.

    Returns:
        list of PyramidPoint, level by level.
    """
    if not isinstance(sequence_length, int) or sequence_length < 1:
        raise ValueError(f"expected sequence_length as integer >= 1, got {sequence_length}")
    if not isinstance(num_levels, int) or num_levels < 1:
        raise ValueError(f"expected num_levels as integer >= 1, got {num_levels}")
    if not base_stride > 0:
        raise ValueError(f"expected base_stride > 0, got {base_stride}")
    if 2 ** (num_levels - 1) > sequence_length:
        raise ValueError(
            f"{num_levels} levels need at least {2 ** (num_levels - 1)} steps; "
            f"level {num_levels - 1} would be empty for {sequence_length} steps"
        )
    if regression_ranges is None:
        ranges = default_regression_ranges(num_levels)
    else:
        ranges = _check_ranges(regression_ranges, num_levels)

    points = []
    for level in range(num_levels):
        stride = base_stride * 2 ** level
        lo, hi = ranges[level]
        for i in range(math.ceil(sequence_length / 2 ** level)):
            points.append(PyramidPoint((i + 0.5) * stride, level, stride, lo, hi))
    return points


def decode(point, reg, duration=None):
    """
    Segment(t - d_onset * stride, t + d_offset * stride), clamped to
    [0, duration] when a duration is given.
    """
    start = point.time - reg.d_onset * point.stride
    end = point.time + reg.d_offset * point.stride
    lo = 0.0
    hi = math.inf if duration is None else float(duration)
    start = min(max(start, lo), hi)
    end = min(max(end, lo), hi)
    return Segment(start, max(start, end))


def encode(point, segment):
    """ inverse of decode for a segment that contains point.time """
    if not segment.contains(point.time):
        raise ValueError(f"{segment} does not contain the point at {point.time}")
    return RegressionOutput(
        (point.time - segment.start) / point.stride,
        (segment.end - point.time) / point.stride,
    )
