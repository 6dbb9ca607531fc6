"""Scoring: exact match, distance-error buckets, the arrival point index, parent-child accuracy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .geo import GeoPoint, haversine
from .taskgen import PARENT_CHILD_LABELS
from .textcodec import EOS
from .worldgen import MapWorld, nearest_road

DISTANCE_BUCKETS = ((0.0, 100.0), (100.0, 200.0), (200.0, 500.0), (500.0, 1000.0), (1000.0, math.inf))
BUCKET_LABELS = ("0-100", "100-200", "200-500", "500-1000", "1000+")
ROAD_ASSOCIATION_M = 15.0
ARRIVAL_FULL_M = 30.0
ARRIVAL_HALF_M = 50.0


def _trim(text: str) -> str:
    text = text.rstrip()
    while text.endswith(EOS):
        text = text[: -len(EOS)].rstrip()
    return text


def exact_match(pred: str, target: str) -> int:
    return int(_trim(pred) == _trim(target))


@dataclass(frozen=True)
class DistanceReport:
    median: float
    buckets: tuple[float, ...]  # percentages per DISTANCE_BUCKETS entry
    n: int

    def to_dict(self) -> dict:
        return {
            "median_m": None if math.isinf(self.median) else self.median,
            "buckets_pct": dict(zip(BUCKET_LABELS, self.buckets)),
            "n": self.n,
        }


def bucket_index(d: float) -> int:
    for i, (lo, hi) in enumerate(DISTANCE_BUCKETS):
        if lo <= d < hi or (d == hi == math.inf):  # unparsable predictions count as infinitely far
            return i
    raise ValueError(f"distance {d} outside every bucket")


def distance_report(errors: Sequence[float]) -> DistanceReport:
    errs = [float(e) for e in errors]
    if not errs:
        raise ValueError("distance_report needs at least one error value")
    if any(e < 0 or math.isnan(e) for e in errs):
        raise ValueError("distance errors must be non-negative numbers")
    counts = [0] * len(DISTANCE_BUCKETS)
    for e in errs:
        counts[bucket_index(e)] += 1
    ordered = sorted(errs)
    median = ordered[(len(ordered) - 1) // 2]  # lower middle for even n
    return DistanceReport(median, tuple(100.0 * c / len(errs) for c in counts), len(errs))


def same_road(pred: GeoPoint, truth_road: str, world: MapWorld, threshold_m: float = ROAD_ASSOCIATION_M) -> bool:
    if truth_road not in world.road_by_id:
        raise ValueError(f"unknown road {truth_road!r}")
    road_id, dist = nearest_road(world, pred)
    return road_id == truth_road and dist <= threshold_m


def arrival_index(pred: GeoPoint, truth: GeoPoint, truth_road: str, world: MapWorld,
                  threshold_m: float = ROAD_ASSOCIATION_M) -> float:
    if not same_road(pred, truth_road, world, threshold_m):
        return 0.0
    d = haversine(pred, truth)
    if d < ARRIVAL_FULL_M:
        return 1.0
    if d < ARRIVAL_HALF_M:
        return 0.5
    return 0.0


@dataclass(frozen=True)
class ParentChildReport:
    accuracy: dict[str, float]
    counts: dict[str, int]

    def to_dict(self) -> dict:
        return {"accuracy": dict(self.accuracy), "n": dict(self.counts)}


def parent_child_report(preds: Sequence[str], labels: Sequence[str]) -> ParentChildReport:
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    correct = {c: 0 for c in PARENT_CHILD_LABELS}
    total = {c: 0 for c in PARENT_CHILD_LABELS}
    for p, y in zip(preds, labels):
        if y not in total:
            raise ValueError(f"unknown parent-child label {y!r}")
        total[y] += 1
        correct[y] += exact_match(p, y)
    acc = {c: (correct[c] / total[c] if total[c] else 0.0) for c in PARENT_CHILD_LABELS}
    return ParentChildReport(acc, total)


def mean_or_none(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None
