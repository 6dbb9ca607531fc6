import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geodecoder.geo import GeoPoint, LocalFrame
from geodecoder.metrics import (
    BUCKET_LABELS,
    DISTANCE_BUCKETS,
    arrival_index,
    distance_report,
    exact_match,
    parent_child_report,
)
from geodecoder.taskgen import largest_remainder
from geodecoder.worldgen import DistrictTree, MapWorld, Road

CENTER = GeoPoint(116.40, 39.90)
F = LocalFrame(CENTER)


@pytest.fixture(scope="module")
def strip_world():
    """Two parallel east-west roads 16 m apart."""
    r0 = Road("r0", "Low Road", "minor", (F.to_geo(-500, 0), F.to_geo(500, 0)))
    r1 = Road("r1", "High Road", "minor", (F.to_geo(-500, 16), F.to_geo(500, 16)))
    return MapWorld([r0, r1], [], [], [], [], DistrictTree("T City", ()), 0)


def test_exact_match_examples():
    assert exact_match("parking lot", "parking lot") == 1
    assert exact_match("parking lot ", "parking lot") == 1
    assert exact_match("parking lot<eos>", "parking lot") == 1
    assert exact_match("parking", "parking lot") == 0
    assert exact_match(" parking lot", "parking lot") == 0


@settings(max_examples=300)
@given(st.text(max_size=20), st.text(max_size=20))
def test_exact_match_reflexive_symmetric(a, b):
    assert exact_match(a, a) == 1
    assert exact_match(a, b) == exact_match(b, a)


def test_distance_report_examples():
    r = distance_report([50, 150, 300, 700, 1500])
    assert r.buckets == (20.0,) * 5 and r.median == 300 and r.n == 5
    assert distance_report([10, 20, 30]).median == 20
    assert distance_report([10, 20, 30, 40]).median == 20  # lower middle
    with pytest.raises(ValueError):
        distance_report([])
    with pytest.raises(ValueError):
        distance_report([-1.0])


def test_distance_report_bucket_edges():
    r = distance_report([0, 100, 200, 500, 1000, math.inf])
    assert r.buckets == pytest.approx((100 / 6, 100 / 6, 100 / 6, 100 / 6, 200 / 6))
    assert r.to_dict()["buckets_pct"]["1000+"] == pytest.approx(200 / 6)
    assert distance_report([math.inf]).to_dict()["median_m"] is None


def test_reference_bucket_percentages_reproduced():
    reference = dict(zip(BUCKET_LABELS, (27.7, 11.7, 21.3, 26.6, 12.8)))
    counts = largest_remainder(reference, 1000)
    reps = {"0-100": 50.0, "100-200": 150.0, "200-500": 300.0, "500-1000": 700.0, "1000+": 2000.0}
    errors = [reps[k] for k, c in counts.items() for _ in range(c)]
    r = distance_report(errors)
    for got, want in zip(r.buckets, reference.values()):
        assert abs(got - want) <= 0.1 + 1e-9


def brute_bucket(d):
    edges = [0, 100, 200, 500, 1000]
    k = 0
    for i, e in enumerate(edges):
        if d >= e:
            k = i
    return k


@settings(max_examples=200)
@given(st.lists(st.floats(0, 5000), min_size=1, max_size=50))
def test_bucketing_matches_brute_force(errs):
    r = distance_report(errs)
    counts = [0] * 5
    for e in errs:
        counts[brute_bucket(e)] += 1
    assert r.buckets == pytest.approx(tuple(100 * c / len(errs) for c in counts))
    assert sum(r.buckets) == pytest.approx(100.0, abs=0.01)
    assert r.median == sorted(errs)[(len(errs) - 1) // 2]
    assert len(DISTANCE_BUCKETS) == 5


def test_arrival_index_canonical_cases(strip_world):
    truth = F.to_geo(0, 0)
    assert arrival_index(F.to_geo(25, 0), truth, "r0", strip_world) == 1.0
    assert arrival_index(F.to_geo(42, 0), truth, "r0", strip_world) == 0.5
    assert arrival_index(F.to_geo(60, 0), truth, "r0", strip_world) == 0.0
    assert arrival_index(F.to_geo(0, 10), truth, "r0", strip_world) == 0.0  # 10 m away but nearer r1


def test_arrival_index_needs_road_association(strip_world):
    w = MapWorld([strip_world.roads[0]], [], [], [], [], DistrictTree("T City", ()), 0)
    truth = F.to_geo(0, 0)
    assert arrival_index(F.to_geo(0, -14), truth, "r0", w) == 1.0
    assert arrival_index(F.to_geo(0, -20), truth, "r0", w) == 0.0
    with pytest.raises(ValueError):
        arrival_index(truth, truth, "r9", w)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-400, 400), min_size=2, max_size=10))
def test_arrival_index_monotone_along_road(strip_world, xs):
    truth = F.to_geo(0, 0)
    xs = sorted(xs, key=abs)
    scores = [arrival_index(F.to_geo(x, 0), truth, "r0", strip_world) for x in xs]
    assert all(a >= b for a, b in zip(scores, scores[1:]))


def test_parent_child_report_examples():
    labels = ["no relation", "first is parent", "second is parent"] * 2
    assert parent_child_report(labels, labels).accuracy == {k: 1.0 for k in set(labels)}
    const = parent_child_report(["no relation"] * 6, labels).accuracy
    assert const == {"no relation": 1.0, "first is parent": 0.0, "second is parent": 0.0}
    labels = ["no relation", "no relation", "first is parent", "first is parent", "second is parent", "second is parent"]
    preds = ["no relation", "first is parent", "first is parent", "no relation", "second is parent", "no relation"]
    rep = parent_child_report(preds, labels)
    assert rep.accuracy == {"no relation": 0.5, "first is parent": 0.5, "second is parent": 0.5}
    assert rep.counts == {"no relation": 2, "first is parent": 2, "second is parent": 2}
    with pytest.raises(ValueError):
        parent_child_report(["x"], ["cousins"])
    with pytest.raises(ValueError):
        parent_child_report(["x"], [])


def test_distance_report_rejects_nan():
    with pytest.raises(ValueError):
        distance_report([np.nan])
