import json
import numpy as np
import pytest

from geodecoder.evaluation import closed_set, score, write_report
from geodecoder.taskgen import ELEMENT_CLASSES, PARENT_CHILD_LABELS, TaskKind, make_sample


def rows_for(world, kinds, n=3, seed=0):
    rows = []
    for kind in kinds:
        for j in range(n):
            s = make_sample(world, kind, rng=np.random.default_rng([seed, j, len(rows)]))
            rows.append(json.loads(json.dumps({"id": f"r{len(rows)}", "kind": s.kind.value,
                                               "target_text": s.target_text, "truth": s.truth})))
    return rows


ALL_KINDS = [k for k in TaskKind if k != TaskKind.ElementId]


@pytest.fixture(scope="module")
def rows(world):
    return rows_for(world, ALL_KINDS)


def test_closed_sets():
    assert len(closed_set(TaskKind.TagId)) == 8
    assert closed_set(TaskKind.ParentChild) == PARENT_CHILD_LABELS
    assert closed_set(TaskKind.ElementId) == tuple(ELEMENT_CLASSES)
    assert closed_set(TaskKind.ElementId, ["water", "green space"]) == ("water", "green space")
    assert closed_set(TaskKind.CoordGen) is None


def test_perfect_predictions(world, rows):
    report = score(rows, [r["target_text"] for r in rows], world)
    assert report["n"] == len(rows) and report["exact_match_pct"] == 100.0
    tasks = report["tasks"]
    assert set(tasks) == {k.value for k in ALL_KINDS}
    for kind in ("CoordGen", "Geocoding"):
        # exact coordinate strings land in the nearest bucket
        assert tasks[kind]["distance"]["buckets_pct"]["0-100"] == 100.0
        assert tasks[kind]["unparsable"] == 0
    assert tasks["PoiCoordGen"]["within_20m_pct"] == 100.0
    assert tasks["ArrivalPoint"]["arrival_index_pct"] == 100.0
    pc = tasks["ParentChild"]["per_class"]
    assert all(pc["accuracy"][c] == 1.0 for c, n in pc["n"].items() if n)


def test_garbage_predictions(world, rows):
    report = score(rows, ["?"] * len(rows), world)
    tasks = report["tasks"]
    assert report["exact_match_pct"] == 0.0
    for kind in ("CoordGen", "Geocoding", "PoiCoordGen", "ArrivalPoint"):
        assert tasks[kind]["unparsable"] == tasks[kind]["n"]
        assert tasks[kind]["distance"]["buckets_pct"]["1000+"] == 100.0
        assert tasks[kind]["distance"]["median_m"] is None  # no finite errors to take a median of
    assert tasks["ArrivalPoint"]["arrival_index_pct"] == 0.0


def test_ranked_accuracy_and_chance(world, rows):
    tag_idx = [i for i, r in enumerate(rows) if r["kind"] == "TagId"]
    ranked = {i: rows[i]["target_text"] for i in tag_idx}
    ranked[tag_idx[0]] = "nonsense"
    report = score(rows, [""] * len(rows), world, ranked=ranked)
    tag = report["tasks"]["TagId"]
    assert tag["chance_pct"] == pytest.approx(12.5)
    assert tag["ranked_accuracy_pct"] == pytest.approx(100.0 * (len(tag_idx) - 1) / len(tag_idx))
    # no ranking supplied for the other closed-set kinds
    assert "ranked_accuracy_pct" not in report["tasks"]["ParentChild"]


def test_arrival_scoring_needs_world(rows):
    with pytest.raises(ValueError, match="world"):
        score(rows, [r["target_text"] for r in rows], None)


def test_empty_rows():
    assert score([], []) == {"n": 0, "exact_match_pct": 0, "tasks": {}}


def test_write_report(world, rows, tmp_path):
    preds = [r["target_text"] for r in rows]
    report = score(rows, preds, world)
    written = write_report(report, preds, rows, tmp_path / "out")
    names = {p.name for p in written}
    assert names == {"report.json", "predictions.jsonl", "exact_match.png", "distance_buckets.png"}
    assert all(p.stat().st_size > 0 for p in written)
    back = json.loads((tmp_path / "out/report.json").read_text())
    assert back["n"] == len(rows)
    lines = (tmp_path / "out/predictions.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["prediction"] == rows[0]["target_text"]
