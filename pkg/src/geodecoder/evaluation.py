"""Run a checkpoint over a manifest split and score every task."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geo import haversine, unproject
from .metrics import (
    ROAD_ASSOCIATION_M,
    arrival_index,
    distance_report,
    exact_match,
    parent_child_report,
)
from .model import GeoDecoderConfig, generate_batch, sequence_logprobs
from .numerics import Tensor
from .taskgen import ELEMENT_CLASSES, PARENT_CHILD_LABELS, TAGS, TaskKind, truth_of
from .textcodec import EOS_ID, Vocabulary, decode, encode, parse_coord, parse_pixel
from .trainer import EncodedSet
from .worldgen import MapWorld

COORD_KINDS = (TaskKind.CoordGen, TaskKind.Geocoding)
PIXEL_KINDS = (TaskKind.PoiCoordGen, TaskKind.ArrivalPoint)


def closed_set(kind: TaskKind, element_classes: Optional[Sequence[str]] = None) -> Optional[tuple[str, ...]]:
    """Answer set for kinds whose targets come from a small fixed vocabulary of labels."""
    if kind == TaskKind.ElementId:
        return tuple(element_classes or ELEMENT_CLASSES)
    if kind == TaskKind.TagId:
        return tuple(dict.fromkeys(meaning for _, meaning in TAGS))
    if kind == TaskKind.ParentChild:
        return PARENT_CHILD_LABELS
    return None


def predict(config: GeoDecoderConfig, params: dict[str, Tensor], vocab: Vocabulary, data: EncodedSet,
            batch_size: int = 32) -> list[str]:
    out = []
    for start in range(0, len(data), batch_size):
        idx = list(range(start, min(start + batch_size, len(data))))
        ids = generate_batch(config, params, data.images(idx), [data.inputs[i] for i in idx], vocab_limit=len(vocab))
        out.extend(decode(vocab, s) for s in ids)
    return out


def rank_closed_set(config: GeoDecoderConfig, params: dict[str, Tensor], vocab: Vocabulary, data: EncodedSet,
                    rows_idx: Sequence[int], labels: Sequence[str]) -> list[str]:
    """Pick, per sample, the label with the highest model likelihood."""
    cand = [encode(vocab, c) for c in labels]
    picks = []
    for i in rows_idx:
        img = data.images([i])
        images = np.repeat(img, len(cand), axis=0)
        scores = sequence_logprobs(config, params, images, [data.inputs[i]] * len(cand), [c + [EOS_ID] for c in cand])
        picks.append(labels[int(np.argmax(scores))])
    return picks


def _point_error(kind: TaskKind, pred: str, target) -> float:
    """Meters between predicted and true location; inf when the prediction does not parse."""
    try:
        if kind in COORD_KINDS:
            p = parse_coord(pred)
        else:
            p = unproject(parse_pixel(pred), target.viewport)
    except ValueError:
        return math.inf
    return haversine(p, target.point)


def score(rows: Sequence[dict], preds: Sequence[str], world: Optional[MapWorld] = None,
          ranked: Optional[dict[int, str]] = None, element_classes: Optional[Sequence[str]] = None,
          road_threshold_m: float = ROAD_ASSOCIATION_M) -> dict:
    """Per-task metrics for `preds` aligned with manifest `rows`."""
    ranked = ranked or {}
    by_kind: dict[TaskKind, list[int]] = {}
    for i, row in enumerate(rows):
        by_kind.setdefault(TaskKind(row["kind"]), []).append(i)
    tasks = {}
    for kind in TaskKind:
        idx = by_kind.get(kind)
        if not idx:
            continue
        targets = [truth_of(rows[i]) for i in idx]
        em = [exact_match(preds[i], rows[i]["target_text"]) for i in idx]
        res = {"n": len(idx), "exact_match_pct": 100.0 * sum(em) / len(idx)}
        labels = closed_set(kind, element_classes)
        if labels is not None:
            res["chance_pct"] = 100.0 / len(labels)
            if all(i in ranked for i in idx):
                res["ranked_accuracy_pct"] = 100.0 * sum(ranked[i] == rows[i]["target_text"] for i in idx) / len(idx)
        if kind == TaskKind.ParentChild:
            res["per_class"] = parent_child_report([preds[i] for i in idx], [t.label for t in targets]).to_dict()
        if kind in COORD_KINDS or kind in PIXEL_KINDS:
            errs = [_point_error(kind, preds[i], t) for i, t in zip(idx, targets)]
            res["unparsable"] = sum(math.isinf(e) for e in errs)
            res["distance"] = distance_report(errs).to_dict()
            if kind == TaskKind.PoiCoordGen:
                res["within_20m_pct"] = 100.0 * sum(e <= 20.0 for e in errs) / len(errs)
        if kind == TaskKind.ArrivalPoint:
            if world is None:
                raise ValueError("arrival point scoring needs the world")
            vals = []
            for i, t in zip(idx, targets):
                try:
                    p = unproject(parse_pixel(preds[i]), t.viewport)
                except ValueError:
                    vals.append(0.0)
                    continue
                vals.append(arrival_index(p, t.point, t.road_id, world, road_threshold_m))
            res["arrival_index_pct"] = 100.0 * sum(vals) / len(vals)
        tasks[kind.value] = res
    total_em = sum(t["exact_match_pct"] * t["n"] for t in tasks.values()) / max(1, len(rows))
    return {"n": len(rows), "exact_match_pct": total_em, "tasks": tasks}


def evaluate(config: GeoDecoderConfig, params: dict[str, Tensor], vocab: Vocabulary, data: EncodedSet,
             world: Optional[MapWorld] = None, batch_size: int = 32, ranked: bool = True,
             element_classes: Optional[Sequence[str]] = None, road_threshold_m: float = ROAD_ASSOCIATION_M) -> tuple[dict, list[str]]:
    preds = predict(config, params, vocab, data, batch_size)
    ranked_preds: dict[int, str] = {}
    if ranked:
        groups: dict[tuple, list[int]] = {}
        for i, row in enumerate(data.rows):
            labels = closed_set(TaskKind(row["kind"]), element_classes)
            if labels is not None:
                groups.setdefault(labels, []).append(i)
        for labels, idx in groups.items():
            ranked_preds.update(zip(idx, rank_closed_set(config, params, vocab, data, idx, list(labels))))
    report = score(data.rows, preds, world, ranked_preds, element_classes, road_threshold_m)
    return report, preds


def write_report(report: dict, preds: Sequence[str], rows: Sequence[dict], out_dir) -> list[Path]:
    """report.json, predictions.jsonl and summary figures under `out_dir`."""
    from .plotting import plot_distance_buckets, plot_task_scores

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json", out / "predictions.jsonl"]
    written[0].write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    with open(written[1], "w", encoding="utf-8") as f:
        for row, p in zip(rows, preds):
            f.write(json.dumps({"id": row["id"], "kind": row["kind"], "prediction": p, "target": row["target_text"]}) + "\n")
    tasks = report["tasks"]
    if tasks:
        written.append(plot_task_scores({k: v["exact_match_pct"] for k, v in tasks.items()}, out / "exact_match.png",
                                        "exact match (%)"))
    dist = {k: v["distance"]["buckets_pct"] for k, v in tasks.items() if "distance" in v}
    if dist:
        written.append(plot_distance_buckets(dist, out / "distance_buckets.png"))
    return written
