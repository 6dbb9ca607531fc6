"""Image-text sample factories for the eleven map tasks and dataset assembly."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from .geo import GeoPoint, PixelCoord, Viewport, meters_per_pixel, project, unproject
from .render import (
    DEFAULT_STYLE,
    MAJOR_ROAD_WIDTH,
    MINOR_ROAD_WIDTH,
    OVERLAY_COLORS,
    Heatmap,
    Marker,
    Path as PathOverlay,
    PolygonOverlay,
    Raster,
    draw_overlay,
    read_ppm,
    render_base,
    write_ppm,
)
from .textcodec import Vocabulary, build_vocab, format_coord, format_pixel, parse_coord
from .worldgen import (
    ROAD_BUFFER_M,
    Aoi,
    MapWorld,
    Poi,
    nearest_road,
    sample_poi_by_popularity,
    world_from_json,
    world_to_json,
)

MANIFEST_FORMAT = 1
MAX_TRIES = 200


class TaskKind(str, Enum):
    ElementId = "ElementId"
    TagId = "TagId"
    PoiId = "PoiId"
    AoiId = "AoiId"
    RoadId = "RoadId"
    CoordGen = "CoordGen"
    Geocoding = "Geocoding"
    ReverseGeocoding = "ReverseGeocoding"
    ParentChild = "ParentChild"
    PoiCoordGen = "PoiCoordGen"
    ArrivalPoint = "ArrivalPoint"


PRETRAIN_KINDS = tuple(TaskKind)[:8]
FINETUNE_KINDS = tuple(TaskKind)[8:]

# pretraining sample counts per task at full scale
FULL_SCALE_COUNTS = {
    TaskKind.ElementId: 296_636,
    TaskKind.TagId: 495_309,
    TaskKind.PoiId: 5_725_200,
    TaskKind.AoiId: 4_618_350,
    TaskKind.RoadId: 668_622,
    TaskKind.CoordGen: 1_324_625,
    TaskKind.Geocoding: 5_198_512,
    TaskKind.ReverseGeocoding: 3_858_043,
}

PARENT_CHILD_LABELS = ("no relation", "first is parent", "second is parent")

# (glyph or marker shape, meaning)
TAGS = (
    ("P", "parking lot"),
    ("G", "gate"),
    ("H", "hospital"),
    ("B", "bus stop"),
    ("S", "subway station"),
    ("W", "restroom"),
    ("scanner", "photo capture point"),
    ("diamond", "signal base station"),
)
TAG_COLORS = ("red", "green", "blue", "orange", "purple", "cyan", "black")

ELEMENT_CLASSES = tuple(dict.fromkeys(DEFAULT_STYLE.element_classes().values()))

# source channel -> (display color, isotropic noise sigma in meters)
CHANNELS = {
    "camera": ("red", 3.0),
    "waybill": ("orange", 80.0),
    "user": ("purple", 40.0),
    "wifi": ("cyan", 10.0),
}
CAMERA_OFFSET_M = 15.0
CAMERA_SNAP_M = 60.0
BUILDING_CATEGORIES = ("hotel", "office")
INDOOR_CATEGORIES = ("shop", "restaurant")

DWELL_POINTS = 30
DWELL_SIGMA_M = 25.0
DWELL_OUTLIER_FRACTION = 0.2
DWELL_OUTLIER_RADIUS_M = 150.0
HEATMAP_SIGMA_M = 15.0

PROMPTS = {
    TaskKind.ElementId: "what is at the red circle?",
    TaskKind.TagId: "what does the {color} symbol mean?",
    TaskKind.PoiId: "what is the name of the place at the green dot?",
    TaskKind.AoiId: "what is the name of the blue area?",
    TaskKind.RoadId: "what is the name of the orange road?",
    TaskKind.CoordGen: "what are the coordinates of the red dot?",
    TaskKind.Geocoding: "where is {name}, {address}?",
    TaskKind.ReverseGeocoding: "what is the address at {coord}?",
    TaskKind.ParentChild: "how are the blue {first} and the red {second} related?",
    TaskKind.PoiCoordGen: "where should {name} be displayed?",
    TaskKind.ArrivalPoint: "where is the arrival point of {name}?",
}


class SampleError(ValueError):
    """The world cannot supply what a task kind needs."""


@dataclass(frozen=True)
class ViewportPolicy:
    image_size: int = 96
    id_scale: int = 13  # identification and relation tasks
    coord_scale: int = 11  # coordinate and address tasks
    fine_scale: int = 15  # display point and arrival point tasks
    element_scale: int = 15  # element identification: zoomed in so the marked area fills much of the view
    jitter: float = 0.3  # max center offset as a fraction of the half-width

    def scale_for(self, kind: TaskKind) -> int:
        if kind in (TaskKind.CoordGen, TaskKind.Geocoding, TaskKind.ReverseGeocoding):
            return self.coord_scale
        if kind in (TaskKind.PoiCoordGen, TaskKind.ArrivalPoint):
            return self.fine_scale
        if kind == TaskKind.ElementId:
            return self.element_scale
        return self.id_scale

    @classmethod
    def from_dict(cls, d: Mapping) -> "ViewportPolicy":
        return cls(**d)


@dataclass(frozen=True)
class TaskOptions:
    element_classes: Optional[tuple[str, ...]] = None  # restrict ElementId labels
    tag_distractors: int = 2  # max extra symbols in TagId scenes
    arrival_heatmap: bool = True  # False gives the no-heatmap ablation

    def __post_init__(self):
        if self.element_classes is not None:
            unknown = set(self.element_classes) - set(ELEMENT_CLASSES)
            if unknown:
                raise ValueError(f"unknown element class(es): {sorted(unknown)}")
        if not 0 <= self.tag_distractors < len(TAG_COLORS):
            raise ValueError(f"tag_distractors must lie in [0, {len(TAG_COLORS) - 1}]")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskOptions":
        d = dict(d)
        if d.get("element_classes") is not None:
            d["element_classes"] = tuple(d["element_classes"])
        return cls(**d)


@dataclass
class Sample:
    id: str
    kind: TaskKind
    raster: Raster
    input_text: str
    target_text: str
    truth: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.target_text:
            raise ValueError("target text must be non-empty")


@dataclass(frozen=True)
class EvalTarget:
    kind: TaskKind
    text: str
    viewport: Viewport
    label: Optional[str] = None
    point: Optional[GeoPoint] = None
    pixel: Optional[PixelCoord] = None
    road_id: Optional[str] = None


# -- geometry helpers --------------------------------------------------------


def _fit_viewport(world: MapWorld, points: Sequence[GeoPoint], scale: int, size: int,
                  rng: np.random.Generator, jitter: float, margin_px: float = 8.0) -> Viewport:
    """Viewport at the finest scale <= `scale` whose frame holds every point `margin_px` from the border;
    the center is offset randomly by up to `jitter` of the half-width where the points allow."""
    xy = np.array([world.to_m(p) for p in points])
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    mid = (lo + hi) / 2
    while True:
        mpp = meters_per_pixel(scale)
        half = size / 2 - margin_px
        spread = (hi - lo) / 2 / mpp
        if np.all(spread <= half) or scale <= 3:
            break
        scale -= 1
    slack = np.maximum(half - spread, 0.0)
    off = rng.uniform(-1.0, 1.0, 2) * np.minimum(slack, jitter * size / 2) * mpp
    return Viewport(world.frame.to_geo(mid[0] + off[0], mid[1] + off[1]), scale, size, size)


def _random_viewport(world: MapWorld, scale: int, size: int, rng: np.random.Generator) -> Viewport:
    half = world.config.extent_m / 2
    span = max(half - size / 2 * meters_per_pixel(scale), 0.0)
    x, y = rng.uniform(-span, span, 2)
    return Viewport(world.frame.to_geo(x, y), scale, size, size)


def _pixel_center(x: int, y: int) -> PixelCoord:
    return PixelCoord(x + 0.5, y + 0.5)


def _half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def class_map(raster: Raster, classes: Sequence[str] = ELEMENT_CLASSES) -> np.ndarray:
    """Per-pixel index into `classes` of the base-map element under it; -1 for other colors."""
    out = np.full((raster.height, raster.width), -1, dtype=np.int64)
    for color, name in DEFAULT_STYLE.element_classes().items():
        if name in classes:
            out[np.all(raster.data == np.array(color, dtype=np.uint8), axis=-1)] = classes.index(name)
    return out


def stable_pixels(labels: np.ndarray, margin: int) -> np.ndarray:
    """Mask of labelled pixels matching both horizontal or both vertical neighbors,
    at least `margin` px inside the frame."""
    h, w = labels.shape
    ok = np.zeros_like(labels, dtype=bool)
    core = labels[1:-1, 1:-1]
    horiz = (labels[1:-1, :-2] == core) & (labels[1:-1, 2:] == core)
    vert = (labels[:-2, 1:-1] == core) & (labels[2:, 1:-1] == core)
    ok[1:-1, 1:-1] = (core >= 0) & (horiz | vert)
    ok[:margin, :] = ok[-margin:, :] = False
    ok[:, :margin] = ok[:, -margin:] = False
    return ok


def _nearest_aoi_edge(world: MapWorld, p: GeoPoint) -> Optional[tuple[float, float, float]]:
    """(east, north, distance) of the closest point on any AOI outline."""
    x, y = world.to_m(p)
    best = None
    for ring in world._aoi_rings:
        a, b = ring, np.roll(ring, -1, axis=0)
        d = b - a
        t = np.clip(((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / np.einsum("ij,ij->i", d, d), 0, 1)
        qx, qy = a[:, 0] + t * d[:, 0], a[:, 1] + t * d[:, 1]
        dist = np.hypot(qx - x, qy - y)
        k = int(np.argmin(dist))
        if best is None or dist[k] < best[2]:
            best = (float(qx[k]), float(qy[k]), float(dist[k]))
    return best


def _anchor_point(world: MapWorld, entity: Union[Aoi, Poi]) -> GeoPoint:
    return world.aoi_centroid(entity) if isinstance(entity, Aoi) else entity.location


def _is_parent(parent, child) -> bool:
    return child.parent_id is not None and child.parent_id == parent.id


# -- per-kind factories -----------------------------------------------------


ELEMENT_MARKER_RADIUS = 5
LINEAR_CLASSES = ("major road", "minor road")  # narrower than the marker interior


def element_label_pixels(labels: np.ndarray, cls: int, linear: bool, radius: int = ELEMENT_MARKER_RADIUS) -> np.ndarray:
    """Pixels where a hollow circle of `radius` would enclose only class `cls`.

    The ring is 2 px thick, so its interior is the disk of radius - 2. Roads are
    thinner than that disk; for them the center pixel only has to be stable.
    """
    ok = stable_pixels(labels, radius + 1) & (labels == cls)
    if linear:
        return ok
    inner = radius - 2
    h, w = labels.shape
    padded = np.pad(labels == cls, inner)
    dy, dx = np.mgrid[-inner:inner + 1, -inner:inner + 1]
    disk = dx * dx + dy * dy <= inner * inner
    for oy, ox in zip(dy[disk], dx[disk]):
        ok &= padded[inner + oy:inner + oy + h, inner + ox:inner + ox + w]
    return ok


def _element_id(world, policy, options, rng):
    classes = options.element_classes or ELEMENT_CLASSES
    label = classes[int(rng.integers(len(classes)))]
    cls, linear = classes.index(label), label in LINEAR_CLASSES
    for _ in range(MAX_TRIES):
        vp = _random_viewport(world, policy.id_scale, policy.image_size, rng)
        ys, xs = np.nonzero(element_label_pixels(class_map(render_base(world, vp), classes), cls, linear))
        if not len(xs):
            continue
        k = int(rng.integers(len(xs)))
        target = unproject(_pixel_center(int(xs[k]), int(ys[k])), vp)
        # search at the identification scale, then frame the chosen spot closer and re-check it
        vp = _fit_viewport(world, [target], policy.element_scale, policy.image_size, rng, policy.jitter)
        raster = render_base(world, vp)
        px = project(target, vp)
        x, y = int(math.floor(px.x)), int(math.floor(px.y))
        if not element_label_pixels(class_map(raster, classes), cls, linear)[y, x]:
            continue
        draw_overlay(raster, vp, Marker(_pixel_center(x, y), "circle", OVERLAY_COLORS["red"], radius=ELEMENT_MARKER_RADIUS))
        return vp, raster, PROMPTS[TaskKind.ElementId], label, {"label": label, "pixel": [x, y]}
    raise SampleError(f"no visible '{label}' area found for ElementId")


def _tag_id(world, policy, options, rng):
    vp = _random_viewport(world, policy.id_scale, policy.image_size, rng)
    raster = render_base(world, vp)
    n = 1 + int(rng.integers(options.tag_distractors + 1))
    colors = [TAG_COLORS[i] for i in rng.choice(len(TAG_COLORS), size=n, replace=False)]
    tags = [TAGS[int(i)] for i in rng.integers(len(TAGS), size=n)]
    size, margin, spacing = policy.image_size, 8, 14
    spots: list[tuple[int, int]] = []
    while len(spots) < n:
        for _ in range(MAX_TRIES):
            x, y = (int(v) for v in rng.integers(margin, size - margin, 2))
            if all(max(abs(x - a), abs(y - b)) >= spacing for a, b in spots):
                spots.append((x, y))
                break
        else:
            raise SampleError("image too small to place the TagId symbols apart")
    for (x, y), color, (symbol, _) in zip(spots, colors, tags):
        rgb = OVERLAY_COLORS[color]
        if symbol == "scanner":
            marker = Marker(_pixel_center(x, y), "scanner", rgb, radius=6, angle=float(rng.uniform(0, 360)))
        elif symbol == "diamond":
            marker = Marker(_pixel_center(x, y), "diamond", rgb, radius=5)
        else:
            marker = Marker(_pixel_center(x, y), "letter", rgb, radius=5, char=symbol)
        draw_overlay(raster, vp, marker)
    symbol, meaning = tags[0]
    prompt = PROMPTS[TaskKind.TagId].format(color=colors[0])
    return vp, raster, prompt, meaning, {"label": meaning, "symbol": symbol, "pixel": list(spots[0])}


def _poi_id(world, policy, options, rng):
    poi = world.poi_by_id[sample_poi_by_popularity(world, rng)]
    vp = _fit_viewport(world, [poi.location], policy.id_scale, policy.image_size, rng, policy.jitter)
    raster = render_base(world, vp)
    draw_overlay(raster, vp, Marker(poi.location, "dot", OVERLAY_COLORS["green"], radius=3))
    return vp, raster, PROMPTS[TaskKind.PoiId], poi.name, {"label": poi.name, "entity_id": poi.id}


def _aoi_id(world, policy, options, rng):
    if not world.aois:
        raise SampleError("world has no AOIs")
    aoi = world.aois[int(rng.integers(len(world.aois)))]
    vp = _fit_viewport(world, list(aoi.polygon), policy.id_scale, policy.image_size, rng, policy.jitter)
    raster = render_base(world, vp)
    blue = OVERLAY_COLORS["blue"]
    draw_overlay(raster, vp, PolygonOverlay(aoi.polygon, outline=blue, fill=blue, alpha=0.5, width=2))
    return vp, raster, PROMPTS[TaskKind.AoiId], aoi.name, {"label": aoi.name, "entity_id": aoi.id}


def _road_id(world, policy, options, rng):
    road = world.roads[int(rng.integers(len(world.roads)))]
    k = int(rng.integers(len(road.polyline) - 1))
    seg = road.polyline[k:k + 2]
    vp = _fit_viewport(world, list(seg), policy.id_scale, policy.image_size, rng, policy.jitter)
    raster = render_base(world, vp)
    width = (MAJOR_ROAD_WIDTH if road.road_class == "major" else MINOR_ROAD_WIDTH) + 2
    draw_overlay(raster, vp, PathOverlay(tuple(seg), OVERLAY_COLORS["orange"], width=width))
    return vp, raster, PROMPTS[TaskKind.RoadId], road.name, {"label": road.name, "road_id": road.id, "segment": k}


def _coord_truth(poi: Poi, text: str) -> dict:
    return {"entity_id": poi.id, "point": parse_coord(text).as_list()}


def _coord_gen(world, policy, options, rng):
    poi = world.pois[int(rng.integers(len(world.pois)))]
    vp = _fit_viewport(world, [poi.location], policy.coord_scale, policy.image_size, rng, policy.jitter)
    raster = render_base(world, vp)
    draw_overlay(raster, vp, Marker(poi.location, "dot", OVERLAY_COLORS["red"], radius=3))
    target = format_coord(poi.location)
    return vp, raster, PROMPTS[TaskKind.CoordGen], target, _coord_truth(poi, target)


def _geocoding(world, policy, options, rng):
    poi = world.pois[int(rng.integers(len(world.pois)))]
    district = world.district_of(poi.location)
    vp = _fit_viewport(world, [poi.location], policy.coord_scale, policy.image_size, rng, policy.jitter)
    raster = render_base(world, vp)
    draw_overlay(raster, vp, PolygonOverlay(district.polygon, outline=OVERLAY_COLORS["black"], width=2))
    target = format_coord(poi.location)
    prompt = PROMPTS[TaskKind.Geocoding].format(name=poi.name, address=poi.address)
    return vp, raster, prompt, target, {**_coord_truth(poi, target), "district": district.name}


def _reverse_geocoding(world, policy, options, rng):
    poi = world.pois[int(rng.integers(len(world.pois)))]
    vp = _fit_viewport(world, [poi.location], policy.coord_scale, policy.image_size, rng, policy.jitter)
    raster = render_base(world, vp)
    draw_overlay(raster, vp, Marker(poi.location, "dot", OVERLAY_COLORS["red"], radius=3))
    prompt = PROMPTS[TaskKind.ReverseGeocoding].format(coord=format_coord(poi.location))
    return vp, raster, prompt, poi.address, {"label": poi.address, "entity_id": poi.id, "point": poi.location.as_list()}


def _parent_child(world, policy, options, rng):
    children = [e for e in (*world.aois, *world.pois) if e.parent_id is not None]
    if not children:
        raise SampleError("world has no parent-child pairs")
    label = PARENT_CHILD_LABELS[int(rng.integers(3))]
    child = children[int(rng.integers(len(children)))]
    if label == "no relation":
        cx, cy = world.to_m(_anchor_point(world, child))
        near = []
        for aoi in world.aois:
            if _is_parent(aoi, child) or _is_parent(child, aoi) or aoi.id == child.id:
                continue
            ax, ay = world.to_m(world.aoi_centroid(aoi))
            if math.hypot(ax - cx, ay - cy) <= 1000.0:
                near.append(aoi)
        if not near:
            near = [a for a in world.aois if a.id != child.id and not _is_parent(a, child) and not _is_parent(child, a)]
        other = near[int(rng.integers(len(near)))]
        pair = [child, other] if rng.random() < 0.5 else [other, child]
    else:
        parent = world.aoi_by_id[child.parent_id]
        pair = [parent, child] if label == "first is parent" else [child, parent]
    pts = []
    for e in pair:
        pts.extend(e.polygon if isinstance(e, Aoi) else [e.location])
    vp = _fit_viewport(world, pts, policy.id_scale, policy.image_size, rng, policy.jitter)
    raster = render_base(world, vp)
    colors = (OVERLAY_COLORS["blue"], OVERLAY_COLORS["red"])
    # polygons first so point markers stay on top
    for e, rgb in zip(pair, colors):
        if isinstance(e, Aoi):
            draw_overlay(raster, vp, PolygonOverlay(e.polygon, outline=rgb, fill=rgb, alpha=0.35, width=2))
    for e, rgb in zip(pair, colors):
        if isinstance(e, Poi):
            draw_overlay(raster, vp, Marker(e.location, "dot", rgb, radius=3))
    prompt = PROMPTS[TaskKind.ParentChild].format(first=pair[0].name, second=pair[1].name)
    return vp, raster, prompt, label, {"label": label, "first": pair[0].id, "second": pair[1].id}


def display_rule(poi: Poi) -> str:
    if poi.parent_id is not None and poi.category in BUILDING_CATEGORIES:
        return "building"
    if poi.parent_id is not None and poi.category in INDOOR_CATEGORIES:
        return "indoor"
    return "camera"


def _poi_coord_gen(world, policy, options, rng):
    poi = world.pois[int(rng.integers(len(world.pois)))]
    rule = display_rule(poi)
    px, py = world.to_m(poi.location)
    edge = _nearest_aoi_edge(world, poi.location)

    def noisy(channel: str) -> GeoPoint:
        sigma = CHANNELS[channel][1]
        dx, dy = rng.normal(0.0, sigma, 2)
        if channel == "camera":
            if edge is not None and edge[2] > 1e-9:
                ux, uy = (edge[0] - px) / edge[2], (edge[1] - py) / edge[2]
            else:
                ang = rng.uniform(0, 2 * math.pi)
                ux, uy = math.cos(ang), math.sin(ang)
            dx += CAMERA_OFFSET_M * ux
            dy += CAMERA_OFFSET_M * uy
        return world.frame.to_geo(px + dx, py + dy)

    required = {"building": None, "indoor": "wifi", "camera": "camera"}[rule]
    n = int(rng.integers(2, 6))
    others = [c for c in CHANNELS if c != required]
    channels = ([required] if required else []) + [others[int(i)] for i in rng.integers(len(others), size=n - (1 if required else 0))]
    candidates = [(c, noisy(c)) for c in channels]

    if rule == "building":
        truth = world.aoi_centroid(world.aoi_by_id[poi.parent_id])
    elif rule == "indoor":
        truth = candidates[0][1]
    else:
        cam = candidates[0][1]
        snap = _nearest_aoi_edge(world, cam)
        truth = world.frame.to_geo(snap[0], snap[1]) if snap is not None and snap[2] <= CAMERA_SNAP_M else cam
    vp = _fit_viewport(world, [truth, poi.location], policy.fine_scale, policy.image_size, rng, policy.jitter)
    raster = render_base(world, vp)
    for c, p in candidates:
        draw_overlay(raster, vp, Marker(p, "dot", OVERLAY_COLORS[CHANNELS[c][0]], radius=2))
    tp = project(truth, vp)
    target = format_pixel(tp)
    prompt = PROMPTS[TaskKind.PoiCoordGen].format(name=poi.name)
    truth_d = {
        "entity_id": poi.id,
        "rule": rule,
        "point": truth.as_list(),
        "pixel": [_half_up(tp.x), _half_up(tp.y)],
        "candidates": [[c, p.as_list()] for c, p in candidates],
    }
    return vp, raster, prompt, target, truth_d


def _arrival_point(world, policy, options, rng):
    for _ in range(MAX_TRIES):
        poi = world.pois[int(rng.integers(len(world.pois)))]
        road_id, _ = nearest_road(world, poi.location)
        road = world.road_by_id[road_id]
        s, _ = world.arc_position(road, poi.location)
        arrival = world.point_along(road, s)
        vp = _fit_viewport(world, [poi.location, arrival], policy.fine_scale, policy.image_size, rng, policy.jitter)
        ap = project(arrival, vp)
        px = (_half_up(ap.x), _half_up(ap.y))
        # reject spots where pixel rounding could flip the nearest road (near crossings)
        if nearest_road(world, unproject(PixelCoord(*px), vp))[0] == road_id:
            break
    else:
        raise SampleError("no arrival point away from road crossings")
    raster = render_base(world, vp)
    if options.arrival_heatmap:
        ax, ay = world.to_m(arrival)
        pts = []
        n_out = int(round(DWELL_POINTS * DWELL_OUTLIER_FRACTION))
        for dx, dy in rng.normal(0.0, DWELL_SIGMA_M, (DWELL_POINTS - n_out, 2)):
            pts.append(world.frame.to_geo(ax + dx, ay + dy))
        while len(pts) < DWELL_POINTS:
            r = DWELL_OUTLIER_RADIUS_M * math.sqrt(rng.random())
            t = rng.uniform(0, 2 * math.pi)
            q = world.frame.to_geo(ax + r * math.cos(t), ay + r * math.sin(t))
            if nearest_road(world, q)[1] > ROAD_BUFFER_M:
                pts.append(q)
        draw_overlay(raster, vp, Heatmap(tuple((p, 1.0) for p in pts), sigma_m=HEATMAP_SIGMA_M))
    draw_overlay(raster, vp, Marker(poi.location, "diamond", OVERLAY_COLORS["blue"], radius=4))
    target = format_pixel(PixelCoord(*px))
    prompt = PROMPTS[TaskKind.ArrivalPoint].format(name=poi.name)
    truth_d = {
        "entity_id": poi.id,
        "point": arrival.as_list(),
        "pixel": list(px),
        "road_id": road_id,
        "heatmap": options.arrival_heatmap,
    }
    return vp, raster, prompt, target, truth_d


_FACTORIES = {
    TaskKind.ElementId: _element_id,
    TaskKind.TagId: _tag_id,
    TaskKind.PoiId: _poi_id,
    TaskKind.AoiId: _aoi_id,
    TaskKind.RoadId: _road_id,
    TaskKind.CoordGen: _coord_gen,
    TaskKind.Geocoding: _geocoding,
    TaskKind.ReverseGeocoding: _reverse_geocoding,
    TaskKind.ParentChild: _parent_child,
    TaskKind.PoiCoordGen: _poi_coord_gen,
    TaskKind.ArrivalPoint: _arrival_point,
}


def make_sample(world: MapWorld, kind: TaskKind, policy: Optional[ViewportPolicy] = None,
                rng: Optional[np.random.Generator] = None, options: Optional[TaskOptions] = None,
                sample_id: str = "sample") -> Sample:
    kind = TaskKind(kind)
    policy = policy or ViewportPolicy()
    options = options or TaskOptions()
    rng = rng if rng is not None else np.random.default_rng()
    if not world.pois or not world.roads:
        raise SampleError("world needs roads and POIs")
    vp, raster, prompt, target, truth = _FACTORIES[kind](world, policy, options, rng)
    truth["viewport"] = vp.to_dict()
    return Sample(sample_id, kind, raster, prompt, target, truth)


def truth_of(sample: Union[Sample, Mapping[str, Any]]) -> EvalTarget:
    """Typed ground truth for scoring; accepts a Sample or a manifest row."""
    if isinstance(sample, Sample):
        kind, text, truth = sample.kind, sample.target_text, sample.truth
    else:
        kind, text, truth = TaskKind(sample["kind"]), sample["target_text"], sample["truth"]
    need = {
        TaskKind.CoordGen: ("point",),
        TaskKind.Geocoding: ("point",),
        TaskKind.PoiCoordGen: ("point", "pixel"),
        TaskKind.ArrivalPoint: ("point", "pixel", "road_id"),
        TaskKind.ParentChild: ("label",),
    }.get(kind, ("label",))
    missing = [k for k in (*need, "viewport") if k not in truth]
    if missing:
        raise ValueError(f"{kind.value} truth lacks {', '.join(missing)}")
    vp = Viewport.from_dict(truth["viewport"])
    point = GeoPoint(*truth["point"]) if "point" in truth else None
    pixel = PixelCoord(*truth["pixel"]) if "pixel" in truth and kind in (TaskKind.PoiCoordGen, TaskKind.ArrivalPoint) else None
    if kind == TaskKind.ParentChild and truth["label"] not in PARENT_CHILD_LABELS:
        raise ValueError(f"parent-child label {truth['label']!r} outside {PARENT_CHILD_LABELS}")
    return EvalTarget(kind, text, vp, label=truth.get("label"), point=point, pixel=pixel, road_id=truth.get("road_id"))


# -- datasets -------------------------------------------------------------


def largest_remainder(weights: Mapping[Any, float], total: int) -> dict[Any, int]:
    """Integer apportionment of `total` proportional to `weights` (ties go to earlier keys)."""
    keys = list(weights)
    s = float(sum(weights.values()))
    if s <= 0:
        raise ValueError("weights must have a positive sum")
    exact = [weights[k] * total / s for k in keys]
    counts = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(keys)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return dict(zip(keys, counts))


def default_mix(total: int = 20_000) -> dict[TaskKind, int]:
    """Pretraining mix proportional to the full-scale per-task sample counts."""
    return largest_remainder(FULL_SCALE_COUNTS, total)


def split_of(sample_id: str) -> str:
    bucket = int.from_bytes(hashlib.sha256(sample_id.encode("utf-8")).digest()[:8], "big") % 100
    return "train" if bucket < 90 else ("val" if bucket < 95 else "test")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _thread_count(threads: Optional[int]) -> int:
    cap = os.environ.get("GEODECODER_THREADS")
    n = threads if threads is not None else (os.cpu_count() or 1)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def base_charset() -> str:
    """Printable ASCII; every generated text draws only from it."""
    return "".join(chr(c) for c in range(32, 127))


def build_dataset(world: MapWorld, mix: Mapping[Union[TaskKind, str], int], seed: int, out_dir,
                  policy: Optional[ViewportPolicy] = None, options: Optional[TaskOptions] = None,
                  threads: Optional[int] = None) -> list[dict]:
    """Write images/*.ppm, manifest.jsonl, vocab.txt, world.json and dataset.json under `out_dir`;
    return the manifest rows."""
    policy = policy or ViewportPolicy()
    options = options or TaskOptions()
    jobs: list[tuple[int, TaskKind]] = []
    for kind in TaskKind:
        count = int(mix.get(kind, mix.get(kind.value, 0)))
        if count < 0:
            raise ValueError(f"negative sample count for {kind.value}")
        jobs.extend((0, kind) for _ in range(count))
    unknown = {str(k) for k in mix} - {k.value for k in TaskKind} - {str(k) for k in TaskKind}
    if unknown:
        raise ValueError(f"unknown task kind(s) in mix: {sorted(unknown)}")
    jobs = [(i, kind) for i, (_, kind) in enumerate(jobs)]
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)

    def run(job):
        i, kind = job
        sid = f"s{i:06d}"
        s = make_sample(world, kind, policy, sample_rng(seed, i), options, sid)
        rel = f"images/{sid}.ppm"
        path = out / rel
        try:
            path.write_bytes(write_ppm(s.raster))
        except OSError as e:
            raise OSError(f"cannot write {path}: {e}") from e
        return {
            "manifest_format": MANIFEST_FORMAT,
            "id": sid,
            "kind": kind.value,
            "image": rel,
            "input_text": s.input_text,
            "target_text": s.target_text,
            "truth": s.truth,
            "split": split_of(sid),
        }

    n_threads = _thread_count(threads)
    if n_threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]

    with open(out / "manifest.jsonl", "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    vocab = build_vocab([base_charset()] + [r["input_text"] + r["target_text"] for r in rows])
    vocab.save(out / "vocab.txt")
    meta = {
        "manifest_format": MANIFEST_FORMAT,
        "seed": seed,
        "world_seed": world.seed,
        "mix": {k.value: int(mix.get(k, mix.get(k.value, 0))) for k in TaskKind},
        "policy": asdict(policy),
        "options": asdict(options),
        "samples": len(rows),
    }
    (out / "world.json").write_text(world_to_json(world), encoding="utf-8")
    (out / "dataset.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return rows


def load_manifest(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    rows = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{n}: malformed manifest row ({e.msg})") from e
            if row.get("manifest_format") != MANIFEST_FORMAT:
                raise ValueError(f"{path}:{n}: unsupported manifest_format {row.get('manifest_format')!r}")
            rows.append(row)
    return rows


def load_image(dataset_dir, row: Mapping) -> Raster:
    path = Path(dataset_dir) / row["image"]
    try:
        return read_ppm(path.read_bytes())
    except OSError as e:
        raise OSError(f"cannot read {path}: {e}") from e


def load_world(dataset_dir) -> MapWorld:
    path = Path(dataset_dir) / "world.json"
    try:
        return world_from_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise OSError(f"cannot read {path}: {e}") from e


def load_vocab(dataset_dir) -> Vocabulary:
    return Vocabulary.load(Path(dataset_dir) / "vocab.txt")
