"""Deterministic synthetic map worlds and spatial queries over them.

A world is a perturbed road grid. Every grid cell not used for water or green
space may hold one rectangular AOI inset from its bounding roads; POIs sit on
street frontages between 20 and 45 m from a road, so their street addresses
resolve back to within 50 m. Parent-child entities are named by extending the
parent's name ("Haiyun University" -> "Haiyun University Library") and are
placed inside the parent footprint.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np

from .geo import GeoPoint, LocalFrame

WORLD_FORMAT = 1

POI_CATEGORIES = ("shop", "hotel", "restaurant", "office", "gate", "parking", "station")
AOI_CATEGORIES = ("residential", "campus", "park", "mall", "office")
ROAD_CLASSES = ("major", "minor")

# road centerline buffer that no POI may fall inside
ROAD_BUFFER_M = 15.0
POI_MAX_OFFSET_M = 45.0
HOUSE_NUMBER_STEP_M = 10.0

_SYLLABLES = (
    "an", "bai", "bei", "chang", "cheng", "da", "dong", "feng", "fu", "guang",
    "hai", "he", "hong", "hua", "jia", "jin", "jing", "kang", "le", "li",
    "lin", "long", "ming", "nan", "ping", "qing", "rui", "shan", "shun", "tai",
    "tian", "wan", "xi", "xin", "ya", "yang", "yong", "yuan", "yun", "zhong",
)

_ROAD_WORDS = {"major": ("Avenue", "Road"), "minor": ("Street", "Lane")}
_AOI_WORDS = {
    "residential": ("Garden", "Residence", "Estate"),
    "campus": ("University", "College", "Institute"),
    "park": ("Park",),
    "mall": ("Mall", "Plaza"),
    "office": ("Tower", "Center"),
}
_AOI_CHILD_SUFFIXES = {
    "residential": ("Phase 2", "Block C", "Clubhouse"),
    "campus": ("Dept. of Electronics", "Library", "Stadium", "Dept. of Physics"),
    "park": ("East Garden", "Lake View", "Pavilion"),
    "mall": ("North Wing", "Block B", "Food Court"),
    "office": ("Tower A", "Annex", "Podium"),
}
_POI_WORDS = {
    "shop": ("Store", "Mart"),
    "hotel": ("Hotel", "Inn"),
    "restaurant": ("Restaurant", "Kitchen", "Noodles"),
    "office": ("Company", "Technologies"),
    "gate": ("Gate",),
    "parking": ("Parking",),
    "station": ("Station", "Bus Stop"),
}
_POI_CHILD_SUFFIXES = {
    "shop": ("Shop", "Bookstore"),
    "hotel": ("Guesthouse",),
    "restaurant": ("Canteen", "Cafe"),
    "office": ("Admin Office",),
    "gate": None,  # named after the frontage side
    "parking": ("Parking Lot",),
    "station": ("Bus Stop",),
}


class GenerationError(ValueError):
    """World configuration cannot be realized."""


@dataclass(frozen=True)
class Road:
    id: str
    name: str
    road_class: str
    polyline: tuple[GeoPoint, ...]


@dataclass(frozen=True)
class Aoi:
    id: str
    name: str
    polygon: tuple[GeoPoint, ...]
    category: str
    parent_id: Optional[str] = None


@dataclass(frozen=True)
class Poi:
    id: str
    name: str
    address: str
    location: GeoPoint
    category: str
    popularity_rank: int
    parent_id: Optional[str] = None


@dataclass(frozen=True)
class District:
    name: str
    polygon: tuple[GeoPoint, ...]
    streets: tuple[str, ...]


@dataclass(frozen=True)
class DistrictTree:
    city: str
    districts: tuple[District, ...]


@dataclass(frozen=True)
class WorldConfig:
    center_lng: float = 116.40
    center_lat: float = 39.90
    extent_m: float = 12_000.0
    road_spacing_m: tuple[float, float] = (400.0, 800.0)
    major_fraction: float = 0.3
    n_aois: int = 150
    n_pois: int = 1200
    n_water: int = 2
    n_green: int = 6
    parent_fraction: float = 0.3

    def validate(self) -> None:
        lo, hi = self.road_spacing_m
        if self.extent_m <= 0:
            raise GenerationError("extent_m must be positive")
        if not 0 < lo <= hi:
            raise GenerationError("road_spacing_m must satisfy 0 < low <= high")
        if hi * 2 > self.extent_m:
            raise GenerationError("road_spacing_m too large for extent_m: need at least two roads per axis")
        if lo < 2 * (POI_MAX_OFFSET_M + 10):
            raise GenerationError("road_spacing_m low bound must be at least 110 m")
        for name in ("n_aois", "n_pois", "n_water", "n_green"):
            if getattr(self, name) < 0:
                raise GenerationError(f"{name} must be non-negative")
        if self.n_pois < 1:
            raise GenerationError("n_pois must be positive")
        if not 0.0 <= self.parent_fraction <= 0.5:
            raise GenerationError("parent_fraction must lie in [0, 0.5]")
        if not 0.0 <= self.major_fraction <= 1.0:
            raise GenerationError("major_fraction must lie in [0, 1]")

    @property
    def center(self) -> GeoPoint:
        return GeoPoint(self.center_lng, self.center_lat)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        d = dict(d)
        if "road_spacing_m" in d:
            d["road_spacing_m"] = tuple(float(v) for v in d["road_spacing_m"])
        return cls(**d)


@dataclass(frozen=True)
class SceneContext:
    aoi_id: Optional[str]
    road_id: str
    road_distance_m: float
    district: str
    district_path: tuple[str, ...]
    water: bool
    green: bool


@dataclass(frozen=True)
class Address:
    city: str
    district: str
    street: str
    number: int
    aoi: Optional[str] = None
    unit: Optional[int] = None

    def __str__(self) -> str:
        text = f"{self.city}, {self.district}, {self.street} No.{self.number}"
        if self.aoi is not None:
            text += f", {self.aoi}"
            if self.unit is not None:
                text += f", Unit {self.unit}"
        return text


_ADDRESS_RE = re.compile(
    r"^(?P<city>[^,]+ City), (?P<district>[^,]+ District), (?P<street>[^,]+) No\.(?P<number>\d+)"
    r"(?:, (?P<aoi>[^,]+?)(?:, Unit (?P<unit>\d+))?)?$"
)


def parse_address(text: str) -> Address:
    m = _ADDRESS_RE.match(text)
    if m is None:
        raise ValueError(f"address does not match the grammar: {text!r}")
    unit = m.group("unit")
    return Address(
        m.group("city"), m.group("district"), m.group("street"), int(m.group("number")),
        m.group("aoi"), int(unit) if unit is not None else None,
    )


@dataclass
class MapWorld:
    roads: list[Road]
    aois: list[Aoi]
    pois: list[Poi]
    water: list[tuple[GeoPoint, ...]]
    green: list[tuple[GeoPoint, ...]]
    district_tree: DistrictTree
    seed: int
    config: WorldConfig = field(default_factory=WorldConfig)

    # -- lookups -----------------------------------------------------------

    @cached_property
    def frame(self) -> LocalFrame:
        return LocalFrame(self.config.center)

    @cached_property
    def road_by_id(self) -> dict[str, Road]:
        return {r.id: r for r in self.roads}

    @cached_property
    def road_by_name(self) -> dict[str, Road]:
        return {r.name: r for r in self.roads}

    @cached_property
    def aoi_by_id(self) -> dict[str, Aoi]:
        return {a.id: a for a in self.aois}

    @cached_property
    def poi_by_id(self) -> dict[str, Poi]:
        return {p.id: p for p in self.pois}

    def entity(self, entity_id: str):
        if entity_id in self.aoi_by_id:
            return self.aoi_by_id[entity_id]
        if entity_id in self.poi_by_id:
            return self.poi_by_id[entity_id]
        raise KeyError(entity_id)

    def to_m(self, p: GeoPoint) -> tuple[float, float]:
        return self.frame.to_m(p)

    def ring_m(self, ring: Iterable[GeoPoint]) -> np.ndarray:
        return np.array([self.frame.to_m(p) for p in ring], dtype=np.float64)

    @cached_property
    def _segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        starts, ends, owner = [], [], []
        for k, road in enumerate(self.roads):
            pts = self.ring_m(road.polyline)
            starts.append(pts[:-1])
            ends.append(pts[1:])
            owner.extend([k] * (len(pts) - 1))
        if not owner:
            return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, dtype=np.int64)
        return np.concatenate(starts), np.concatenate(ends), np.asarray(owner, dtype=np.int64)

    @cached_property
    def _aoi_rings(self) -> list[np.ndarray]:
        return [self.ring_m(a.polygon) for a in self.aois]

    @cached_property
    def _aoi_areas(self) -> np.ndarray:
        return np.array([polygon_area(r) for r in self._aoi_rings])

    @cached_property
    def _water_rings(self) -> list[np.ndarray]:
        return [self.ring_m(w) for w in self.water]

    @cached_property
    def _green_rings(self) -> list[np.ndarray]:
        return [self.ring_m(g) for g in self.green]

    @cached_property
    def _popularity_cdf(self) -> np.ndarray:
        weights = np.array([1.0 / p.popularity_rank for p in self.pois])
        return np.cumsum(weights)

    # -- geometry ----------------------------------------------------------

    def nearest_road_m(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized nearest road for an (n, 2) array of local-meter points."""
        a, b, owner = self._segments
        if len(owner) == 0:
            raise ValueError("world has no roads")
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        d = b - a
        len2 = np.einsum("ij,ij->i", d, d)
        rel = pts[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("kij,ij->ki", rel, d) / len2, 0.0, 1.0)
        proj = a[None] + t[..., None] * d[None]
        dist = np.hypot(pts[:, None, 0] - proj[..., 0], pts[:, None, 1] - proj[..., 1])
        # per-road minimum first so ties resolve to the lowest road index
        n_roads = len(self.roads)
        per_road = np.full((len(pts), n_roads), np.inf)
        for k in range(n_roads):
            sel = owner == k
            per_road[:, k] = dist[:, sel].min(axis=1)
        idx = np.argmin(per_road, axis=1)
        return idx, per_road[np.arange(len(pts)), idx]

    def arc_position(self, road: Road, p: GeoPoint) -> tuple[float, float]:
        """(arc length of the closest point along `road`, distance to it) in meters."""
        pts = self.ring_m(road.polyline)
        x, y = self.to_m(p)
        best = (math.inf, 0.0)
        walked = 0.0
        for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
            dx, dy = bx - ax, by - ay
            seg = math.hypot(dx, dy)
            t = min(1.0, max(0.0, ((x - ax) * dx + (y - ay) * dy) / (seg * seg)))
            dist = math.hypot(x - (ax + t * dx), y - (ay + t * dy))
            if dist < best[0]:
                best = (dist, walked + t * seg)
            walked += seg
        return best[1], best[0]

    def point_along(self, road: Road, s: float) -> GeoPoint:
        pts = self.ring_m(road.polyline)
        walked = 0.0
        for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
            seg = math.hypot(bx - ax, by - ay)
            if s <= walked + seg:
                t = max(0.0, (s - walked) / seg)
                return self.frame.to_geo(ax + t * (bx - ax), ay + t * (by - ay))
            walked += seg
        return road.polyline[-1]

    def inside_extent(self, p: GeoPoint) -> bool:
        x, y = self.to_m(p)
        half = self.config.extent_m / 2
        return abs(x) <= half and abs(y) <= half

    def containing_aois(self, p: GeoPoint) -> list[str]:
        x, y = self.to_m(p)
        return [a.id for a, ring in zip(self.aois, self._aoi_rings) if point_in_ring(x, y, ring)]

    def innermost_aoi(self, p: GeoPoint) -> Optional[str]:
        ids = self.containing_aois(p)
        if not ids:
            return None
        areas = {a.id: area for a, area in zip(self.aois, self._aoi_areas)}
        return min(ids, key=lambda i: (areas[i], i))

    def in_water(self, p: GeoPoint) -> bool:
        x, y = self.to_m(p)
        return any(point_in_ring(x, y, r) for r in self._water_rings)

    def in_green(self, p: GeoPoint) -> bool:
        x, y = self.to_m(p)
        return any(point_in_ring(x, y, r) for r in self._green_rings)

    def district_of(self, p: GeoPoint) -> District:
        x, y = self.to_m(p)
        for d in self.district_tree.districts:
            ring = self.ring_m(d.polygon)
            if ring[:, 0].min() <= x <= ring[:, 0].max() and ring[:, 1].min() <= y <= ring[:, 1].max():
                return d
        raise ValueError(f"point {p} lies in no district")

    def aoi_centroid(self, aoi: Aoi) -> GeoPoint:
        cx, cy = polygon_centroid(self.ring_m(aoi.polygon))
        return self.frame.to_geo(cx, cy)

    def resolve_address(self, text: str) -> GeoPoint:
        addr = parse_address(text)
        if addr.city != self.district_tree.city:
            raise ValueError(f"unknown city {addr.city!r}")
        if addr.district not in {d.name for d in self.district_tree.districts}:
            raise ValueError(f"unknown district {addr.district!r}")
        road = self.road_by_name.get(addr.street)
        if road is None:
            raise ValueError(f"unknown street {addr.street!r}")
        return self.point_along(road, (addr.number - 1) * HOUSE_NUMBER_STEP_M)


# -- polygon helpers -------------------------------------------------------


def point_in_ring(x: float, y: float, ring: np.ndarray) -> bool:
    """Even-odd rule; `ring` is an (n, 2) vertex array, implicitly closed."""
    xs, ys = ring[:, 0], ring[:, 1]
    xs2, ys2 = np.roll(xs, -1), np.roll(ys, -1)
    crosses = (ys > y) != (ys2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = xs + (y - ys) * (xs2 - xs) / (ys2 - ys)
    return bool(np.count_nonzero(crosses & (x < xint)) % 2)


def polygon_area(ring: np.ndarray) -> float:
    """Signed shoelace area; positive for counterclockwise rings."""
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(ring: np.ndarray) -> tuple[float, float]:
    x, y = ring[:, 0], ring[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    cross = x * y2 - x2 * y
    a = cross.sum() / 2
    return float(((x + x2) * cross).sum() / (6 * a)), float(((y + y2) * cross).sum() / (6 * a))


def is_simple_ring(ring: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed ring intersect."""
    n = len(ring)
    edges = [(ring[i], ring[(i + 1) % n]) for i in range(n)]

    def orient(p, q, r):
        return np.sign((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))

    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            p1, p2 = edges[i]
            q1, q2 = edges[j]
            if orient(p1, p2, q1) * orient(p1, p2, q2) <= 0 and orient(q1, q2, p1) * orient(q1, q2, p2) <= 0:
                return False
    return True


# -- queries ---------------------------------------------------------------


def nearest_road(world: MapWorld, p: GeoPoint) -> tuple[str, float]:
    idx, dist = world.nearest_road_m(np.array([world.to_m(p)]))
    return world.roads[int(idx[0])].id, float(dist[0])


def sample_poi_by_popularity(world: MapWorld, rng: np.random.Generator) -> str:
    """Draw a POI id with probability proportional to 1 / popularity_rank."""
    cdf = world._popularity_cdf
    u = rng.random() * cdf[-1]
    idx = min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)
    return world.pois[idx].id


def locate(world: MapWorld, p: GeoPoint) -> SceneContext:
    if not world.inside_extent(p):
        raise ValueError(f"point {p} lies outside the world extent")
    road_id, dist = nearest_road(world, p)
    district = world.district_of(p)
    return SceneContext(
        aoi_id=world.innermost_aoi(p),
        road_id=road_id,
        road_distance_m=dist,
        district=district.name,
        district_path=(world.district_tree.city, district.name, world.road_by_id[road_id].name),
        water=world.in_water(p),
        green=world.in_green(p),
    )


# -- generation ------------------------------------------------------------


class _NamePool:
    """Unique capitalized syllable names; two syllables first, three once exhausted."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._stage = 0
        self._pool = self._shuffled(sorted({(a + b).capitalize() for a in _SYLLABLES for b in _SYLLABLES if a != b}))
        self._used: set[str] = set()

    def _shuffled(self, names: list[str]) -> list[str]:
        return [names[i] for i in self._rng.permutation(len(names))]

    def take(self) -> str:
        while True:
            if not self._pool:
                if self._stage:
                    raise GenerationError("ran out of unique entity names")
                self._stage = 1
                self._pool = self._shuffled(
                    sorted({(a + b + c).capitalize() for a in _SYLLABLES for b in _SYLLABLES for c in _SYLLABLES[:12]})
                )
            name = self._pool.pop()
            if name not in self._used:
                self._used.add(name)
                return name


def _grid_offsets(rng: np.random.Generator, half: float, lo: float, hi: float) -> list[float]:
    out = []
    pos = -half + rng.uniform(lo, hi) / 2
    while pos < half - lo / 2:
        out.append(float(pos))
        pos += rng.uniform(lo, hi)
    return out


def _rect(x0: float, y0: float, x1: float, y1: float) -> list[tuple[float, float]]:
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _octagon(x0: float, y0: float, x1: float, y1: float, cut: float) -> list[tuple[float, float]]:
    return [
        (x0 + cut, y0), (x1 - cut, y0), (x1, y0 + cut), (x1, y1 - cut),
        (x1 - cut, y1), (x0 + cut, y1), (x0, y1 - cut), (x0, y0 + cut),
    ]


def generate_world(seed: int, cfg: Optional[WorldConfig] = None) -> MapWorld:
    cfg = cfg or WorldConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    frame = LocalFrame(cfg.center)
    half = cfg.extent_m / 2
    lo, hi = cfg.road_spacing_m
    names = _NamePool(rng)

    def geo_ring(pts):
        return tuple(frame.to_geo(x, y) for x, y in pts)

    xs = _grid_offsets(rng, half, lo, hi)
    ys = _grid_offsets(rng, half, lo, hi)
    if len(xs) < 2 or len(ys) < 2:
        raise GenerationError("road grid needs at least two roads per axis")

    # roads: north-south first, then east-west; vertices at every crossing
    roads: list[Road] = []
    classes = ["major" if rng.random() < cfg.major_fraction else "minor" for _ in range(len(xs) + len(ys))]
    if cfg.major_fraction > 0 and "major" not in classes:
        classes[0] = "major"
    specs = [(x, "ns") for x in xs] + [(y, "ew") for y in ys]
    for k, ((pos, axis), cls) in enumerate(zip(specs, classes)):
        if axis == "ns":
            pts = [(pos, -half)] + [(pos, y) for y in ys] + [(pos, half)]
        else:
            pts = [(-half, pos)] + [(x, pos) for x in xs] + [(half, pos)]
        word = _ROAD_WORDS[cls][int(rng.integers(len(_ROAD_WORDS[cls])))]
        roads.append(Road(f"R{k:04d}", f"{names.take()} {word}", cls, geo_ring(pts)))

    cells = [(xs[i], ys[j], xs[i + 1], ys[j + 1]) for i in range(len(xs) - 1) for j in range(len(ys) - 1)]
    n_child_aois = int(round(cfg.n_aois * cfg.parent_fraction))
    n_top = cfg.n_aois - n_child_aois
    needed = cfg.n_water + cfg.n_green + n_top
    if needed > len(cells):
        raise GenerationError(
            f"n_aois + n_water + n_green needs {needed} road cells but the grid has only {len(cells)}"
        )
    order = rng.permutation(len(cells))
    cell_iter = iter(int(i) for i in order)

    water, green = [], []
    for _ in range(cfg.n_water):
        x0, y0, x1, y1 = cells[next(cell_iter)]
        x0, y0, x1, y1 = x0 + 20, y0 + 20, x1 - 20, y1 - 20
        water.append(geo_ring(_octagon(x0, y0, x1, y1, 0.2 * min(x1 - x0, y1 - y0))))
    for _ in range(cfg.n_green):
        x0, y0, x1, y1 = cells[next(cell_iter)]
        green.append(geo_ring(_rect(x0 + 20, y0 + 20, x1 - 20, y1 - 20)))

    aois: list[Aoi] = []
    top_rects: list[tuple[tuple[float, float, float, float], tuple[float, float, float, float]]] = []
    for k in range(n_top):
        cell = cells[next(cell_iter)]
        insets = rng.uniform(20.0, 35.0, size=4)
        rect = (cell[0] + insets[0], cell[1] + insets[1], cell[2] - insets[2], cell[3] - insets[3])
        category = AOI_CATEGORIES[int(rng.integers(len(AOI_CATEGORIES)))]
        words = _AOI_WORDS[category]
        name = f"{names.take()} {words[int(rng.integers(len(words)))]}"
        aois.append(Aoi(f"A{k:04d}", name, geo_ring(_rect(*rect)), category))
        top_rects.append((cell, rect))

    for k in range(n_child_aois):
        parent = aois[k]
        x0, y0, x1, y1 = top_rects[k][1]
        w, h = (x1 - x0) - 20, (y1 - y0) - 20
        cw, ch = w * rng.uniform(0.3, 0.6), h * rng.uniform(0.3, 0.6)
        cx0 = x0 + 10 + rng.uniform(0, w - cw)
        cy0 = y0 + 10 + rng.uniform(0, h - ch)
        suffixes = _AOI_CHILD_SUFFIXES[parent.category]
        name = f"{parent.name} {suffixes[int(rng.integers(len(suffixes)))]}"
        aois.append(
            Aoi(f"A{n_top + k:04d}", name, geo_ring(_rect(cx0, cy0, cx0 + cw, cy0 + ch)), parent.category, parent.id)
        )

    world = MapWorld(roads, aois, [], water, green, DistrictTree("", ()), seed, cfg)

    # POIs: (x, y, category, name, parent_id)
    raw: list[tuple[float, float, str, str, Optional[str]]] = []
    used_names = {a.name for a in aois} | {r.name for r in roads}
    n_child_pois = int(round(cfg.n_pois * cfg.parent_fraction)) if n_top else 0
    for _ in range(n_child_pois):
        k = int(rng.integers(n_top))
        parent = aois[k]
        cell, (ax0, ay0, ax1, ay1) = top_rects[k]
        side = int(rng.integers(4))
        if side in (0, 1):  # south / north frontage
            along = rng.uniform(ax0 + 5, ax1 - 5)
            if side == 0:
                off = rng.uniform(ay0 - cell[1] + 3, POI_MAX_OFFSET_M)
                x, y = along, cell[1] + off
            else:
                off = rng.uniform(cell[3] - ay1 + 3, POI_MAX_OFFSET_M)
                x, y = along, cell[3] - off
        else:  # west / east frontage
            along = rng.uniform(ay0 + 5, ay1 - 5)
            if side == 2:
                off = rng.uniform(ax0 - cell[0] + 3, POI_MAX_OFFSET_M)
                x, y = cell[0] + off, along
            else:
                off = rng.uniform(cell[2] - ax1 + 3, POI_MAX_OFFSET_M)
                x, y = cell[2] - off, along
        category = POI_CATEGORIES[int(rng.integers(len(POI_CATEGORIES)))]
        suffixes = _POI_CHILD_SUFFIXES[category]
        if suffixes is None:
            suffix = ("South Gate", "North Gate", "West Gate", "East Gate")[side]
        else:
            suffix = suffixes[int(rng.integers(len(suffixes)))]
        name = f"{parent.name} {suffix}"
        n = 2
        while name in used_names:
            name = f"{parent.name} {suffix} {n}"
            n += 1
        used_names.add(name)
        raw.append((float(x), float(y), category, name, parent.id))

    water_rings = [world.ring_m(w) for w in water]
    attempts = 0
    while len(raw) < cfg.n_pois:
        attempts += 1
        if attempts > 200 * cfg.n_pois:
            raise GenerationError("could not place POIs clear of water and road buffers")
        road = roads[int(rng.integers(len(roads)))]
        pts = world.ring_m(road.polyline)
        seg = int(rng.integers(len(pts) - 1))
        t = rng.uniform(0.0, 1.0)
        (ax, ay), (bx, by) = pts[seg], pts[seg + 1]
        dx, dy = bx - ax, by - ay
        norm = math.hypot(dx, dy)
        off = rng.uniform(20.0, POI_MAX_OFFSET_M) * (1 if rng.random() < 0.5 else -1)
        x = ax + t * dx - dy / norm * off
        y = ay + t * dy + dx / norm * off
        if abs(x) > half - 10 or abs(y) > half - 10:
            continue
        if any(point_in_ring(x, y, r) for r in water_rings):
            continue
        if world.nearest_road_m(np.array([[x, y]]))[1][0] < ROAD_BUFFER_M:
            continue
        category = POI_CATEGORIES[int(rng.integers(len(POI_CATEGORIES)))]
        words = _POI_WORDS[category]
        name = f"{names.take()} {words[int(rng.integers(len(words)))]}"
        used_names.add(name)
        raw.append((float(x), float(y), category, name, None))

    city = f"{names.take()} City"
    districts = []
    quadrants = [(-half, 0.0, 0.0, half), (0.0, 0.0, half, half), (-half, -half, 0.0, 0.0), (0.0, -half, half, 0.0)]
    for qx0, qy0, qx1, qy1 in quadrants:
        streets = tuple(
            r.id for r, (pos, axis) in zip(roads, specs)
            if (axis == "ns" and qx0 <= pos <= qx1) or (axis == "ew" and qy0 <= pos <= qy1)
        )
        districts.append(District(f"{names.take()} District", geo_ring(_rect(qx0, qy0, qx1, qy1)), streets))
    world.district_tree = DistrictTree(city, tuple(districts))

    ranks = rng.permutation(len(raw)) + 1
    pois = []
    for k, ((x, y, category, name, parent_id), rank) in enumerate(zip(raw, ranks)):
        loc = frame.to_geo(x, y)
        road_idx, _ = world.nearest_road_m(np.array([[x, y]]))
        road = roads[int(road_idx[0])]
        s, _ = world.arc_position(road, loc)
        aoi_id = world.innermost_aoi(loc)
        unit = int(rng.integers(1, 31)) if aoi_id is not None else None
        address = Address(
            city,
            world.district_of(loc).name,
            road.name,
            int(math.floor(s / HOUSE_NUMBER_STEP_M + 0.5)) + 1,
            world.aoi_by_id[aoi_id].name if aoi_id is not None else None,
            unit,
        )
        pois.append(Poi(f"P{k:05d}", name, str(address), loc, category, int(rank), parent_id))
    world.pois = pois
    return world


# -- serialization ---------------------------------------------------------


def _pt(p: GeoPoint) -> dict:
    return {"lng": p.lng, "lat": p.lat}


def _ring(ring) -> list[dict]:
    return [_pt(p) for p in ring]


def world_to_dict(world: MapWorld) -> dict:
    cfg = asdict(world.config)
    cfg["road_spacing_m"] = list(cfg["road_spacing_m"])
    return {
        "world_format": WORLD_FORMAT,
        "seed": world.seed,
        "config": cfg,
        "roads": [{"id": r.id, "name": r.name, "class": r.road_class, "polyline": _ring(r.polyline)} for r in world.roads],
        "aois": [
            {"id": a.id, "name": a.name, "polygon": _ring(a.polygon), "category": a.category, "parent_id": a.parent_id}
            for a in world.aois
        ],
        "pois": [
            {
                "id": p.id, "name": p.name, "address": p.address, "location": _pt(p.location),
                "category": p.category, "popularity_rank": p.popularity_rank, "parent_id": p.parent_id,
            }
            for p in world.pois
        ],
        "water": [_ring(w) for w in world.water],
        "green": [_ring(g) for g in world.green],
        "district_tree": {
            "city": world.district_tree.city,
            "districts": [
                {"name": d.name, "polygon": _ring(d.polygon), "streets": list(d.streets)}
                for d in world.district_tree.districts
            ],
        },
    }


def world_to_json(world: MapWorld) -> str:
    return json.dumps(world_to_dict(world), sort_keys=True, separators=(",", ":"))


def world_from_dict(d: dict) -> MapWorld:
    if d.get("world_format") != WORLD_FORMAT:
        raise ValueError(f"unsupported world_format {d.get('world_format')!r}")

    def pt(o):
        return GeoPoint(o["lng"], o["lat"])

    def ring(rs):
        return tuple(pt(o) for o in rs)

    dt = d["district_tree"]
    return MapWorld(
        roads=[Road(r["id"], r["name"], r["class"], ring(r["polyline"])) for r in d["roads"]],
        aois=[Aoi(a["id"], a["name"], ring(a["polygon"]), a["category"], a["parent_id"]) for a in d["aois"]],
        pois=[
            Poi(p["id"], p["name"], p["address"], pt(p["location"]), p["category"], p["popularity_rank"], p["parent_id"])
            for p in d["pois"]
        ],
        water=[ring(w) for w in d["water"]],
        green=[ring(g) for g in d["green"]],
        district_tree=DistrictTree(
            dt["city"], tuple(District(x["name"], ring(x["polygon"]), tuple(x["streets"])) for x in dt["districts"])
        ),
        seed=d["seed"],
        config=WorldConfig.from_dict(d["config"]),
    )


def world_from_json(text: str) -> MapWorld:
    return world_from_dict(json.loads(text))
