"""Coordinate systems: lng/lat points, viewport projection and geodesic distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEGREE = 111_320.0
MIN_SCALE = 3
MAX_SCALE = 18


@dataclass(frozen=True)
class GeoPoint:
    lng: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lng <= 180.0) or not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"GeoPoint out of range: lng={self.lng}, lat={self.lat}")

    def as_list(self) -> list[float]:
        return [self.lng, self.lat]


@dataclass(frozen=True)
class PixelCoord:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"PixelCoord must be finite: ({self.x}, {self.y})")


@dataclass(frozen=True)
class Viewport:
    center: GeoPoint
    scale: int
    width_px: int
    height_px: int

    def __post_init__(self):
        if not isinstance(self.scale, int) or not MIN_SCALE <= self.scale <= MAX_SCALE:
            raise ValueError(f"scale must be an integer in [{MIN_SCALE}, {MAX_SCALE}], got {self.scale!r}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"viewport size must be positive, got {self.width_px}x{self.height_px}")

    @property
    def mpp(self) -> float:
        return meters_per_pixel(self.scale)

    def to_dict(self) -> dict:
        return {
            "center": self.center.as_list(),
            "scale": self.scale,
            "width_px": self.width_px,
            "height_px": self.height_px,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Viewport":
        return cls(GeoPoint(*d["center"]), int(d["scale"]), int(d["width_px"]), int(d["height_px"]))


def meters_per_pixel(scale: int) -> float:
    """Ground resolution of a scale level: 204800 / 2**scale, i.e. exactly 100 m/px at 11."""
    if isinstance(scale, bool) or not isinstance(scale, int) or not MIN_SCALE <= scale <= MAX_SCALE:
        raise ValueError(f"scale must be an integer in [{MIN_SCALE}, {MAX_SCALE}], got {scale!r}")
    return 204800.0 / 2**scale


def project(p: GeoPoint, vp: Viewport) -> PixelCoord:
    # local equirectangular; valid within ~0.5 degree of the viewport center
    mpp = meters_per_pixel(vp.scale)
    c = vp.center
    x = vp.width_px / 2 + (p.lng - c.lng) * METERS_PER_DEGREE * math.cos(math.radians(c.lat)) / mpp
    y = vp.height_px / 2 - (p.lat - c.lat) * METERS_PER_DEGREE / mpp
    return PixelCoord(x, y)


def unproject(px: PixelCoord, vp: Viewport) -> GeoPoint:
    mpp = meters_per_pixel(vp.scale)
    c = vp.center
    lng = c.lng + (px.x - vp.width_px / 2) * mpp / (METERS_PER_DEGREE * math.cos(math.radians(c.lat)))
    lat = c.lat - (px.y - vp.height_px / 2) * mpp / METERS_PER_DEGREE
    return GeoPoint(lng, lat)


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371 km."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lng - a.lng)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


class LocalFrame:
    """East/north meter offsets around a fixed origin, matching `project`'s equirectangular law."""

    def __init__(self, origin: GeoPoint):
        self.origin = origin
        self._kx = METERS_PER_DEGREE * math.cos(math.radians(origin.lat))

    def to_m(self, p: GeoPoint) -> tuple[float, float]:
        return ((p.lng - self.origin.lng) * self._kx, (p.lat - self.origin.lat) * METERS_PER_DEGREE)

    def to_geo(self, east: float, north: float) -> GeoPoint:
        return GeoPoint(self.origin.lng + east / self._kx, self.origin.lat + north / METERS_PER_DEGREE)
