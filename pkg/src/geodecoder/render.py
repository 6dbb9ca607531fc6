"""Integer rasterization of base maps and task overlays, plus binary PPM I/O.

Everything here is deterministic to the byte: no anti-aliasing, polygons are
scanline-filled at pixel centers, lines are DDA-stepped with a square brush,
and colors are blended with round-half-up arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Optional, Sequence, Union

import numpy as np

from .geo import METERS_PER_DEGREE, GeoPoint, PixelCoord, Viewport, meters_per_pixel
from .worldgen import AOI_CATEGORIES, MapWorld

RGB = tuple[int, int, int]

MINOR_ROAD_WIDTH = 2
MAJOR_ROAD_WIDTH = 4
DASH_ON, DASH_OFF = 6, 4
SCANNER_HALF_ANGLE = 15.0
HEATMAP_ALPHA = 0.6
HEATMAP_LEVELS = 16

OVERLAY_COLORS: dict[str, RGB] = {
    "red": (230, 30, 30),
    "green": (20, 160, 60),
    "blue": (30, 80, 230),
    "orange": (255, 128, 0),
    "purple": (140, 50, 190),
    "cyan": (0, 190, 210),
    "black": (20, 20, 20),
}

# category -> element class name reported by element identification
AOI_CLASS_NAMES = {
    "residential": "residential area",
    "campus": "campus",
    "park": "park",
    "mall": "shopping mall",
    "office": "office area",
}


class PPMError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class Raster:
    """RGB8 image stored as an (height, width, 3) uint8 array."""

    def __init__(self, width: int, height: int, data: Optional[np.ndarray] = None):
        if width <= 0 or height <= 0:
            raise ValueError(f"raster size must be positive, got {width}x{height}")
        if data is None:
            data = np.zeros((height, width, 3), dtype=np.uint8)
        elif data.shape != (height, width, 3) or data.dtype != np.uint8:
            raise ValueError(f"pixel array must be uint8 of shape {(height, width, 3)}, got {data.dtype} {data.shape}")
        self.width = width
        self.height = height
        self.data = data

    @classmethod
    def filled(cls, width: int, height: int, color: RGB) -> "Raster":
        r = cls(width, height)
        r.data[:] = color
        return r

    @property
    def pixels(self) -> bytes:
        return self.data.tobytes()

    def pixel(self, x: int, y: int) -> RGB:
        return tuple(int(v) for v in self.data[y, x])

    def copy(self) -> "Raster":
        return Raster(self.width, self.height, self.data.copy())

    def __eq__(self, other) -> bool:
        return isinstance(other, Raster) and np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        return f"Raster({self.width}x{self.height})"


@dataclass(frozen=True)
class Style:
    background: RGB = (242, 239, 233)
    water: RGB = (160, 200, 240)
    green: RGB = (185, 225, 160)
    major_road: RGB = (250, 200, 80)
    minor_road: RGB = (255, 255, 255)
    aoi_fill: dict = field(default_factory=lambda: {
        "residential": (226, 218, 232),
        "campus": (238, 224, 196),
        "park": (205, 232, 190),
        "mall": (246, 212, 212),
        "office": (212, 224, 242),
    })
    aoi_outline: dict = field(default_factory=lambda: {
        "residential": (196, 182, 210),
        "campus": (214, 190, 150),
        "park": (150, 200, 130),
        "mall": (226, 170, 170),
        "office": (170, 190, 222),
    })
    labels_disabled: bool = True

    def colors(self) -> dict[str, RGB]:
        out = {
            "background": self.background,
            "water": self.water,
            "green": self.green,
            "major_road": self.major_road,
            "minor_road": self.minor_road,
        }
        for c in AOI_CATEGORIES:
            out[f"aoi_fill.{c}"] = self.aoi_fill[c]
            out[f"aoi_outline.{c}"] = self.aoi_outline[c]
        return out

    def validate(self) -> None:
        seen: dict[RGB, str] = {}
        for name, color in self.colors().items():
            if tuple(color) in seen:
                raise ValueError(f"style colors {seen[tuple(color)]} and {name} coincide")
            seen[tuple(color)] = name

    def element_classes(self) -> dict[RGB, str]:
        """Color -> element class name; every base-map color maps to exactly one class."""
        out = {
            self.background: "open land",
            self.water: "water",
            self.green: "green space",
            self.major_road: "major road",
            self.minor_road: "minor road",
        }
        for c in AOI_CATEGORIES:
            out[self.aoi_fill[c]] = AOI_CLASS_NAMES[c]
            out[self.aoi_outline[c]] = AOI_CLASS_NAMES[c]
        return out


DEFAULT_STYLE = Style()

# -- overlays --------------------------------------------------------------

MARKER_SHAPES = ("dot", "diamond", "circle", "letter", "scanner")


@dataclass(frozen=True)
class Marker:
    at: Union[GeoPoint, PixelCoord]
    shape: str = "dot"
    color: RGB = OVERLAY_COLORS["red"]
    radius: int = 4
    char: Optional[str] = None
    angle: float = 0.0  # scanner bearing, degrees clockwise from north

    def __post_init__(self):
        if self.shape not in MARKER_SHAPES:
            raise ValueError(f"unknown marker shape {self.shape!r}")
        if self.shape == "letter" and (self.char is None or self.char not in GLYPHS):
            raise ValueError(f"letter marker needs a glyph character, got {self.char!r}")


@dataclass(frozen=True)
class Path:
    points: tuple[GeoPoint, ...]
    color: RGB = OVERLAY_COLORS["blue"]
    width: int = 2
    dashed: bool = False
    gradient_to: Optional[RGB] = None  # temporal gradient from `color` to this

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("path needs at least two points")


@dataclass(frozen=True)
class PolygonOverlay:
    ring: tuple[GeoPoint, ...]
    outline: RGB = OVERLAY_COLORS["blue"]
    fill: Optional[RGB] = None
    alpha: float = 0.5
    width: int = 1

    def __post_init__(self):
        if len(self.ring) < 3:
            raise ValueError("polygon ring needs at least three vertices")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class Heatmap:
    points: tuple[tuple[GeoPoint, float], ...]
    sigma_m: float = 15.0
    colormap: str = "heat"

    def __post_init__(self):
        if self.sigma_m <= 0:
            raise ValueError("heatmap sigma must be positive")
        if any(w < 0 for _, w in self.points):
            raise ValueError("heatmap weights must be non-negative")


Overlay = Union[Marker, Path, PolygonOverlay, Heatmap]

# 5x7 glyphs for letter markers
GLYPHS = {
    "P": ("11110", "10001", "10001", "11110", "10000", "10000", "10000"),
    "G": ("01110", "10001", "10000", "10111", "10001", "10001", "01111"),
    "H": ("10001", "10001", "10001", "11111", "10001", "10001", "10001"),
    "B": ("11110", "10001", "10001", "11110", "10001", "10001", "11110"),
    "S": ("01111", "10000", "10000", "01110", "00001", "00001", "11110"),
    "W": ("10001", "10001", "10001", "10101", "10101", "10101", "01010"),
    "T": ("11111", "00100", "00100", "00100", "00100", "00100", "00100"),
    "E": ("11111", "10000", "10000", "11110", "10000", "10000", "11111"),
}

_RAMPS = {
    "heat": ((255, 255, 178), (254, 204, 92), (253, 141, 60), (240, 59, 32), (189, 0, 38)),
    "cool": ((222, 235, 247), (158, 202, 225), (66, 146, 198), (8, 81, 156), (8, 48, 107)),
}


def colormap(name: str, levels: int = HEATMAP_LEVELS) -> np.ndarray:
    """(levels, 3) uint8 ramp; index levels-1 is the maximum-intensity color."""
    if name not in _RAMPS:
        raise ValueError(f"unknown colormap {name!r}")
    stops = np.array(_RAMPS[name], dtype=np.float64)
    pos = np.linspace(0, len(stops) - 1, levels)
    lo = np.floor(pos).astype(int).clip(0, len(stops) - 2)
    frac = (pos - lo)[:, None]
    return np.floor(stops[lo] * (1 - frac) + stops[lo + 1] * frac + 0.5).astype(np.uint8)


# -- low-level drawing -----------------------------------------------------


def _round_half_up(v):
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5).astype(np.int64)


def project_array(lnglat: np.ndarray, vp: Viewport) -> np.ndarray:
    """Vectorized `geo.project` for an (n, 2) lng/lat array."""
    mpp = meters_per_pixel(vp.scale)
    c = vp.center
    kx = METERS_PER_DEGREE * math.cos(math.radians(c.lat)) / mpp
    out = np.empty_like(lnglat, dtype=np.float64)
    out[:, 0] = vp.width_px / 2 + (lnglat[:, 0] - c.lng) * kx
    out[:, 1] = vp.height_px / 2 - (lnglat[:, 1] - c.lat) * METERS_PER_DEGREE / mpp
    return out


def _ll(points: Sequence[GeoPoint]) -> np.ndarray:
    return np.array([(p.lng, p.lat) for p in points], dtype=np.float64)


def _blend(dst: np.ndarray, color, alpha: float) -> np.ndarray:
    mixed = (1.0 - alpha) * dst.astype(np.float64) + alpha * np.asarray(color, dtype=np.float64)
    return np.floor(mixed + 0.5).astype(np.uint8)


def fill_polygon(img: np.ndarray, pts: np.ndarray, color: RGB, alpha: Optional[float] = None) -> None:
    """Even-odd scanline fill of pixels whose centers lie inside the ring."""
    h, w = img.shape[:2]
    x0s, y0s = pts[:, 0], pts[:, 1]
    x1s, y1s = np.roll(x0s, -1), np.roll(y0s, -1)
    row_lo = max(0, int(math.floor(y0s.min() - 0.5)))
    row_hi = min(h - 1, int(math.ceil(y0s.max())))
    if x0s.max() < 0 or x0s.min() > w:
        return
    for row in range(row_lo, row_hi + 1):
        yc = row + 0.5
        hit = ((y0s <= yc) & (y1s > yc)) | ((y1s <= yc) & (y0s > yc))
        if not hit.any():
            continue
        xa, ya, xb, yb = x0s[hit], y0s[hit], x1s[hit], y1s[hit]
        xs = np.sort(xa + (yc - ya) * (xb - xa) / (yb - ya))
        for a, b in zip(xs[0::2], xs[1::2]):
            start = max(0, int(math.ceil(a - 0.5)))
            end = min(w, int(math.ceil(b - 0.5)))
            if end <= start:
                continue
            if alpha is None:
                img[row, start:end] = color
            else:
                img[row, start:end] = _blend(img[row, start:end], color, alpha)


def _clip_range(x0, y0, x1, y1, lo_x, lo_y, hi_x, hi_y) -> Optional[tuple[float, float]]:
    """Liang-Barsky parameter interval of the segment inside the box, or None."""
    t0, t1 = 0.0, 1.0
    dx, dy = x1 - x0, y1 - y0
    for p, q in ((-dx, x0 - lo_x), (dx, hi_x - x0), (-dy, y0 - lo_y), (dy, hi_y - y0)):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return t0, t1


def _stamp(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, colors: np.ndarray, width: int) -> None:
    """Paint a width x width square brush at each (x, y); later stamps win."""
    h, w = img.shape[:2]
    offs = np.arange(-(width // 2), width - width // 2)
    ox, oy = np.meshgrid(offs, offs)
    px = (xs[:, None] + ox.ravel()[None]).ravel()
    py = (ys[:, None] + oy.ravel()[None]).ravel()
    col = np.repeat(colors, len(offs) ** 2, axis=0)
    ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    img[py[ok], px[ok]] = col[ok]


def stroke_polyline(
    img: np.ndarray,
    pts: np.ndarray,
    color: RGB,
    width: int = 1,
    closed: bool = False,
    dashed: bool = False,
    gradient_to: Optional[RGB] = None,
) -> None:
    """DDA-stroke a polyline given in float pixel coordinates."""
    if closed:
        pts = np.vstack([pts, pts[:1]])
    h, w = img.shape[:2]
    anchors = np.floor(pts).astype(np.int64)
    seg_len = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    c0 = np.asarray(color, dtype=np.float64)
    c1 = np.asarray(gradient_to if gradient_to is not None else color, dtype=np.float64)
    margin = width + 1
    for k in range(len(pts) - 1):
        (x0, y0), (x1, y1) = anchors[k], anchors[k + 1]
        n = int(max(abs(x1 - x0), abs(y1 - y0)))
        if n == 0:
            steps = np.array([0.0])
        else:
            clip = _clip_range(x0, y0, x1, y1, -margin, -margin, w + margin, h + margin)
            if clip is None:
                continue
            i0, i1 = int(math.floor(clip[0] * n)), int(math.ceil(clip[1] * n))
            steps = np.arange(i0, i1 + 1) / n
        xs = _round_half_up(x0 + (x1 - x0) * steps)
        ys = _round_half_up(y0 + (y1 - y0) * steps)
        along = cum[k] + steps * seg_len[k]
        if dashed:
            keep = np.mod(along, DASH_ON + DASH_OFF) < DASH_ON
            xs, ys, along = xs[keep], ys[keep], along[keep]
        if gradient_to is not None and total > 0:
            frac = (along / total)[:, None]
            cols = _round_half_up(c0 * (1 - frac) + c1 * frac).astype(np.uint8)
        else:
            cols = np.repeat(np.asarray(color, dtype=np.uint8)[None], len(xs), axis=0)
        _stamp(img, xs, ys, cols, width)


def _marker_mask(shape: str, radius: int, angle: float, char: Optional[str]) -> tuple[np.ndarray, np.ndarray, Optional[tuple]]:
    r = radius
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    d2 = dx * dx + dy * dy
    if shape == "dot" or shape == "letter":
        mask = d2 <= r * r
    elif shape == "diamond":
        mask = np.abs(dx) + np.abs(dy) <= r
    elif shape == "circle":
        mask = (d2 > (r - 2) ** 2) & (d2 <= r * r)
    else:  # scanner wedge
        bearing = np.degrees(np.arctan2(dx, -dy))
        diff = np.abs((bearing - angle + 180.0) % 360.0 - 180.0)
        mask = (d2 <= r * r) & (diff <= SCANNER_HALF_ANGLE)
        mask |= d2 <= 4
    glyph = None
    if shape == "letter":
        rows = GLYPHS[char]
        gy, gx = np.nonzero(np.array([[c == "1" for c in row] for row in rows]))
        glyph = (gx - 2, gy - 3)
    return dx[mask], dy[mask], glyph


def _anchor(at: Union[GeoPoint, PixelCoord], vp: Viewport) -> tuple[int, int]:
    if isinstance(at, GeoPoint):
        x, y = project_array(np.array([[at.lng, at.lat]]), vp)[0]
    else:
        x, y = at.x, at.y
    return int(math.floor(x)), int(math.floor(y))


def _put(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, color) -> None:
    h, w = img.shape[:2]
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    img[ys[ok], xs[ok]] = color


# -- public rendering ------------------------------------------------------


def render_base(world: MapWorld, vp: Viewport, style: Style = DEFAULT_STYLE) -> Raster:
    if vp.width_px <= 0 or vp.height_px <= 0:
        raise ValueError("zero-size viewport")
    raster = Raster.filled(vp.width_px, vp.height_px, style.background)
    img = raster.data

    def visible(px: np.ndarray, pad: float = 4.0) -> bool:
        return not (
            px[:, 0].max() < -pad or px[:, 0].min() > vp.width_px + pad
            or px[:, 1].max() < -pad or px[:, 1].min() > vp.height_px + pad
        )

    for ring in world.green:
        px = project_array(_ll(ring), vp)
        if visible(px):
            fill_polygon(img, px, style.green)
    for ring in world.water:
        px = project_array(_ll(ring), vp)
        if visible(px):
            fill_polygon(img, px, style.water)
    for aoi in world.aois:
        px = project_array(_ll(aoi.polygon), vp)
        if visible(px):
            fill_polygon(img, px, style.aoi_fill[aoi.category])
            stroke_polyline(img, px, style.aoi_outline[aoi.category], width=1, closed=True)
    for cls, color, width in (("minor", style.minor_road, MINOR_ROAD_WIDTH), ("major", style.major_road, MAJOR_ROAD_WIDTH)):
        for road in world.roads:
            if road.road_class != cls:
                continue
            px = project_array(_ll(road.polyline), vp)
            if visible(px, pad=width):
                stroke_polyline(img, px, color, width=width)
    return raster


def draw_overlay(raster: Raster, vp: Viewport, overlay: Overlay) -> Raster:
    """Paint `overlay` onto `raster` in place (and return it); off-screen parts are clipped."""
    return _draw(overlay, raster, vp)


@singledispatch
def _draw(overlay, raster: Raster, vp: Viewport) -> Raster:
    raise TypeError(f"not an overlay: {overlay!r}")


@_draw.register
def _(overlay: Marker, raster: Raster, vp: Viewport) -> Raster:
    ax, ay = _anchor(overlay.at, vp)
    dx, dy, glyph = _marker_mask(overlay.shape, overlay.radius, overlay.angle, overlay.char)
    _put(raster.data, ax + dx, ay + dy, overlay.color)
    if glyph is not None:
        _put(raster.data, ax + glyph[0], ay + glyph[1], (255, 255, 255))
    return raster


@_draw.register
def _(overlay: Path, raster: Raster, vp: Viewport) -> Raster:
    px = project_array(_ll(overlay.points), vp)
    stroke_polyline(raster.data, px, overlay.color, overlay.width, dashed=overlay.dashed, gradient_to=overlay.gradient_to)
    return raster


@_draw.register
def _(overlay: PolygonOverlay, raster: Raster, vp: Viewport) -> Raster:
    px = project_array(_ll(overlay.ring), vp)
    if overlay.fill is not None:
        fill_polygon(raster.data, px, overlay.fill, alpha=overlay.alpha)
    stroke_polyline(raster.data, px, overlay.outline, overlay.width, closed=True)
    return raster


@_draw.register
def _(overlay: Heatmap, raster: Raster, vp: Viewport) -> Raster:
    return render_heatmap(raster, vp, overlay.points, overlay.sigma_m, overlay.colormap)


def heatmap_levels(vp: Viewport, points: Sequence[tuple[GeoPoint, float]], sigma_m: float, levels: int = HEATMAP_LEVELS) -> Optional[np.ndarray]:
    """Per-pixel colormap index in [0, levels); None when there is no mass to draw."""
    if sigma_m <= 0:
        raise ValueError("heatmap sigma must be positive")
    if not points:
        return None
    weights = np.array([w for _, w in points], dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("heatmap weights must be non-negative")
    if not np.any(weights > 0):
        return None
    px = project_array(_ll([p for p, _ in points]), vp)
    sigma_px = sigma_m / meters_per_pixel(vp.scale)
    ys = np.arange(vp.height_px) + 0.5
    xs = np.arange(vp.width_px) + 0.5
    intensity = np.zeros((vp.height_px, vp.width_px))
    for (x, y), wgt in zip(px, weights):
        gx = np.exp(-((xs - x) ** 2) / (2 * sigma_px**2))
        gy = np.exp(-((ys - y) ** 2) / (2 * sigma_px**2))
        intensity += wgt * np.outer(gy, gx)
    peak = intensity.max()
    if peak <= 0:
        return None
    return np.floor(intensity / peak * (levels - 1) + 0.5).astype(np.int64)


def render_heatmap(raster: Raster, vp: Viewport, points, sigma_m: float, cmap: str = "heat") -> Raster:
    """Gaussian-kernel density, self-normalized, blended at 60% where its level is non-zero."""
    level = heatmap_levels(vp, points, sigma_m)
    if level is None:
        return raster
    ramp = colormap(cmap)
    hot = level > 0
    raster.data[hot] = _blend(raster.data[hot], ramp[level[hot]], HEATMAP_ALPHA)
    return raster


# -- PPM -------------------------------------------------------------------


def write_ppm(raster: Raster) -> bytes:
    return f"P6\n{raster.width} {raster.height}\n255\n".encode("ascii") + raster.pixels


def _header_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    """Skip whitespace, read one decimal field; returns (value, position after it)."""
    while pos < len(data) and data[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(data) and data[pos:pos + 1].isdigit():
        pos += 1
    if pos == start:
        raise PPMError(f"expected {what}", start)
    return int(data[start:pos]), pos


def read_ppm(data: bytes) -> Raster:
    if not data.startswith(b"P6"):
        raise PPMError("missing P6 magic number", 0)
    pos = 2
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PPMError("expected whitespace after magic number", pos)
    width, pos = _header_int(data, pos, "width")
    height, pos = _header_int(data, pos, "height")
    field_start = pos
    maxval, pos = _header_int(data, pos, "maxval")
    if maxval != 255:
        raise PPMError(f"unsupported maxval {maxval}", field_start)
    if width <= 0 or height <= 0:
        raise PPMError(f"invalid raster size {width}x{height}", 2)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PPMError("expected single whitespace before payload", pos)
    start = pos + 1
    need = 3 * width * height
    payload = data[start:start + need]
    if len(payload) < need:
        raise PPMError(f"truncated payload: expected {need} bytes, got {len(payload)}", start + len(payload))
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()
    return Raster(width, height, arr)
