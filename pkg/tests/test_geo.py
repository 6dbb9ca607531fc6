import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geodecoder.geo import (
    GeoPoint,
    LocalFrame,
    PixelCoord,
    Viewport,
    haversine,
    meters_per_pixel,
    project,
    unproject,
)


def spherical_distance(a: GeoPoint, b: GeoPoint) -> float:
    # arctangent form of the great-circle distance, independent of the haversine code path
    f1, f2 = math.radians(a.lat), math.radians(b.lat)
    dl = math.radians(b.lng - a.lng)
    num = math.hypot(math.cos(f2) * math.sin(dl), math.cos(f1) * math.sin(f2) - math.sin(f1) * math.cos(f2) * math.cos(dl))
    den = math.sin(f1) * math.sin(f2) + math.cos(f1) * math.cos(f2) * math.cos(dl)
    return 6_371_000.0 * math.atan2(num, den)


def test_meters_per_pixel_values():
    assert meters_per_pixel(11) == 100.0
    assert meters_per_pixel(12) == 50.0
    assert meters_per_pixel(3) == 25600.0


@pytest.mark.parametrize("bad", [2, 19, -1, 11.0, True, "11"])
def test_meters_per_pixel_rejects(bad):
    with pytest.raises(ValueError):
        meters_per_pixel(bad)


@pytest.mark.parametrize("s", range(3, 18))
def test_meters_per_pixel_halves(s):
    assert meters_per_pixel(s + 1) == meters_per_pixel(s) / 2


def test_project_center_and_north_pixel():
    vp = Viewport(GeoPoint(116.40, 39.90), 11, 224, 224)
    assert project(vp.center, vp) == PixelCoord(112.0, 112.0)
    px = project(GeoPoint(116.40, 39.90 + 100 / 111320), vp)
    assert px.x == pytest.approx(112.0, abs=1e-9)
    assert px.y == pytest.approx(111.0, abs=1e-9)


def test_unproject_corner():
    vp = Viewport(GeoPoint(116.40, 39.90), 11, 224, 224)
    assert unproject(PixelCoord(112, 112), vp) == vp.center
    corner = unproject(PixelCoord(0, 0), vp)
    east, north = LocalFrame(vp.center).to_m(corner)
    assert east == pytest.approx(-11_200, abs=1e-6)
    assert north == pytest.approx(11_200, abs=1e-6)


def test_haversine_pinned_pair():
    a, b = GeoPoint(116.519630, 39.774726), GeoPoint(116.52926, 39.7740)
    assert haversine(a, b) == pytest.approx(826.94, abs=1.0)
    assert haversine(a, b) == pytest.approx(spherical_distance(a, b), abs=1e-6)


def test_haversine_basics():
    p = GeoPoint(10, 20)
    assert haversine(p, p) == 0.0
    assert haversine(GeoPoint(5, 30), GeoPoint(5, 30.001)) == pytest.approx(111.19, abs=0.01)


def test_geopoint_validation():
    with pytest.raises(ValueError):
        GeoPoint(181, 0)
    with pytest.raises(ValueError):
        GeoPoint(0, -91)
    with pytest.raises(ValueError):
        PixelCoord(float("nan"), 0)


def test_viewport_validation_and_dict():
    with pytest.raises(ValueError):
        Viewport(GeoPoint(0, 0), 11, 0, 10)
    with pytest.raises(ValueError):
        Viewport(GeoPoint(0, 0), 25, 10, 10)
    vp = Viewport(GeoPoint(116.4, 39.9), 13, 96, 64)
    assert Viewport.from_dict(vp.to_dict()) == vp


lngs = st.floats(-170, 170)
lats = st.floats(-70, 70)


@settings(max_examples=200, deadline=None)
@given(lngs, lats, st.integers(3, 18), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_project_round_trip(lng, lat, scale, dlng, dlat):
    vp = Viewport(GeoPoint(lng, lat), scale, 224, 224)
    p = GeoPoint(lng + dlng, lat + dlat)
    q = unproject(project(p, vp), vp)
    assert abs(q.lng - p.lng) < 1e-9 and abs(q.lat - p.lat) < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.integers(9, 18))
def test_unproject_round_trip(x, y, scale):
    vp = Viewport(GeoPoint(116.4, 39.9), scale, 224, 224)
    back = project(unproject(PixelCoord(x, y), vp), vp)
    assert abs(back.x - x) < 1e-6 and abs(back.y - y) < 1e-6


points = st.builds(GeoPoint, st.floats(-180, 180), st.floats(-89, 89))


@settings(max_examples=300, deadline=None)
@given(points, points, points)
def test_haversine_symmetry_triangle(a, b, c):
    assert haversine(a, b) == pytest.approx(haversine(b, a), abs=1e-6)
    assert haversine(a, c) <= haversine(a, b) + haversine(b, c) + 1e-6


@settings(max_examples=100, deadline=None)
@given(points, points)
def test_haversine_matches_independent_formula(a, b):
    assert haversine(a, b) == pytest.approx(spherical_distance(a, b), abs=1e-3)
