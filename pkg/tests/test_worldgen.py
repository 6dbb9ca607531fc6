import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geodecoder.geo import GeoPoint, LocalFrame, haversine
from geodecoder.worldgen import (
    Address,
    DistrictTree,
    GenerationError,
    MapWorld,
    Poi,
    Road,
    WorldConfig,
    generate_world,
    is_simple_ring,
    locate,
    nearest_road,
    parse_address,
    point_in_ring,
    polygon_area,
    sample_poi_by_popularity,
    world_from_json,
    world_to_json,
)

CENTER = GeoPoint(116.40, 39.90)


def hand_world(roads=(), pois=()):
    return MapWorld(list(roads), [], list(pois), [], [], DistrictTree("Test City", ()), 0)


def two_parallel_roads():
    f = LocalFrame(CENTER)
    south = Road("r0", "South Road", "minor", (f.to_geo(-1000, -200), f.to_geo(1000, -200)))
    north = Road("r1", "North Road", "minor", (f.to_geo(-1000, 200), f.to_geo(1000, 200)))
    return hand_world([south, north])


def brute_force_road_distance(world, p, step_m=1.0):
    """Distance to every road densely sampled at `step_m` along each segment."""
    x, y = world.to_m(p)
    best = (math.inf, None)
    for road in world.roads:
        pts = world.ring_m(road.polyline)
        for a, b in zip(pts[:-1], pts[1:]):
            n = max(1, int(math.ceil(np.hypot(*(b - a)) / step_m)))
            t = np.linspace(0, 1, n + 1)[:, None]
            s = a + t * (b - a)
            d = float(np.min(np.hypot(s[:, 0] - x, s[:, 1] - y)))
            if d < best[0]:
                best = (d, road.id)
    return best


def ray_cast(x, y, ring):
    """Even-odd test written out edge by edge."""
    inside = False
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


def test_determinism():
    a = world_to_json(generate_world(7))
    b = world_to_json(generate_world(7))
    assert a == b
    assert a != world_to_json(generate_world(8))


def test_json_round_trip(world):
    text = world_to_json(world)
    assert json.loads(text)["world_format"] == 1
    assert world_to_json(world_from_json(text)) == text


def test_default_sizes(world):
    assert 30 <= len(world.roads) <= 50
    assert len(world.aois) == 150
    assert len(world.pois) == 1200
    assert len(world.water) == 2 and len(world.green) == 6


def test_road_invariants(world):
    names = [r.name for r in world.roads]
    assert len(set(names)) == len(names)
    for r in world.roads:
        assert len(r.polyline) >= 2 and r.road_class in ("major", "minor")
        assert all(p != q for p, q in zip(r.polyline, r.polyline[1:]))


def test_aoi_rings_simple_and_ccw(world):
    for a in world.aois:
        ring = world.ring_m(a.polygon)
        assert len(ring) >= 3
        assert polygon_area(ring) > 0
        assert is_simple_ring(ring)


def test_poi_placement_constraints(world):
    locs = np.array([world.to_m(p.location) for p in world.pois])
    _, dist = world.nearest_road_m(locs)
    assert dist.min() > 15.0
    assert not any(world.in_water(p.location) for p in world.pois)
    ranks = sorted(p.popularity_rank for p in world.pois)
    assert ranks == list(range(1, len(world.pois) + 1))


def test_every_address_round_trips_within_50m(world):
    for p in world.pois:
        assert haversine(world.resolve_address(p.address), p.location) <= 50.0, p.address


def test_address_grammar():
    a = Address("Guangfeng City", "Dali District", "Haiyong Lane", 881, "Yanan Park", 9)
    assert str(a) == "Guangfeng City, Dali District, Haiyong Lane No.881, Yanan Park, Unit 9"
    assert parse_address(str(a)) == a
    short = Address("X City", "Y District", "Z Road", 3)
    assert parse_address(str(short)) == short
    with pytest.raises(ValueError):
        parse_address("Z Road 3, Y District")


def test_parent_links_contain_child(world):
    for p in world.pois:
        if p.parent_id is None:
            continue
        parent = world.entity(p.parent_id)
        assert p.parent_id in world.containing_aois(p.location) or isinstance(parent, Poi)
        if not isinstance(parent, Poi):
            assert ray_cast(*world.to_m(p.location), world.ring_m(parent.polygon))
    for a in world.aois:
        if a.parent_id is None:
            continue
        outer = world.ring_m(world.aoi_by_id[a.parent_id].polygon)
        assert all(ray_cast(x, y, outer) for x, y in world.ring_m(a.polygon))


def test_prefix_named_children(world):
    pairs = 0
    for e in list(world.pois) + list(world.aois):
        if e.parent_id is not None and e.name.startswith(world.entity(e.parent_id).name + " "):
            pairs += 1
    assert pairs >= world.config.parent_fraction * len(world.pois) / 2


def test_infeasible_config_names_constraint():
    with pytest.raises(GenerationError, match="n_aois"):
        generate_world(0, WorldConfig(extent_m=2000, road_spacing_m=(400, 800), n_aois=500))
    with pytest.raises(GenerationError, match="road_spacing_m"):
        generate_world(0, WorldConfig(road_spacing_m=(800, 400)))


def test_nearest_road_on_vertex(world):
    r = world.roads[3]
    _, d = nearest_road(world, r.polyline[1])
    assert d < 1e-6
    lone = Road("r0", "Lone Road", "minor", r.polyline)
    assert nearest_road(hand_world([lone]), r.polyline[-1]) == ("r0", pytest.approx(0.0, abs=1e-6))


def test_nearest_road_between_parallel_roads():
    w = two_parallel_roads()
    rid, d = nearest_road(w, CENTER)
    assert d == pytest.approx(200.0, abs=0.5)
    assert rid == "r0"  # tie goes to the lowest id
    bf, _ = brute_force_road_distance(w, CENTER)
    assert bf == pytest.approx(200.0, abs=0.5)


def test_nearest_road_empty():
    with pytest.raises(ValueError):
        nearest_road(hand_world(), CENTER)


def test_nearest_road_matches_brute_force(world):
    rng = np.random.default_rng(5)
    f = world.frame
    for _ in range(100):
        x, y = rng.uniform(-5500, 5500, size=2)
        p = f.to_geo(x, y)
        _, d = nearest_road(world, p)
        bf, _ = brute_force_road_distance(world, p)
        assert abs(d - bf) <= 0.5


def test_popularity_single_poi(rng):
    poi = Poi("p0", "Only", "", CENTER, "shop", 1)
    w = hand_world(pois=[poi])
    assert {sample_poi_by_popularity(w, rng) for _ in range(50)} == {"p0"}


def test_popularity_two_ranks():
    pois = [Poi(f"p{i}", f"n{i}", "", CENTER, "shop", i + 1) for i in range(2)]
    w = hand_world(pois=pois)
    rng = np.random.default_rng(0)
    draws = [sample_poi_by_popularity(w, rng) for _ in range(100_000)]
    ratio = draws.count("p0") / draws.count("p1")
    assert ratio == pytest.approx(2.0, rel=0.05)


def test_popularity_rank_one_of_hundred():
    pois = [Poi(f"p{i}", f"n{i}", "", CENTER, "shop", i + 1) for i in range(100)]
    w = hand_world(pois=pois)
    rng = np.random.default_rng(1)
    h100 = sum(1.0 / k for k in range(1, 101))
    assert h100 == pytest.approx(5.187, abs=1e-3)
    draws = [sample_poi_by_popularity(w, rng) for _ in range(100_000)]
    assert draws.count("p0") / len(draws) == pytest.approx(1 / h100, abs=0.01)


def test_locate_aoi_centroid(world):
    convex = [a for a in world.aois if a.parent_id is None and len(a.polygon) == 4][:10]
    assert convex
    for a in convex:
        ctx = locate(world, world.aoi_centroid(a))
        assert a.id in world.containing_aois(world.aoi_centroid(a))
        assert ctx.aoi_id is not None


def test_locate_water_flag(world):
    ring = world.ring_m(world.water[0])
    cx, cy = ring.mean(axis=0)
    ctx = locate(world, world.frame.to_geo(cx, cy))
    assert ctx.water is True
    assert ctx.district_path[0] == world.district_tree.city


def test_locate_outside_extent(world):
    with pytest.raises(ValueError):
        locate(world, world.frame.to_geo(7000, 0))


def test_containers_match_ray_cast(world):
    rng = np.random.default_rng(11)
    rings = [world.ring_m(a.polygon) for a in world.aois]
    for _ in range(200):
        x, y = rng.uniform(-5900, 5900, size=2)
        got = world.containing_aois(world.frame.to_geo(x, y))
        want = [a.id for a, r in zip(world.aois, rings) if ray_cast(*world.to_m(world.frame.to_geo(x, y)), r)]
        assert got == want


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_point_in_ring_unit_square(x, y):
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    assert point_in_ring(x, y, sq) == ray_cast(x, y, sq)
