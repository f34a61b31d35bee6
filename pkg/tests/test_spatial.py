import json
import math

import numpy as np
import pytest

from citypulse.errors import DataError
from citypulse.landuse import LandUseCategory
from citypulse.spatial import (CityCentre, Zone, build_zone_index, distance_to_centre,
                               haversine_m, load_zones_geojson, locate_point,
                               point_in_rings, polygon_centroid)


def square(zone_id, x0, y0, size=1.0, **kwargs):
    ring = ((x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size), (x0, y0))
    defaults = dict(area_ha=1.0, built_residential_m2=0.0, built_total_m2=0.0)
    defaults.update(kwargs)
    return Zone(zone_id, (ring,), **defaults)


def brute_force_locate(zones, lon, lat):
    """Independent oracle: numpy even-odd test over every zone, smallest id wins."""
    hits = []
    for zone in sorted(zones, key=lambda z: z.zone_id):
        inside = False
        for ring in zone.rings:
            xs = np.array([p[0] for p in ring])
            ys = np.array([p[1] for p in ring])
            x1, y1 = xs[:-1], ys[:-1]
            x2, y2 = xs[1:], ys[1:]
            crosses = (y1 > lat) != (y2 > lat)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = (x2 - x1) * (lat - y1) / (y2 - y1) + x1
            inside ^= bool(np.sum(crosses & (lon < xint)) % 2)
        if inside:
            hits.append(zone.zone_id)
    return hits[0] if hits else None


def test_single_zone_locate():
    index = build_zone_index([square("z1", 0, 0)])
    assert locate_point(index, 0.5, 0.5) == "z1"
    assert locate_point(index, 2.0, 2.0) is None


def test_index_cardinality_584_zones():
    zones = [square(f"z{i:04d}", i % 25, i // 25) for i in range(584)]
    index = build_zone_index(zones)
    assert len(index) == 584


def test_shared_edge_claimed_by_exactly_one_zone():
    zones = [square("left", 0, 0), square("right", 1, 0)]
    claims = []
    for _ in range(2):  # deterministic across rebuilt indexes
        index = build_zone_index(zones)
        claims.append([locate_point(index, 1.0, y) for y in (0.25, 0.5, 0.75)])
    assert claims[0] == claims[1]
    assert all(c in ("left", "right") for c in claims[0])
    assert len(set(claims[0])) == 1


def test_shared_corner_claimed_by_exactly_one_zone():
    zones = [square("a", 0, 0), square("b", 1, 0), square("c", 0, 1), square("d", 1, 1)]
    index = build_zone_index(zones)
    owner = locate_point(index, 1.0, 1.0)
    assert owner is not None
    assert owner == brute_force_locate(zones, 1.0, 1.0)


def _random_tessellation(rng, nx, ny):
    """Grid tessellation with random cell widths/heights."""
    xs = np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 2.0, nx))])
    ys = np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 2.0, ny))])
    zones = []
    for j in range(ny):
        for i in range(nx):
            ring = ((xs[i], ys[j]), (xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1]),
                    (xs[i], ys[j + 1]), (xs[i], ys[j]))
            zones.append(Zone(f"z{j * nx + i:03d}", (ring,), area_ha=1.0))
    return zones, xs, ys


def test_locate_matches_brute_force_on_random_tessellation():
    rng = np.random.default_rng(17)
    zones, xs, ys = _random_tessellation(rng, 10, 5)
    index = build_zone_index(zones)
    pts = np.column_stack([rng.uniform(-1, xs[-1] + 1, 1000),
                           rng.uniform(-1, ys[-1] + 1, 1000)])
    for lon, lat in pts:
        assert locate_point(index, lon, lat) == brute_force_locate(zones, lon, lat)


def test_no_double_counting_in_tessellation():
    rng = np.random.default_rng(3)
    zones, xs, ys = _random_tessellation(rng, 6, 6)
    index = build_zone_index(zones)
    pts = np.column_stack([rng.uniform(0, xs[-1], 500), rng.uniform(0, ys[-1], 500)])
    assigned = sum(1 for lon, lat in pts if locate_point(index, lon, lat) is not None)
    unassigned = len(pts) - assigned
    assert assigned + unassigned == 500


def test_overlapping_zones_warn_and_pick_smallest_id():
    zones = [square("zzz", 0, 0), square("aaa", 0, 0)]
    index = build_zone_index(zones)
    assert locate_point(index, 0.5, 0.5) == "aaa"
    assert index.overlap_warnings == 1


def test_duplicate_zone_id_fatal():
    with pytest.raises(DataError, match="duplicate zone_id"):
        build_zone_index([square("z", 0, 0), square("z", 1, 0)])


def test_degenerate_polygon_fatal_names_zone():
    bad = Zone("flat", (((0, 0), (1, 1), (0, 0)),), area_ha=1.0)
    with pytest.raises(DataError, match="flat"):
        build_zone_index([bad])


def test_unclosed_ring_fatal():
    bad = Zone("open", (((0, 0), (1, 0), (1, 1), (0, 1)),), area_ha=1.0)
    with pytest.raises(DataError, match="not closed"):
        build_zone_index([bad])


def test_point_in_hole_is_outside():
    outer = ((0, 0), (4, 0), (4, 4), (0, 4), (0, 0))
    hole = ((1, 1), (3, 1), (3, 3), (1, 3), (1, 1))
    assert point_in_rings((outer, hole), 0.5, 0.5)
    assert not point_in_rings((outer, hole), 2.0, 2.0)


def test_centroid_of_square():
    lon, lat = polygon_centroid(square("z", 2, 3).rings)
    assert lon == pytest.approx(2.5)
    assert lat == pytest.approx(3.5)


def test_centroid_with_hole_shifts_away():
    outer = ((0, 0), (4, 0), (4, 4), (0, 4), (0, 0))
    hole = ((2, 1), (4, 1), (4, 3), (2, 3), (2, 1))  # bite out of the right side
    lon, lat = polygon_centroid((outer, hole))
    assert lon < 2.0
    assert lat == pytest.approx(2.0)


def test_haversine_zero_iff_coincident():
    assert haversine_m(-3.7, 40.4, -3.7, 40.4) == 0.0
    assert haversine_m(-3.7, 40.4, -3.7, 40.5) > 0


def test_haversine_hand_computed_meridian_step():
    # 0.01 degrees of latitude is about 1112 m regardless of longitude
    assert haversine_m(-3.70, 40.00, -3.70, 40.01) == pytest.approx(1112.0, abs=1.0)


def test_haversine_symmetry():
    a, b = (-3.70, 40.42), (-3.58, 40.50)
    assert haversine_m(*a, *b) == pytest.approx(haversine_m(*b, *a))


def test_distance_to_centre_zero_at_centroid():
    zone = square("z", 0, 0)
    assert distance_to_centre(zone, CityCentre(0.5, 0.5)) == 0.0


def test_distance_to_centre_ordering():
    near = square("near", 0, 0, 0.01)
    far = square("far", 0.1, 0, 0.01)
    centre = CityCentre(0.005, 0.005)
    assert distance_to_centre(near, centre) < distance_to_centre(far, centre)


def _feature(zone_id, x0=0.0, y0=0.0, **props):
    base = {"zone_id": zone_id, "area_ha": 2.5, "built_residential_m2": 800.0,
            "built_total_m2": 1000.0, "lu_retail_m2": 200.0, "lu_residential_m2": 800.0}
    base.update(props)
    return {
        "type": "Feature",
        "properties": base,
        "geometry": {"type": "Polygon",
                     "coordinates": [[[x0, y0], [x0 + 1, y0], [x0 + 1, y0 + 1],
                                      [x0, y0 + 1], [x0, y0]]]},
    }


def test_load_zones_geojson(tmp_path):
    doc = {"type": "FeatureCollection", "features": [_feature("z1"), _feature("z2", 1.0)]}
    path = tmp_path / "zones.geojson"
    path.write_text(json.dumps(doc))
    zones = load_zones_geojson(path)
    assert [z.zone_id for z in zones] == ["z1", "z2"]
    assert zones[0].area_ha == 2.5
    assert zones[0].landuse_m2[LandUseCategory.RETAIL] == 200.0
    assert zones[0].built_residential_m2 == 800.0


def test_load_zones_rejects_bad_documents(tmp_path):
    path = tmp_path / "zones.geojson"
    path.write_text(json.dumps({"type": "Feature"}))
    with pytest.raises(DataError, match="FeatureCollection"):
        load_zones_geojson(path)
    feature = _feature("z1")
    feature["geometry"]["type"] = "MultiPolygon"
    path.write_text(json.dumps({"type": "FeatureCollection", "features": [feature]}))
    with pytest.raises(DataError, match="geometry type"):
        load_zones_geojson(path)
    with pytest.raises(DataError, match="cannot read"):
        load_zones_geojson(tmp_path / "missing.geojson")


def test_zone_validate_residential_exceeds_total():
    zone = square("z", 0, 0, built_residential_m2=2000.0, built_total_m2=1000.0)
    with pytest.raises(DataError, match="exceeds"):
        zone.validate()


def test_haversine_matches_spherical_law_small_angles():
    # cross-check against the spherical law of cosines on a generic pair
    lon1, lat1, lon2, lat2 = -3.70, 40.42, -3.60, 40.50
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    angle = math.acos(math.sin(phi1) * math.sin(phi2)
                      + math.cos(phi1) * math.cos(phi2) * math.cos(dl))
    assert haversine_m(lon1, lat1, lon2, lat2) == pytest.approx(6_371_000.0 * angle, rel=1e-9)
