import math
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import halfplane_contains, random_convex_ring, shoelace
from streetcrop import geolink
from streetcrop.geolink import (
    FieldObservation, GeoError, GeoPoint, InputFormatError, Parcel, ParcelIndex, SurveyImage,
    attach_observation, bearing, centroid_ratio, dedup_stationary, link_survey, link_to_parcel,
    transpose_point,
)

coords = st.floats(-1e6, 1e6, allow_nan=False)
headings = st.floats(0, 360, allow_nan=False, exclude_max=True)


def unit_square(pid="A", x0=0.0, y0=0.0, s=1.0):
    return Parcel(pid, ((x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)))


def img(iid, x, y, t, side="right", campaign=1):
    return SurveyImage(iid, GeoPoint(x, y), t, side, campaign)


# ------------------------------------------------------------- bearings

@pytest.mark.parametrize("nxt,expected", [((0, 100), 0.0), ((100, 0), 90.0), ((-100, 0), 270.0), ((0, -5), 180.0)])
def test_bearing_axis_aligned(nxt, expected):
    assert bearing(GeoPoint(0, 0), GeoPoint(*nxt)) == expected


def test_bearing_rejects_zero_segment():
    with pytest.raises(GeoError):
        bearing(GeoPoint(1, 1), GeoPoint(1, 1))


@given(coords, coords, st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_bearing_range(x, y, dx, dy):
    if math.hypot(dx, dy) < 1e-6:
        return
    b = bearing(GeoPoint(x, y), GeoPoint(x + dx, y + dy))
    assert 0.0 <= b < 360.0


# ---------------------------------------------------------- transposition

@pytest.mark.parametrize("p,h,side,expected", [
    ((1000, 2000), 0, "right", (1030, 2000)),
    ((1000, 2000), 0, "left", (970, 2000)),
    ((0, 0), 90, "right", (0, -30)),
])
def test_transpose_axis_aligned(p, h, side, expected):
    q = transpose_point(GeoPoint(*p), h, side, 30)
    assert q.x == pytest.approx(expected[0], abs=1e-9)
    assert q.y == pytest.approx(expected[1], abs=1e-9)


@given(coords, coords, headings, st.sampled_from(["left", "right"]), st.floats(0.1, 500))
def test_transpose_preserves_distance(x, y, h, side, offset):
    p = GeoPoint(x, y)
    assert abs(p.dist(transpose_point(p, h, side, offset)) - offset) < 1e-9


@given(coords, coords, headings, st.floats(0.1, 500))
def test_transpose_opposite_sides_cancel(x, y, h, offset):
    p = GeoPoint(x, y)
    q = transpose_point(transpose_point(p, h, "right", offset), h, "left", offset)
    assert p.dist(q) < 1e-9


@given(headings)
def test_transpose_right_is_clockwise_rotation(h):
    # unit travel vector u = (sin h, cos h); right-hand normal is (u_y, -u_x)
    u = (math.sin(math.radians(h)), math.cos(math.radians(h)))
    q = transpose_point(GeoPoint(0, 0), h, "right", 1.0)
    assert q.x == pytest.approx(u[1], abs=1e-12)
    assert q.y == pytest.approx(-u[0], abs=1e-12)


def test_transpose_rejects_bad_side():
    with pytest.raises(GeoError):
        transpose_point(GeoPoint(0, 0), 0, "up")


# ------------------------------------------------------------- containment

def test_link_unit_square():
    idx = ParcelIndex([unit_square()])
    assert link_to_parcel(GeoPoint(0.5, 0.5), idx) == "A"
    assert link_to_parcel(GeoPoint(5, 5), idx) is None


def test_boundary_counts_as_inside():
    idx = ParcelIndex([unit_square()])
    assert idx.link(GeoPoint(1.0, 0.5)) == "A"
    assert idx.link(GeoPoint(0.0, 0.0)) == "A"


def test_overlap_resolves_to_smallest_area():
    big = unit_square("BIG", 0, 0, 10)
    small = unit_square("SMALL", 2, 2, 1)
    idx = ParcelIndex([big, small])
    assert idx.link(GeoPoint(2.5, 2.5)) == "SMALL"
    assert idx.link(GeoPoint(8, 8)) == "BIG"


def test_hole_excludes_points():
    p = Parcel("H", ((0, 0), (10, 0), (10, 10), (0, 10)), holes=(((4, 4), (6, 4), (6, 6), (4, 6)),))
    assert not p.contains(GeoPoint(5, 5))
    assert p.contains(GeoPoint(1, 1))
    assert p.area == pytest.approx(96)


def test_self_intersecting_ring_rejected():
    with pytest.raises(GeoError):
        Parcel("bow", ((0, 0), (1, 1), (1, 0), (0, 1)))


def test_link_matches_bruteforce_oracle():
    rng = np.random.default_rng(7)
    rings = [random_convex_ring(rng, *rng.uniform(0, 100, 2), rng.uniform(2, 15)) for _ in range(50)]
    parcels = [Parcel(f"P{k:02d}", r) for k, r in enumerate(rings)]
    idx = ParcelIndex(parcels)
    for x, y in rng.uniform(-10, 110, (1000, 2)):
        hits = [(shoelace(r), f"P{k:02d}") for k, r in enumerate(rings) if halfplane_contains(r, x, y)]
        expected = min(hits)[1] if hits else None
        assert idx.link(GeoPoint(x, y)) == expected


def test_parcel_area_and_centroid_match_shoelace(rng):
    for _ in range(50):
        ring = random_convex_ring(rng, 0, 0, 10)
        p = Parcel("X", ring)
        assert p.area == pytest.approx(shoelace(ring), rel=1e-12)
        assert p.contains(p.centroid)


# ------------------------------------------------------------------ dedup

def test_dedup_fully_stationary():
    track = [img(f"i{k}", 0, 0, k) for k in range(10)]
    assert [i.image_id for i in dedup_stationary(track)] == ["i0"]


def test_dedup_moving_keeps_all():
    track = [img(f"i{k}", 2.0 * k, 0, k) for k in range(10)]
    assert len(dedup_stationary(track)) == 10


def test_dedup_three_still_three_moving():
    xs = [0, 0, 0, 5, 10, 15]
    track = [img(f"i{k}", x, 0, k) for k, x in enumerate(xs)]
    assert [i.image_id for i in dedup_stationary(track)] == ["i0", "i3", "i4", "i5"]


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=40), st.floats(0.1, 5))
def test_dedup_idempotent(xs, eps):
    track = [img(f"i{k:03d}", x, 0, k) for k, x in enumerate(xs)]
    once = dedup_stationary(track, eps)
    assert dedup_stationary(once, eps) == once


# ------------------------------------------------------------ observations

T0 = datetime(2018, 6, 1, 9, 0, tzinfo=timezone.utc).timestamp()


def obs(oid, t, label="WWH7", pid=None):
    return FieldObservation(oid, GeoPoint(0, 0), t, label[:3], label[3:], 1)


def test_attach_single_same_day():
    a = attach_observation(img("x", 0, 0, T0), "A", [("A", obs("o1", T0 + 60))])
    assert str(a.label) == "WWH7" and a.obs_time_delta == 60


def test_attach_picks_nearest():
    cands = [("A", obs("o1", T0 + 3600, "WWH7")), ("A", obs("o2", T0 + 7200, "WWH8"))]
    assert attach_observation(img("x", 0, 0, T0), "A", cands).obs_id == "o1"


def test_attach_outside_window():
    assert attach_observation(img("x", 0, 0, T0), "A", [("A", obs("o1", T0 + 30 * 86400))]) is None


def test_attach_ignores_other_parcels():
    assert attach_observation(img("x", 0, 0, T0), "A", [("B", obs("o1", T0))]) is None


@given(st.lists(st.tuples(st.sampled_from("AB"), st.integers(-40000, 40000)), min_size=0, max_size=12))
def test_attach_is_exhaustive_argmin(rows):
    cands = [(pid, obs(f"o{k:02d}", T0 + dt)) for k, (pid, dt) in enumerate(rows)]
    image = img("x", 0, 0, T0)
    got = attach_observation(image, "A", cands)
    day = datetime.fromtimestamp(T0, tz=timezone.utc).date()
    ok = [(abs(o.timestamp - T0), o.obs_id) for pid, o in cands
          if pid == "A" and datetime.fromtimestamp(o.timestamp, tz=timezone.utc).date() == day]
    if not ok:
        assert got is None
    else:
        assert got.obs_id == min(ok)[1]


# --------------------------------------------------------- centroid ratio

def test_centroid_ratio_examples():
    assert centroid_ratio([100, 95, 50]) == [1.0, 0.95, 0.5]
    assert centroid_ratio([42.0]) == [1.0]
    assert centroid_ratio([3.0, 3.0, 3.0]) == [1.0, 1.0, 1.0]


def test_centroid_ratio_inverse_reading():
    assert centroid_ratio([100, 50], "max_over_distance") == [1.0, 2.0]


@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=50))
def test_centroid_ratio_max_is_one(ds):
    r = centroid_ratio(ds)
    assert max(r) == 1.0
    assert all(0 <= v <= 1 for v in r)


# ------------------------------------------------------------ full linking

def three_parcel_survey(with_obs=True):
    parcels = [
        Parcel("N1", ((0, 5), (100, 5), (100, 105), (0, 105))),
        Parcel("N2", ((100, 5), (200, 5), (200, 105), (100, 105))),
        Parcel("S1", ((0, -105), (100, -105), (100, -5), (0, -5))),
    ]
    images = []
    for t, x in enumerate(range(-60, 261, 10)):
        for side in ("left", "right"):
            images.append(img(f"{side[0]}{t:03d}", float(x), 0.0, T0 + t, side))
    observations = []
    if with_obs:
        observations = [
            FieldObservation("o1", GeoPoint(50, 0), T0 + 11, "WWH", "7", 1, side="left"),
            FieldObservation("o2", GeoPoint(150, 0), T0 + 21, "SBT", "39", 1, side="left"),
            FieldObservation("o3", GeoPoint(50, 0), T0 + 11, "POT", "6", 1, side="right"),
        ]
    return parcels, images, observations


def test_link_survey_three_parcels():
    parcels, images, observations = three_parcel_survey()
    res = link_survey(parcels, images, observations)
    by_id = {li.image_id: li for li in res.linked}
    # heading east: left looks north, right looks south
    for im in images:
        x = im.position.x
        if im.camera_side == "left" and 0 <= x <= 200:
            assert im.image_id in by_id
            assert by_id[im.image_id].label == ("WWH7" if x < 100 else "SBT39") or x == 100
        elif im.camera_side == "right" and 0 <= x <= 100:
            assert by_id[im.image_id].label == "POT6"
        else:
            assert im.image_id not in by_id
    assert res.n_unlinked == len(images) - len(res.linked)
    for pid in ("N1", "N2", "S1"):
        assert max(li.centroid_ratio for li in res.linked if li.parcel_id == pid) == 1.0


def test_link_survey_without_observations_keeps_unlabeled():
    parcels, images, _ = three_parcel_survey(with_obs=False)
    res = link_survey(parcels, images, [])
    assert res.linked and not any(li.labeled for li in res.linked)


def test_link_survey_is_order_independent():
    parcels, images, observations = three_parcel_survey()
    a = link_survey(parcels, images, observations)
    b = link_survey(parcels[::-1], images[::-1], observations[::-1])
    assert a.linked == b.linked


# -------------------------------------------------------------------- I/O

def test_roundtrip_files(tmp_path):
    parcels, images, observations = three_parcel_survey()
    geolink.write_parcels(tmp_path / "p.geojson", parcels)
    geolink.write_images(tmp_path / "i.csv", images)
    geolink.write_observations(tmp_path / "o.csv", observations)
    assert [p.parcel_id for p in geolink.read_parcels(tmp_path / "p.geojson")] == ["N1", "N2", "S1"]
    assert geolink.read_images(tmp_path / "i.csv") == images
    assert geolink.read_observations(tmp_path / "o.csv") == observations
    res = link_survey(parcels, images, observations)
    geolink.write_linked(tmp_path / "l.csv", res.linked)
    assert geolink.read_linked(tmp_path / "l.csv") == res.linked


def test_malformed_row_reports_row_number(tmp_path):
    p = tmp_path / "i.csv"
    _, images, _ = three_parcel_survey()
    geolink.write_images(p, images[:3])
    lines = p.read_text().splitlines()
    lines[3] = lines[3].replace(lines[3].split(",")[2], "oops")
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(InputFormatError, match="row 4"):
        geolink.read_images(p)
