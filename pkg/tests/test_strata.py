import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fleetsense.geo import BoundingBox, GeoPoint
from fleetsense.strata import (
    GridStratification,
    PolygonStratification,
    StrataError,
    assign_stratum,
    load_custom_strata,
    make_grid,
    read_strata,
    write_strata,
)

ONE_DEGREE_M = 6_371_000 * math.pi / 180
TWO_KM = BoundingBox(0, 0, 0.0179931, 0.0179931)
SF = BoundingBox(-122.515, 37.67, -122.35, 37.83)


def square(x0, y0, x1, y1, sid=None):
    props = {} if sid is None else {"stratum_id": sid}
    ring = [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
    return {"type": "Feature", "properties": props, "geometry": {"type": "Polygon", "coordinates": [ring]}}


def collection(*features):
    return {"type": "FeatureCollection", "features": list(features)}


@pytest.fixture
def grid2x2():
    return make_grid(TWO_KM, 1000)


def test_two_km_square_gives_2x2(grid2x2):
    step = 1000 / ONE_DEGREE_M
    # the extent is 2.0007 steps wide: two cells plus a sub-metre sliver folded into the last one
    assert 2 < TWO_KM.max_lon / step < 2.01
    assert (grid2x2.nrows, grid2x2.ncols) == (2, 2)
    assert len(grid2x2) == 4
    assert [s.stratum_id for s in grid2x2.strata] == [0, 1, 2, 3]


def test_lookup_examples(grid2x2):
    step = 1000 / ONE_DEGREE_M
    assert assign_stratum(grid2x2, GeoPoint(step / 2, step / 2)) == 0
    assert grid2x2.assign(GeoPoint(step / 2, 1.5 * step)) == 1  # row-major: east neighbour
    assert grid2x2.assign(GeoPoint(1.5 * step, step / 2)) == 2
    assert grid2x2.assign(GeoPoint(0.5, 0.5)) is None
    assert grid2x2.assign(GeoPoint(-1e-9, 0.001)) is None


def test_shared_edge_goes_to_smallest_id(grid2x2):
    edge = grid2x2.lon_edges[1]
    assert grid2x2.assign(GeoPoint(0.004, edge)) == 0
    corner = GeoPoint(grid2x2.lat_edges[1], grid2x2.lon_edges[1])
    assert grid2x2.assign(corner) == 0
    assert grid2x2.assign_many([corner.lat], [corner.lon]).tolist() == [0]


def test_extent_smaller_than_cell():
    e = BoundingBox(10, 10, 10.0001, 10.0001)
    g = make_grid(e, 1000)
    assert len(g) == 1
    assert g.cell_box(0) == e


def test_sf_scale_grid_count():
    g = make_grid(SF, 100)
    width = (SF.max_lon - SF.min_lon) * ONE_DEGREE_M * math.cos(math.radians(37.75))
    height = (SF.max_lat - SF.min_lat) * ONE_DEGREE_M
    area_cells = width * height / 100 ** 2
    # clipped last row/column add at most one cell per row and per column
    assert area_cells <= len(g) <= area_cells + width / 100 + height / 100 + 1
    assert 24_000 < len(g) < 27_000


@pytest.mark.parametrize("extent,size", [
    (TWO_KM, 0), (TWO_KM, -5), (BoundingBox(0, 0, 0, 1), 100), (BoundingBox(0, 89.5, 1, 90), 100),
])
def test_make_grid_errors(extent, size):
    with pytest.raises(StrataError):
        make_grid(extent, size)


def test_grid_partition_property():
    g = make_grid(BoundingBox(-0.05, 51.45, 0.05, 51.55), 250)
    rng = np.random.default_rng(11)
    lat = rng.uniform(51.45, 51.55, 10_000)
    lon = rng.uniform(-0.05, 0.05, 10_000)
    ids = g.assign_many(lat, lon)
    boxes = [g.cell_box(i) for i in range(len(g))]
    for a, o, sid in zip(lat[:2000], lon[:2000], ids[:2000]):
        p = GeoPoint(a, o)
        containing = [i for i, b in enumerate(boxes) if b.contains(p)]
        assert containing and containing[0] == sid
        assert g.assign(p) == sid
    assert set(ids.tolist()) <= set(range(len(g)))
    assert (ids >= 0).all()


def test_grid_cells_tile_extent():
    g = make_grid(BoundingBox(0, 0, 0.05, 0.03), 700)
    area = sum((b.max_lon - b.min_lon) * (b.max_lat - b.min_lat) for b in map(g.cell_box, range(len(g))))
    assert area == pytest.approx(0.05 * 0.03, rel=1e-12)


@given(st.floats(0, 0.0179931), st.floats(0, 0.0179931))
def test_assign_many_matches_assign(lat, lon):
    g = make_grid(TWO_KM, 1000)
    assert g.assign_many([lat], [lon])[0] == g.assign(GeoPoint(lat, lon))


def test_custom_single_square():
    s = load_custom_strata(collection(square(0, 0, 1, 1)))
    assert len(s) == 1
    assert s.extent.as_list() == [0, 0, 1, 1]
    assert s.assign(GeoPoint(0.5, 0.5)) == 0
    assert s.assign(GeoPoint(1.5, 0.5)) is None


def test_custom_ids_pass_through():
    s = load_custom_strata(collection(square(0, 0, 1, 1, 7), square(2, 0, 3, 1, 9)))
    assert [x.stratum_id for x in s.strata] == [7, 9]
    assert s.assign(GeoPoint(0.5, 2.5)) == 9


def test_custom_shared_boundary_smallest_id():
    s = load_custom_strata(collection(square(1, 0, 2, 1, 5), square(0, 0, 1, 1, 3)))
    assert s.assign(GeoPoint(0.5, 1.0)) == 3
    assert s.assign_many([0.5], [1.0]).tolist() == [3]


def test_concave_polygon_ray_casting():
    # U shape: the notch (1..2, 1..3) is outside
    ring = [[0, 0], [3, 0], [3, 3], [2, 3], [2, 1], [1, 1], [1, 3], [0, 3], [0, 0]]
    feat = {"type": "Feature", "properties": {"stratum_id": 1}, "geometry": {"type": "Polygon", "coordinates": [ring]}}
    s = load_custom_strata(collection(feat))
    assert s.assign(GeoPoint(2, 0.5)) == 1
    assert s.assign(GeoPoint(2, 1.5)) is None
    assert s.assign(GeoPoint(2, 2.5)) == 1
    assert s.assign(GeoPoint(1, 1.5)) == 1  # on the notch wall
    rng = np.random.default_rng(2)
    lat, lon = rng.uniform(-0.5, 3.5, 3000), rng.uniform(-0.5, 3.5, 3000)
    vec = s.assign_many(lat, lon)
    assert [-1 if v is None else v for v in (s.assign(GeoPoint(a, o)) for a, o in zip(lat, lon))] == vec.tolist()


@pytest.mark.parametrize("doc", [
    collection({"type": "Feature", "properties": {}, "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 1], [0, 0]]]}}),
    collection({"type": "Feature", "properties": {}, "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 1], [1, 0], [0, 1], [0, 0]]]}}),
    collection(square(0, 0, 1, 1, 4), square(2, 2, 3, 3, 4)),
    collection({"type": "Feature", "properties": {}, "geometry": {"type": "Point", "coordinates": [0, 0]}}),
    collection(square(0, 0, 1, 1, -1)),
    {"type": "Feature"},
    "not json",
])
def test_custom_validation_errors(doc):
    with pytest.raises(StrataError):
        load_custom_strata(doc)


def test_grid_file_round_trip(tmp_path, grid2x2):
    path = tmp_path / "grid.geojson"
    write_strata(grid2x2, path)
    doc = json.loads(path.read_text())
    assert len(doc["features"]) == 4
    assert [f["properties"]["stratum_id"] for f in doc["features"]] == [0, 1, 2, 3]
    again = read_strata(path)
    assert isinstance(again, GridStratification) and len(again) == 4
    # the exported polygons describe the same cells
    poly = load_custom_strata({k: v for k, v in doc.items() if k != "grid"})
    rng = np.random.default_rng(5)
    lat, lon = rng.uniform(0, 0.018, 500), rng.uniform(0, 0.018, 500)
    assert (poly.assign_many(lat, lon) == grid2x2.assign_many(lat, lon)).all()


def test_custom_file_round_trip(tmp_path):
    s = load_custom_strata(collection(square(0, 0, 1, 1, 7), square(2, 0, 3, 1, 9)))
    path = tmp_path / "c.geojson"
    write_strata(s, path)
    again = read_strata(path)
    assert isinstance(again, PolygonStratification)
    assert [x.stratum_id for x in again.strata] == [7, 9]
