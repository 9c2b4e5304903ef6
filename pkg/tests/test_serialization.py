"""Round-trips of the on-disk artifact formats."""

import numpy as np
import pytest

from l2flow import TorusGrid, random_band_limited_metric, flat_metric
from l2flow import serialization as ser


def test_field_roundtrip(tmp_path):
    grid = TorusGrid(8, periods=(1.0, 2.0, 1.0, 1.5))
    rng = np.random.default_rng(0)
    data = rng.standard_normal(grid.shape + (4, 4))
    p = tmp_path / "f.bin"
    ser.write_field(p, grid, "probe", data)
    grid2, name, back = ser.read_field(p)
    assert name == "probe"
    assert grid2.n == 8
    assert grid2.periods == grid.periods
    assert np.array_equal(back, data)


def test_scalar_field_roundtrip(tmp_path):
    grid = TorusGrid(8)
    data = np.arange(grid.num_points, dtype=float).reshape(grid.shape)
    p = tmp_path / "s.bin"
    ser.write_field(p, grid, "scalar", data)
    _, _, back = ser.read_field(p)
    assert np.array_equal(back, data)


def test_field_shape_mismatch(tmp_path):
    grid = TorusGrid(8)
    with pytest.raises(ValueError):
        ser.write_field(tmp_path / "x.bin", grid, "bad", np.zeros((3, 3)))


def test_metric_roundtrip(tmp_path):
    grid = TorusGrid(8)
    m = random_band_limited_metric(grid, 0.05, 1, seed=4)
    p = tmp_path / "m.bin"
    ser.write_metric(p, m)
    back = ser.read_metric(p)
    assert np.array_equal(back.g, m.g)


def test_magic_check(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"not a snapshot")
    with pytest.raises(ValueError, match="snapshot"):
        ser.read_field(p)


def test_history_roundtrip_and_determinism(tmp_path):
    rows = [
        {c: (k if c == "step" else 0.1 * k + i * 1e-17)
         for i, c in enumerate(ser.HISTORY_COLUMNS)}
        for k in range(5)
    ]
    p1 = tmp_path / "h1.csv"
    p2 = tmp_path / "h2.csv"
    ser.write_history(p1, rows)
    ser.write_history(p2, rows)
    assert p1.read_bytes() == p2.read_bytes()
    back = ser.read_history(p1)
    for a, b in zip(rows, back):
        for c in ser.HISTORY_COLUMNS:
            assert a[c] == b[c]   # repr round-trips float64 exactly
    header = p1.read_text().splitlines()[0]
    assert header == ",".join(ser.HISTORY_COLUMNS)


def test_distance_matrix_csv(tmp_path):
    pts = np.array([[0.0, 0, 0, 0], [0.5, 0, 0, 0]])
    d = np.array([[0.0, 0.5], [0.5, 0.0]])
    p = tmp_path / "d.csv"
    ser.write_distance_matrix(p, pts, d)
    text = p.read_text()
    assert "0.5" in text and "x0" in text


def test_curve_and_tube_dicts():
    from l2flow import geometry as geo
    grid = TorusGrid(8)
    m = flat_metric(grid)
    c = geo.chord_curve(grid, np.zeros(4), np.array([0.25, 0, 0, 0]), m=9)
    d = ser.curve_to_dict(c, m)
    assert d["num_samples"] == 9
    assert d["length"] == pytest.approx(0.25)
