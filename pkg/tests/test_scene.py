import numpy as np
import pytest

from sasnav.errors import EmptyExtent, FormatError, PhantomOutOfBounds, ShapeMismatch, ValidationError
from sasnav.geometry import SystemConfig
from sasnav.scene import (PhantomSpec, ReflectivityGrid, RippleSpec, export_grid_csv, load_grid, make_grid,
                          save_grid, synth_scene)


def test_make_grid_uses_range_resolution():
    cfg = SystemConfig()
    g = make_grid(cfg, (1.0, 0.5), (0.0, 10.0))
    assert g.dx == pytest.approx(0.025) and g.dy == pytest.approx(0.025)
    assert (g.nx, g.ny) == (40, 20)
    assert g.center == pytest.approx((0.0, 10.0))


def test_make_grid_rejects_empty_extent():
    with pytest.raises(EmptyExtent):
        make_grid(SystemConfig(), (0.0, 1.0), (0, 10))


def test_grid_validation():
    with pytest.raises(ShapeMismatch):
        ReflectivityGrid((0, 0), 1, 1, 2, 2, np.zeros(3))
    with pytest.raises(ValidationError):
        ReflectivityGrid((0, 0), 0, 1, 2, 2, np.zeros(4))


def test_points_are_row_major():
    g = ReflectivityGrid.zeros((1.0, 2.0), 0.5, 0.25, 3, 2)
    pts = g.points()
    assert pts[1] == pytest.approx([1.5, 2.0])
    assert pts[3] == pytest.approx([1.0, 2.25])


def test_synth_scene_is_deterministic():
    g = make_grid(SystemConfig(), (1.0, 1.0), (0, 10))
    a = synth_scene(g, RippleSpec(), PhantomSpec(center=(0, 10)), 7)
    b = synth_scene(g, RippleSpec(), PhantomSpec(center=(0, 10)), 7)
    c = synth_scene(g, RippleSpec(), PhantomSpec(center=(0, 10)), 8)
    assert a == b
    assert not np.array_equal(a.values, c.values)


def test_phantom_is_twenty_db_brighter():
    g = make_grid(SystemConfig(), (3.0, 3.0), (0, 10))
    s = synth_scene(g, RippleSpec(depth=0.0), PhantomSpec(center=(0, 10), diameter=1.0), 3)
    pts = g.points()
    inside = np.hypot(pts[:, 0], pts[:, 1] - 10) <= 0.5
    mag = np.abs(s.flat())
    ratio_db = 20 * np.log10(mag[inside].mean() / mag[~inside].mean())
    assert ratio_db == pytest.approx(20.0, abs=0.5)
    # uniformly random phase: the mean phasor nearly cancels
    assert abs(np.exp(1j * np.angle(s.flat()[inside])).mean()) < 0.1


def test_phantom_out_of_bounds():
    g = make_grid(SystemConfig(), (1.0, 1.0), (0, 10))
    with pytest.raises(PhantomOutOfBounds):
        synth_scene(g, RippleSpec(), PhantomSpec(center=(0.4, 10), diameter=0.4), 1)


def test_grid_file_round_trip(tmp_path):
    g = synth_scene(make_grid(SystemConfig(), (0.5, 0.3), (0.1, 10)), RippleSpec(), None, 2)
    save_grid(tmp_path / "g.sasg", g)
    raw = (tmp_path / "g.sasg").read_bytes()
    assert raw[:4] == b"SASG"
    assert len(raw) == 4 + 12 + 32 + 16 * g.size
    assert load_grid(tmp_path / "g.sasg") == g


def test_grid_file_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"XXXX" + bytes(60))
    with pytest.raises(FormatError):
        load_grid(tmp_path / "bad")
    g = ReflectivityGrid.zeros((0, 0), 1, 1, 2, 2)
    save_grid(tmp_path / "g.sasg", g)
    (tmp_path / "t.sasg").write_bytes((tmp_path / "g.sasg").read_bytes()[:-8])
    with pytest.raises(FormatError):
        load_grid(tmp_path / "t.sasg")


def test_grid_csv(tmp_path):
    g = ReflectivityGrid((0, 0), 1, 1, 2, 2, [1, 2j, 3, 4 - 1j])
    export_grid_csv(tmp_path / "g.csv", g)
    rows = (tmp_path / "g.csv").read_text().splitlines()
    assert rows[0] == "x,y,re,im"
    assert len(rows) == 5
    assert [float(v) for v in rows[4].split(",")] == [1.0, 1.0, 4.0, -1.0]
