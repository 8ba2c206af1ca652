import pytest

from sasnav import io as sio
from sasnav.acoustic import TimeGrid, Track
from sasnav.errors import FormatError, ShapeMismatch
from sasnav.geometry import PingGeometry, Pose, SystemConfig
from sasnav.scene import ReflectivityGrid


def _ping(rng, cfg):
    geo = PingGeometry.replacement(Pose(0.3, -0.01, 0.002), cfg)
    time = TimeGrid(0.0131, 1 / 60e3, 17)
    tracks = [Track(time, rng.standard_normal(17) + 1j * rng.standard_normal(17)) for _ in range(cfg.N)]
    return tracks, geo


def test_ping_round_trip(tmp_path, rng):
    cfg = SystemConfig(N=4, K=1)
    tracks, geo = _ping(rng, cfg)
    sio.save_ping(tmp_path / "p.sasp", tracks, geo)
    raw = (tmp_path / "p.sasp").read_bytes()
    assert raw[:4] == b"SASP"
    t2, g2 = sio.load_ping(tmp_path / "p.sasp")
    assert t2 == tracks
    assert g2 == geo


def test_ping_errors(tmp_path, rng):
    cfg = SystemConfig(N=4, K=1)
    tracks, geo = _ping(rng, cfg)
    with pytest.raises(ShapeMismatch):
        sio.save_ping(tmp_path / "x.sasp", tracks[:3], geo)
    sio.save_ping(tmp_path / "p.sasp", tracks, geo)
    raw = (tmp_path / "p.sasp").read_bytes()
    for bad in (b"XXXX" + raw[4:], raw[:-5], raw + b"\0"):
        (tmp_path / "b.sasp").write_bytes(bad)
        with pytest.raises(FormatError):
            sio.load_ping(tmp_path / "b.sasp")


def test_ping_record_wraps_tracks(rng):
    cfg = SystemConfig(N=4, K=1)
    tracks, geo = _ping(rng, cfg)
    rec = sio.ping_record(tracks, geo, cfg, {"index": 3})
    assert rec.data.shape == (4, 17)
    assert rec.geometry == geo and rec.meta["index"] == 3


def test_csv_round_trips(tmp_path):
    poses = [Pose(0, 0, 0), Pose(0.2, 0.001, 0.01), Pose(0.4, 0.002, -0.01)]
    diffs = [Pose(0.01, 0.02, 0.03), Pose(-0.01, 0.0, 0.001)]
    sio.write_trajectory_csv(tmp_path / "t.csv", poses, diffs, [4, 5, 6])
    idx, p2, d2 = sio.read_trajectory_csv(tmp_path / "t.csv")
    assert idx == [4, 5, 6] and p2 == poses and d2 == diffs

    trace = [("init", Pose(), float("nan")), ("zeta", Pose(0.1, 0, 0), 0.5), ("eta", Pose(0.1, 0.001, 0), 0.2)]
    sio.write_trace_csv(tmp_path / "tr.csv", trace)
    assert (tmp_path / "tr.csv").read_text().splitlines()[0] == "stage,eval,x,y,theta,value"
    back = sio.read_trace_csv(tmp_path / "tr.csv")
    assert [b[:2] for b in back[1:]] == [t[:2] for t in trace[1:]]

    sio.write_scan_csv(tmp_path / "s.csv", [0.0, 0.1], [0.3, 0.2], [0.5, 0.4])
    v, z, e = sio.read_scan_csv(tmp_path / "s.csv")
    assert list(v) == [0.0, 0.1] and list(z) == [0.3, 0.2] and list(e) == [0.5, 0.4]
    with pytest.raises(FormatError):
        sio.read_scan_csv(tmp_path / "t.csv")


def test_pgm_linear_and_db(tmp_path):
    g = ReflectivityGrid((0, 0), 1, 1, 3, 2, [1.0, 0.1, 0.01, 0.0, 0.5j, 1e-3])
    sio.write_pgm(tmp_path / "l.pgm", g, "linear")
    lev = sio.read_pgm(tmp_path / "l.pgm")
    assert lev.shape == (2, 3)
    # top row of the file is the far-range row of the grid
    assert lev[1, 0] == 65535 and lev[0, 1] == round(0.5 * 65535)
    sio.write_pgm(tmp_path / "d.pgm", g, "db")
    lev = sio.read_pgm(tmp_path / "d.pgm")
    assert lev[1, 0] == 65535
    assert lev[1, 1] == round(0.5 * 65535)       # -20 dB on a 40 dB scale
    assert lev[1, 2] == 0 and lev[0, 2] == 0      # at and below the floor
    with pytest.raises(ValueError):
        sio.magnitude_levels(g, "cubic")


def test_pgm_of_zero_image(tmp_path):
    g = ReflectivityGrid.zeros((0, 0), 1, 1, 4, 4)
    sio.write_pgm(tmp_path / "z.pgm", g, "db")
    assert not sio.read_pgm(tmp_path / "z.pgm").any()
