"""On-disk formats: ping files, trajectory/trace/scan CSVs and PGM images."""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .acoustic import TimeGrid, Track
from .errors import FormatError, ShapeMismatch
from .geometry import PingGeometry, Pose, SystemConfig
from .imaging import PingOperator, PingRecord
from .scene import ReflectivityGrid

PING_MAGIC = b"SASP"
PING_VERSION = 1

_U32 = struct.Struct("<I")
_TRACK_HEAD = struct.Struct("<ddI")


def save_ping(path, tracks, geometry: PingGeometry) -> None:
    """Write the tracks of one ping and its geometry.

    Layout (little endian): magic, u32 version, u32 track count, then per
    track ``f64 t0, f64 dt, u32 m`` and ``m`` interleaved ``f64`` re/im
    pairs, then the geometry as ``f64`` triplets: array midpoint,
    transmitter and one per receiver.
    """
    tracks = list(tracks)
    if len(tracks) != geometry.N:
        raise ShapeMismatch(f"{len(tracks)} tracks for a {geometry.N}-receiver geometry")
    parts = [PING_MAGIC, _U32.pack(PING_VERSION), _U32.pack(len(tracks))]
    for t in tracks:
        parts.append(_TRACK_HEAD.pack(t.time.t0, t.time.dt, t.time.m))
        buf = np.empty(2 * t.time.m, dtype="<f8")
        buf[0::2] = t.samples.real
        buf[1::2] = t.samples.imag
        parts.append(buf.tobytes())
    poses = [geometry.array_mid, geometry.tx, *geometry.rx_centers]
    parts.append(np.array([tuple(p) for p in poses], dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_ping(path) -> tuple[list[Track], PingGeometry]:
    raw = Path(path).read_bytes()
    if raw[:4] != PING_MAGIC:
        raise FormatError(f"{path}: not a ping file")
    try:
        (version,) = _U32.unpack_from(raw, 4)
        if version != PING_VERSION:
            raise FormatError(f"{path}: unsupported ping version {version}")
        (n,) = _U32.unpack_from(raw, 8)
        off = 12
        tracks = []
        for _ in range(n):
            t0, dt, m = _TRACK_HEAD.unpack_from(raw, off)
            off += _TRACK_HEAD.size
            data = np.frombuffer(raw, dtype="<f8", count=2 * m, offset=off)
            off += 16 * m
            tracks.append(Track(TimeGrid(t0, dt, m), data[0::2] + 1j * data[1::2]))
        poses = np.frombuffer(raw, dtype="<f8", count=3 * (n + 2), offset=off).reshape(n + 2, 3)
        off += poses.nbytes
    except struct.error as exc:
        raise FormatError(f"{path}: truncated ping file") from exc
    except ValueError as exc:
        raise FormatError(f"{path}: truncated ping file ({exc})") from exc
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    p = [Pose.from_array(row) for row in poses]
    return tracks, PingGeometry(p[0], p[1], tuple(p[2:]))


def ping_record(tracks, geometry: PingGeometry, cfg: SystemConfig, meta: dict | None = None) -> PingRecord:
    """Wrap loaded tracks into a :class:`PingRecord`.

    The attached operator lives on a single cell at midrange broadside; the
    estimators only use its geometry, time grid and configuration.
    """
    tracks = list(tracks)
    pca = geometry.pca
    cell = pca.apply(np.array([0.0, cfg.midrange]))
    grid = ReflectivityGrid.zeros((cell[0], cell[1]), cfg.range_resolution, cfg.range_resolution, 1, 1)
    op = PingOperator(geometry, grid, tracks[0].time, cfg)
    return PingRecord(op, tuple(tracks), dict(meta or {}))


# ---------------------------------------------------------------- CSV files

TRAJECTORY_HEADER = ["ping", "x", "y", "theta", "dx", "dy", "dtheta"]
TRACE_HEADER = ["stage", "eval", "x", "y", "theta", "value"]
SCAN_HEADER = ["value", "zeta", "eta"]


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, (int, str)) else repr(float(r)) for r in row])


def _read_rows(path, header) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != header:
        raise FormatError(f"{path}: expected header {','.join(header)}")
    return rows[1:]


def write_trajectory_csv(path, poses, differentials=None, indices=None) -> None:
    """One row per ping: pose and the differential from the previous ping."""
    poses = list(poses)
    diffs = [Pose()] + list(differentials) if differentials is not None else [Pose()] * len(poses)
    if len(diffs) != len(poses):
        raise ShapeMismatch("need one differential per consecutive pair")
    indices = range(len(poses)) if indices is None else list(indices)
    _write_rows(path, TRAJECTORY_HEADER, ([i, *p, *d] for i, p, d in zip(indices, poses, diffs)))


def read_trajectory_csv(path) -> tuple[list[int], list[Pose], list[Pose]]:
    """Returns ``(ping indices, poses, differentials)``; differentials skip the first row."""
    rows = _read_rows(path, TRAJECTORY_HEADER)
    idx = [int(r[0]) for r in rows]
    poses = [Pose(float(r[1]), float(r[2]), float(r[3])) for r in rows]
    diffs = [Pose(float(r[4]), float(r[5]), float(r[6])) for r in rows[1:]]
    return idx, poses, diffs


def write_trace_csv(path, trace) -> None:
    """Optimizer trace as ``(stage, eval, x, y, theta, value)`` rows."""
    _write_rows(path, TRACE_HEADER, ([stage, k, *sigma, value] for k, (stage, sigma, value) in enumerate(trace)))


def read_trace_csv(path) -> list[tuple[str, Pose, float]]:
    rows = _read_rows(path, TRACE_HEADER)
    return [(r[0], Pose(float(r[2]), float(r[3]), float(r[4])), float(r[5])) for r in rows]


def write_scan_csv(path, values, zetas, etas) -> None:
    _write_rows(path, SCAN_HEADER, zip(values, zetas, etas))


def read_scan_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = np.array(_read_rows(path, SCAN_HEADER), dtype=float).reshape(-1, 3)
    return rows[:, 0], rows[:, 1], rows[:, 2]


# ---------------------------------------------------------------- images

def magnitude_levels(grid: ReflectivityGrid, scale: str = "linear", floor_db: float = 40.0) -> np.ndarray:
    """16-bit gray levels of ``|values|``, normalized to the peak.

    ``scale="db"`` maps ``[-floor_db, 0]`` dB onto the full range.
    """
    mag = np.abs(grid.values)
    peak = mag.max()
    if peak == 0.0:
        return np.zeros(mag.shape, dtype=np.uint16)
    rel = mag / peak
    if scale == "linear":
        level = rel
    elif scale == "db":
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(rel)
        level = np.clip(1.0 + db / floor_db, 0.0, 1.0)
    else:
        raise ValueError(f"unknown scale {scale!r}")
    return np.round(level * 65535).astype(np.uint16)


def write_pgm(path, grid: ReflectivityGrid, scale: str = "linear", floor_db: float = 40.0) -> None:
    """Binary 16-bit PGM of the magnitude; the top row is the far range."""
    levels = magnitude_levels(grid, scale, floor_db)[::-1]
    header = f"P5\n{grid.nx} {grid.ny}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + levels.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    """Gray levels of a 16-bit binary PGM (rows as stored)."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
