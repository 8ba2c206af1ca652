"""Reflectivity grids and synthetic seabed scenes."""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import EmptyExtent, FormatError, PhantomOutOfBounds, ShapeMismatch, ValidationError
from .geometry import SystemConfig

GRID_MAGIC = b"SASG"
GRID_VERSION = 1


@dataclass(frozen=True, eq=False)
class ReflectivityGrid:
    """Complex reflectivity sampled on a regular grid.

    ``origin`` is the position of the first cell center.  ``values`` has
    shape ``(ny, nx)``: rows run along ``y`` and ``x`` varies fastest.
    """

    origin: tuple[float, float]
    dx: float
    dy: float
    nx: int
    ny: int
    values: np.ndarray

    def __post_init__(self):
        if self.dx <= 0 or self.dy <= 0:
            raise ValidationError("grid spacing must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValidationError("grid must have at least one cell")
        vals = np.asarray(self.values, dtype=complex)
        if vals.size != self.nx * self.ny:
            raise ShapeMismatch(f"expected {self.nx * self.ny} values, got {vals.size}")
        object.__setattr__(self, "values", vals.reshape(self.ny, self.nx))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def zeros(cls, origin, dx, dy, nx, ny) -> ReflectivityGrid:
        return cls(origin, dx, dy, nx, ny, np.zeros((ny, nx), complex))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.dx * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.origin[1] + self.dy * np.arange(self.ny)

    @property
    def center(self) -> tuple[float, float]:
        return (self.origin[0] + self.dx * (self.nx - 1) / 2.0,
                self.origin[1] + self.dy * (self.ny - 1) / 2.0)

    def points(self) -> np.ndarray:
        """Cell centers as an ``(ny * nx, 2)`` array in row-major order."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def same_layout(self, other: ReflectivityGrid) -> bool:
        return (self.nx, self.ny) == (other.nx, other.ny) and np.allclose(
            (*self.origin, self.dx, self.dy), (*other.origin, other.dx, other.dy), rtol=0, atol=1e-12)

    def with_values(self, values) -> ReflectivityGrid:
        return replace(self, values=np.asarray(values, dtype=complex).reshape(self.ny, self.nx))

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def __eq__(self, other):
        if not isinstance(other, ReflectivityGrid):
            return NotImplemented
        return (self.origin == other.origin and (self.dx, self.dy, self.nx, self.ny)
                == (other.dx, other.dy, other.nx, other.ny)
                and np.array_equal(self.values, other.values))


def make_grid(cfg: SystemConfig, extent, center, spacing: float | None = None) -> ReflectivityGrid:
    """Zero-filled grid covering ``extent`` (meters) around ``center``.

    The cell size defaults to the range resolution ``c / (2 * bandwidth)``.
    """
    ex, ey = extent
    if ex <= 0 or ey <= 0:
        raise EmptyExtent(f"extent must be positive, got {extent}")
    d = cfg.range_resolution if spacing is None else float(spacing)
    nx = max(1, int(round(ex / d)))
    ny = max(1, int(round(ey / d)))
    origin = (center[0] - d * (nx - 1) / 2.0, center[1] - d * (ny - 1) / 2.0)
    return ReflectivityGrid.zeros(origin, d, d, nx, ny)


@dataclass(frozen=True)
class RippleSpec:
    """Sand-ripple background: complex Gaussian noise with sinusoidal modulation."""

    wavelength: float = 0.15
    direction: float = 0.3
    depth: float = 0.6
    sigma: float = 1.0


@dataclass(frozen=True)
class PhantomSpec:
    """Circular object of elevated reflectivity."""

    center: tuple[float, float] = (0.0, 10.0)
    diameter: float = 0.40
    gain_db: float = 20.0


def synth_scene(grid: ReflectivityGrid, ripple: RippleSpec, phantom: PhantomSpec | None,
                seed: int) -> ReflectivityGrid:
    """Seeded ripple background plus an optional circular phantom."""
    pts = grid.points()
    if phantom is not None:
        r = phantom.diameter / 2.0
        cx, cy = phantom.center
        x0, y0 = grid.origin[0] - grid.dx / 2, grid.origin[1] - grid.dy / 2
        x1, y1 = x0 + grid.nx * grid.dx, y0 + grid.ny * grid.dy
        if cx - r < x0 or cx + r > x1 or cy - r < y0 or cy + r > y1:
            raise PhantomOutOfBounds(f"phantom at {phantom.center} (d={phantom.diameter}) exceeds grid")

    rng = np.random.default_rng(seed)
    noise = (rng.standard_normal(grid.size) + 1j * rng.standard_normal(grid.size)) * (ripple.sigma / math.sqrt(2))
    u = pts[:, 0] * math.cos(ripple.direction) + pts[:, 1] * math.sin(ripple.direction)
    values = (1.0 + ripple.depth * np.cos(2 * np.pi * u / ripple.wavelength)) * noise

    if phantom is not None:
        inside = np.hypot(pts[:, 0] - phantom.center[0], pts[:, 1] - phantom.center[1]) <= phantom.diameter / 2.0
        # mean |CN(0, s^2)| = s * sqrt(pi) / 2
        mag = 10 ** (phantom.gain_db / 20.0) * ripple.sigma * math.sqrt(math.pi) / 2.0
        phase = rng.uniform(-np.pi, np.pi, int(inside.sum()))
        values[inside] = mag * np.exp(1j * phase)
    return grid.with_values(values)


def save_grid(path, grid: ReflectivityGrid) -> None:
    header = GRID_MAGIC + struct.pack("<III4d", GRID_VERSION, grid.nx, grid.ny,
                                      grid.origin[0], grid.origin[1], grid.dx, grid.dy)
    data = np.empty(2 * grid.size, dtype="<f8")
    data[0::2] = grid.values.real.ravel()
    data[1::2] = grid.values.imag.ravel()
    Path(path).write_bytes(header + data.tobytes())


def load_grid(path) -> ReflectivityGrid:
    raw = Path(path).read_bytes()
    if raw[:4] != GRID_MAGIC:
        raise FormatError(f"{path}: not a grid file")
    version, nx, ny, ox, oy, dx, dy = struct.unpack_from("<III4d", raw, 4)
    if version != GRID_VERSION:
        raise FormatError(f"{path}: unsupported grid version {version}")
    off = 4 + struct.calcsize("<III4d")
    data = np.frombuffer(raw, dtype="<f8", offset=off)
    if data.size != 2 * nx * ny:
        raise FormatError(f"{path}: truncated grid payload")
    return ReflectivityGrid((ox, oy), dx, dy, nx, ny, data[0::2] + 1j * data[1::2])


def export_grid_csv(path, grid: ReflectivityGrid) -> None:
    pts = grid.points()
    vals = grid.flat()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "re", "im"])
        for (x, y), v in zip(pts, vals):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v.real)), repr(float(v.imag))])
