"""Planar poses, phase centers and array geometry.

All poses live on the slant plane: ``x`` is along-track, ``y`` is
cross-track (range) and ``theta`` is the counter-clockwise orientation of
the element or array axis with respect to the ``x`` axis.  An element with
orientation ``theta`` looks along ``theta + pi/2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MidpointNotZero, NonPositiveRange, ValidationError


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass(frozen=True)
class Pose:
    """Rigid placement ``(x, y, theta)`` on the slant plane."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def __iter__(self):
        return iter((self.x, self.y, self.theta))

    def __add__(self, other: Pose) -> Pose:
        return Pose(self.x + other.x, self.y + other.y, self.theta + other.theta)

    def __sub__(self, other: Pose) -> Pose:
        return Pose(self.x - other.x, self.y - other.y, self.theta - other.theta)

    def __neg__(self) -> Pose:
        return Pose(-self.x, -self.y, -self.theta)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, values) -> Pose:
        x, y, theta = (float(v) for v in values)
        return cls(x, y, theta)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def apply(self, points) -> np.ndarray:
        """Map points given in this pose's frame to the parent frame."""
        pts = np.asarray(points, dtype=float)
        c, s = math.cos(self.theta), math.sin(self.theta)
        px, py = pts[..., 0], pts[..., 1]
        return np.stack([c * px - s * py + self.x, s * px + c * py + self.y], axis=-1)


IDENTITY = Pose()


def compose(a: Pose, b: Pose) -> Pose:
    """Rigid transform applying ``b`` then ``a``.

    ``b`` is expressed in the frame of ``a``: its offset is rotated by
    ``a.theta`` and translated by ``a``'s position.
    """
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def inverse(a: Pose) -> Pose:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose(-(c * a.x + s * a.y), s * a.x - c * a.y, -a.theta)


def relative_pose(frame: Pose, pose: Pose) -> Pose:
    """Express ``pose`` in the frame of ``frame``."""
    return compose(inverse(frame), pose)


def phase_center(tx: Pose, array_mid: Pose) -> Pose:
    """Midpoint of the transmitter and the array, oriented like the array."""
    return Pose((array_mid.x + tx.x) / 2.0, (array_mid.y + tx.y) / 2.0, array_mid.theta)


def differential_displacement(pca_p: Pose, pca_q: Pose) -> Pose:
    """Componentwise displacement of ping ``q``'s phase center from ping ``p``'s."""
    return Pose(pca_q.x - pca_p.x, pca_q.y - pca_p.y, pca_q.theta - pca_p.theta)


def bistatic_replacement(pca: Pose, varsigma_r: Pose, varsigma_t: Pose,
                         dtheta_t: float = 0.0) -> tuple[Pose, Pose]:
    """Bistatic Tx/array pair sharing the phase center ``pca``.

    The offsets ``varsigma_r`` and ``varsigma_t`` are given in the frame of
    ``pca`` and must be symmetric about it.  Returns ``(array_mid, tx)``;
    the transmitter carries the extra orientation ``dtheta_t``.
    """
    mx = (varsigma_r.x + varsigma_t.x) / 2.0
    my = (varsigma_r.y + varsigma_t.y) / 2.0
    if math.hypot(mx, my) > 1e-9:
        raise MidpointNotZero(f"offset midpoint ({mx:.3g}, {my:.3g}) m is not at the phase center")
    rx = compose(pca, Pose(varsigma_r.x, varsigma_r.y, 0.0))
    tx = compose(pca, Pose(varsigma_t.x, varsigma_t.y, dtheta_t))
    return rx, tx


@dataclass(frozen=True)
class SystemConfig:
    """Physical constants and array layout of the sonar.

    ``tx_offset`` places the (virtual) transmitter relative to the array
    midpoint, in the array frame.
    """

    f0: float = 300e3
    bandwidth: float = 30e3
    c: float = 1500.0
    D_tx: float = 0.05
    D_rx: float = 0.05
    N: int = 16
    L: float = 0.05
    tx_offset: Pose = field(default_factory=lambda: Pose(-0.10, 0.0, 0.0))
    K: int = 4
    midrange: float = 10.0
    range_window: float = 0.6

    def __post_init__(self):
        if self.f0 <= 0 or self.c <= 0:
            raise ValidationError("f0 and c must be positive")
        if not 0 < self.bandwidth <= self.f0:
            raise ValidationError("bandwidth must lie in (0, f0]")
        if self.N < 1 or self.L <= 0 or self.D_tx <= 0 or self.D_rx <= 0:
            raise ValidationError("array dimensions must be positive")
        if not 0 <= self.K < max(self.N, 1) or (self.N == 1 and self.K != 0):
            raise ValidationError("K must satisfy 0 <= K < N")
        if self.midrange <= 0 or self.range_window <= 0:
            raise ValidationError("midrange and range_window must be positive")

    @property
    def wavelength(self) -> float:
        return self.c / self.f0

    @property
    def D(self) -> float:
        return max(self.D_tx, self.D_rx)

    @property
    def range_resolution(self) -> float:
        return self.c / (2.0 * self.bandwidth)

    def rx_offsets(self) -> np.ndarray:
        """Along-array offsets of the receivers from the array midpoint."""
        return (np.arange(self.N) - (self.N - 1) / 2.0) * self.L

    def replacement_offsets(self) -> tuple[Pose, Pose, float]:
        """Symmetric ``(varsigma_r, varsigma_t, dtheta_t)`` implied by ``tx_offset``."""
        hx, hy = self.tx_offset.x / 2.0, self.tx_offset.y / 2.0
        return Pose(-hx, -hy, 0.0), Pose(hx, hy, 0.0), self.tx_offset.theta


@dataclass(frozen=True)
class PingGeometry:
    """Transmitter and receiver placement of a single ping."""

    array_mid: Pose
    tx: Pose
    rx_centers: tuple[Pose, ...]

    @classmethod
    def from_array(cls, array_mid: Pose, tx: Pose, offsets) -> PingGeometry:
        rx = tuple(compose(array_mid, Pose(float(o), 0.0, 0.0)) for o in offsets)
        return cls(array_mid, tx, rx)

    @classmethod
    def rigid(cls, array_mid: Pose, cfg: SystemConfig) -> PingGeometry:
        """Geometry with the transmitter rigidly attached at ``cfg.tx_offset``."""
        return cls.from_array(array_mid, compose(array_mid, cfg.tx_offset), cfg.rx_offsets())

    @classmethod
    def replacement(cls, pca: Pose, cfg: SystemConfig) -> PingGeometry:
        """Replacement bistatic geometry with phase center ``pca``."""
        vr, vt, dtheta = cfg.replacement_offsets()
        array_mid, tx = bistatic_replacement(pca, vr, vt, dtheta)
        return cls.from_array(array_mid, tx, cfg.rx_offsets())

    @property
    def N(self) -> int:
        return len(self.rx_centers)

    @property
    def pca(self) -> Pose:
        return phase_center(self.tx, self.array_mid)

    def transformed(self, pose: Pose) -> PingGeometry:
        """Apply the rigid motion ``pose`` to every sensor."""
        return PingGeometry(compose(pose, self.array_mid), compose(pose, self.tx),
                            tuple(compose(pose, r) for r in self.rx_centers))

    def localized(self) -> PingGeometry:
        """The same geometry expressed in its own phase-center frame."""
        return self.transformed(inverse(self.pca))

    def select(self, index: int) -> PingGeometry:
        """Single-receiver geometry keeping the receiver ``index``."""
        return PingGeometry(self.array_mid, self.tx, (self.rx_centers[index],))


def max_speed(cfg: SystemConfig, R: float) -> float:
    """Highest platform speed keeping along-track sampling at ``D/4`` for range ``R``."""
    if R <= 0:
        raise NonPositiveRange(f"range must be positive, got {R}")
    return cfg.N * cfg.D * cfg.c / (8.0 * R)
