"""Per-ping observation operators, truncated pseudoinverse and projections.

A ping is a stack of ``N`` bistatic pairs sharing one transmitter.  Shifting
or rotating an operator (conjugating it with a rigid motion of the image) is
done by moving the sensors, so image grids never get resampled.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acoustic import TimeGrid, Track, observation_matrix
from .errors import ShapeMismatch, ValidationError
from .geometry import PingGeometry, Pose, SystemConfig
from .scene import ReflectivityGrid

DEFAULT_INNER = 5
DEFAULT_OUTER = 5


class PingOperator:
    """Stacked observation operator ``T`` of one ping on a fixed image grid.

    Maps an image of ``grid.size`` cells to ``N * time.m`` track samples.
    """

    def __init__(self, geometry: PingGeometry, grid: ReflectivityGrid, time: TimeGrid, cfg: SystemConfig):
        self.geometry = geometry
        self.grid = grid
        self.time = time
        self.cfg = cfg
        self._points = grid.points()
        A, self.dropped = observation_matrix(self._points, geometry.tx, geometry.rx_centers, time, cfg)
        self._A = A.tocsr()
        self._AH = A.conj().T.tocsr()

    @property
    def N(self) -> int:
        return self.geometry.N

    @property
    def shape(self) -> tuple[int, int]:
        return self._A.shape

    def displaced(self, sigma: Pose) -> PingOperator:
        """Operator of the same ping after the rigid motion ``sigma``."""
        return PingOperator(self.geometry.transformed(sigma), self.grid, self.time, self.cfg)

    def matrix(self):
        """The sparse observation matrix (rows grouped by receiver)."""
        return self._A

    def _check_image(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.size != self.grid.size:
            raise ShapeMismatch(f"image has {x.size} cells, operator expects {self.grid.size}")
        return x.ravel()

    def _check_data(self, y) -> np.ndarray:
        y = np.asarray(y)
        if y.size != self._A.shape[0]:
            raise ShapeMismatch(f"data has {y.size} samples, operator expects {self._A.shape[0]}")
        return y.ravel()

    def apply(self, x) -> np.ndarray:
        """Forward map of a flat image; returns an ``(N, m)`` array."""
        return (self._A @ self._check_image(x)).reshape(self.N, self.time.m)

    def adjoint(self, y) -> np.ndarray:
        """Backprojection of ``(N, m)`` data to a flat image."""
        return self._AH @ self._check_data(y)

    def pinv(self, y, iters: int = DEFAULT_INNER) -> np.ndarray:
        """Truncated least-squares inverse by conjugate gradients on the normal equations.

        Starts from zero and runs exactly ``iters`` iterations unless the
        normal-equation residual vanishes.
        """
        if iters < 1:
            raise ValidationError("iters must be >= 1")
        b = self._check_data(y).astype(complex)
        A, AH = self._A, self._AH
        x = np.zeros(A.shape[1], complex)
        r = b.copy()
        s = AH @ r
        p = s.copy()
        gamma = np.vdot(s, s).real
        for k in range(iters):
            if gamma == 0.0:
                break
            q = A @ p
            qq = np.vdot(q, q).real
            if qq == 0.0:
                break
            alpha = gamma / qq
            x += alpha * p
            if k == iters - 1:
                break
            r -= alpha * q
            s = AH @ r
            gamma_new = np.vdot(s, s).real
            p = s + (gamma_new / gamma) * p
            gamma = gamma_new
        return x

    def project(self, x, iters: int = DEFAULT_INNER) -> np.ndarray:
        """Approximate orthogonal projection onto the row space of ``T``."""
        return self.pinv(self._A @ self._check_image(x), iters)


def _tracks_array(op: PingOperator, tracks) -> np.ndarray:
    if isinstance(tracks, np.ndarray):
        data = tracks
    else:
        tracks = list(tracks)
        if len(tracks) != op.N:
            raise ShapeMismatch(f"{len(tracks)} tracks for a {op.N}-receiver ping")
        for t in tracks:
            if t.time != op.time:
                raise ShapeMismatch("track time grid differs from the operator's")
        data = np.stack([t.samples for t in tracks])
    if data.shape != (op.N, op.time.m):
        raise ShapeMismatch(f"data shape {data.shape} != {(op.N, op.time.m)}")
    return data


def _image_array(op: PingOperator, rho) -> np.ndarray:
    if isinstance(rho, ReflectivityGrid):
        if not rho.same_layout(op.grid):
            raise ShapeMismatch("image grid does not match the operator grid")
        return rho.flat()
    return op._check_image(rho)


@dataclass(frozen=True, eq=False)
class PingRecord:
    """Observation operator of a ping together with its recorded tracks."""

    op: PingOperator
    tracks: tuple[Track, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        tracks = tuple(self.tracks)
        if len(tracks) != self.op.N:
            raise ShapeMismatch(f"{len(tracks)} tracks for a {self.op.N}-receiver ping")
        if any(t.time != tracks[0].time for t in tracks):
            raise ShapeMismatch("tracks of a ping must share one time grid")
        object.__setattr__(self, "tracks", tracks)

    @property
    def data(self) -> np.ndarray:
        return np.stack([t.samples for t in self.tracks])

    @property
    def geometry(self) -> PingGeometry:
        return self.op.geometry


def ping_forward(op: PingOperator, rho) -> list[Track]:
    """Raw tracks ``T rho`` of every receiver of the ping."""
    data = op.apply(_image_array(op, rho))
    return [Track(op.time, row) for row in data]


def pseudoinverse_apply(op: PingOperator, tracks, iters: int = DEFAULT_INNER) -> ReflectivityGrid:
    return op.grid.with_values(op.pinv(_tracks_array(op, tracks), iters))


def project(op: PingOperator, rho, iters: int = DEFAULT_INNER) -> ReflectivityGrid:
    return op.grid.with_values(op.project(_image_array(op, rho), iters))


def alternate(start, first, second, outer_iters: int) -> np.ndarray:
    """``(first o second)^outer_iters`` applied to ``start``.

    ``first`` and ``second`` are projector callables; ``first`` is applied
    last, so the result lies (approximately) in its range.
    """
    if outer_iters < 1:
        raise ValidationError("outer_iters must be >= 1")
    x = start
    for _ in range(outer_iters):
        x = first(second(x))
    return x


def intersection_project(start, op_p: PingOperator, op_q_base: PingOperator, sigma: Pose,
                         outer_iters: int = DEFAULT_OUTER, inner_iters: int = DEFAULT_INNER,
                         finish_with: str = "p") -> ReflectivityGrid:
    """Projection of ``start`` onto the intersection of two ping subspaces.

    ``op_q_base`` is moved by the hypothesis ``sigma`` before use.  With
    ``finish_with="p"`` the iteration is ``(Q_p Q_q)^i start``; with ``"q"``
    it is ``(Q_q Q_p)^i start``.
    """
    if not op_p.grid.same_layout(op_q_base.grid):
        raise ShapeMismatch("both operators must share one image grid")
    op_q = op_q_base.displaced(sigma)
    x0 = _image_array(op_p, start)
    qp = lambda x: op_p.project(x, inner_iters)  # noqa: E731
    qq = lambda x: op_q.project(x, inner_iters)  # noqa: E731
    if finish_with == "p":
        out = alternate(x0, qp, qq, outer_iters)
    elif finish_with == "q":
        out = alternate(x0, qq, qp, outer_iters)
    else:
        raise ValidationError("finish_with must be 'p' or 'q'")
    return op_p.grid.with_values(out)


def backproject(ops, datas, grid: ReflectivityGrid | None = None) -> ReflectivityGrid:
    """Sum of the single-ping backprojections (adjoint images)."""
    ops = list(ops)
    grid = ops[0].grid if grid is None else grid
    img = np.zeros(grid.size, complex)
    for op, d in zip(ops, datas):
        img += op.adjoint(d)
    return grid.with_values(img)
