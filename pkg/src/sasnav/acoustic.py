"""Bistatic observation model of a single transmitter/receiver pair.

The forward operator spreads each weighted cell ``G(z) rho(z)`` onto the
track time grid with a compact band-limited pulse centred on the round-trip
delay of the cell; the adjoint gathers with the very same weights, so the
two are exact conjugate transposes of one another.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import signal

from .errors import CoincidentPoint, ShapeMismatch, TooShort, ValidationError
from .geometry import Pose, SystemConfig
from .scene import ReflectivityGrid

KERNEL_HALF_WIDTH = 6
KERNEL_BETA = 8.0
KERNEL_TAPS = 2 * KERNEL_HALF_WIDTH


class OutOfWindowWarning(RuntimeWarning):
    """Some grid cells fell outside the track time window and were dropped."""


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    m: int

    def __post_init__(self):
        if self.dt <= 0 or self.m < 1:
            raise ValidationError("time grid needs dt > 0 and m >= 1")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.m)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.m - 1)


@dataclass(frozen=True, eq=False)
class Track:
    time: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.shape != (self.time.m,):
            raise ShapeMismatch(f"track has {s.size} samples for a {self.time.m}-sample grid")
        object.__setattr__(self, "samples", s)

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        return self.time == other.time and np.array_equal(self.samples, other.samples)


@dataclass(frozen=True)
class ChirpSpec:
    f_center: float = 105e3
    bandwidth: float = 30e3
    duration: float = 3e-3
    fs: float = 1e6
    decimation: int = 33

    def __post_init__(self):
        if self.fs <= 2 * (self.f_center + self.bandwidth / 2):
            raise ValidationError("sampling rate too low for the chirp band")
        if self.decimation < 1:
            raise ValidationError("decimation must be >= 1")


def pulse_kernel(u) -> np.ndarray:
    """Compressed pulse sampled at ``u`` time-grid samples from its peak.

    A sinc of bandwidth ``fs / 2`` under a Kaiser window of half-width
    ``KERNEL_HALF_WIDTH`` samples; zero outside the window.
    """
    u = np.asarray(u, dtype=float)
    a = np.clip(1.0 - (u / KERNEL_HALF_WIDTH) ** 2, 0.0, None)
    w = np.i0(KERNEL_BETA * np.sqrt(a)) / np.i0(KERNEL_BETA)
    return np.where(np.abs(u) < KERNEL_HALF_WIDTH, np.sinc(u / 2.0) * w, 0.0)


def _as_points(z) -> np.ndarray:
    return np.atleast_2d(np.asarray(z, dtype=float))


def propagation_delay(tx: Pose, rx: Pose, z, c: float):
    """Round-trip delay from ``tx`` to ``z`` and back to ``rx``."""
    if c <= 0:
        raise ValidationError("sound speed must be positive")
    pts = np.asarray(z, dtype=float)
    d = np.hypot(pts[..., 0] - tx.x, pts[..., 1] - tx.y) + np.hypot(pts[..., 0] - rx.x, pts[..., 1] - rx.y)
    return d / c


def element_pattern(sensor: Pose, theta: float, aperture: float, wavelength: float, pts, dist):
    """Far-field response of a uniform aperture oriented along ``theta``."""
    sin_off = ((pts[..., 0] - sensor.x) * math.cos(theta) + (pts[..., 1] - sensor.y) * math.sin(theta)) / dist
    return np.abs(np.sinc(aperture * sin_off / wavelength))


def attenuation(tx: Pose, rx: Pose, z, theta_t: float, theta_r: float, cfg: SystemConfig):
    """Amplitude factor: radiation patterns over the exploding-sources spreading law."""
    pts = np.asarray(z, dtype=float)
    dt_ = np.hypot(pts[..., 0] - tx.x, pts[..., 1] - tx.y)
    dr_ = np.hypot(pts[..., 0] - rx.x, pts[..., 1] - rx.y)
    if np.any(dt_ < 1e-12) or np.any(dr_ < 1e-12):
        raise CoincidentPoint("scene point coincides with a sensor")
    lam = cfg.wavelength
    pt = element_pattern(tx, theta_t, cfg.D_tx, lam, pts, dt_)
    pr = element_pattern(rx, theta_r, cfg.D_rx, lam, pts, dr_)
    return pt * pr / np.sqrt(dt_ + dr_)


def greens_function(grid: ReflectivityGrid, tx: Pose, rx: Pose, cfg: SystemConfig) -> np.ndarray:
    """Per-cell ``alpha * exp(-j 2 pi f0 tau)`` in row-major cell order."""
    pts = grid.points()
    tau = propagation_delay(tx, rx, pts, cfg.c)
    alpha = attenuation(tx, rx, pts, tx.theta, rx.theta, cfg)
    return alpha * np.exp(-2j * np.pi * cfg.f0 * tau)


def default_time_step(cfg: SystemConfig) -> float:
    return 1.0 / (2.0 * cfg.bandwidth)


def time_window(points, pairs, cfg: SystemConfig, margin: float = 0.0, dt: float | None = None) -> TimeGrid:
    """Time grid covering every delay of ``points`` seen by the ``(tx, rx)`` pairs.

    ``margin`` (meters of one-way range) widens the window on both sides.
    """
    dt = default_time_step(cfg) if dt is None else dt
    pts = _as_points(points)
    lo, hi = np.inf, -np.inf
    for tx, rx in pairs:
        tau = propagation_delay(tx, rx, pts, cfg.c)
        lo, hi = min(lo, tau.min()), max(hi, tau.max())
    pad = (KERNEL_HALF_WIDTH + 1) * dt + 2.0 * margin / cfg.c
    t0 = lo - pad
    m = int(math.ceil((hi + pad - t0) / dt)) + 1
    return TimeGrid(t0, dt, m)


def observation_matrix(points, tx: Pose, receivers, time: TimeGrid, cfg: SystemConfig):
    """Sparse stacked observation matrix of the pairs ``(tx, r)`` for ``r`` in ``receivers``.

    Returns ``(A, dropped)`` where ``A`` has shape ``(len(receivers) * m, ncell)``
    and ``dropped`` counts (pair, cell) combinations outside the window.
    """
    pts = _as_points(points)
    ncell = pts.shape[0]
    nrx = len(receivers)
    lam = cfg.wavelength
    px, py = pts[:, 0], pts[:, 1]

    d_t = np.hypot(px - tx.x, py - tx.y)
    if np.any(d_t < 1e-12):
        raise CoincidentPoint("scene point coincides with the transmitter")
    pat_t = element_pattern(tx, tx.theta, cfg.D_tx, lam, pts, d_t)

    rx_xy = np.array([[r.x, r.y] for r in receivers]).reshape(nrx, 1, 2)
    rx_th = np.array([r.theta for r in receivers]).reshape(nrx, 1)
    ex, ey = px[None, :] - rx_xy[..., 0], py[None, :] - rx_xy[..., 1]
    d_r = np.hypot(ex, ey)
    if np.any(d_r < 1e-12):
        raise CoincidentPoint("scene point coincides with a receiver")
    sin_off = (ex * np.cos(rx_th) + ey * np.sin(rx_th)) / d_r
    pat_r = np.abs(np.sinc(cfg.D_rx * sin_off / lam))

    path = d_t[None, :] + d_r
    tau = path / cfg.c
    G = pat_t[None, :] * pat_r / np.sqrt(path) * np.exp(-2j * np.pi * cfg.f0 * tau)

    u = (tau - time.t0) / time.dt
    base = np.floor(u).astype(np.int64) - (KERNEL_HALF_WIDTH - 1)
    inside = (base >= 0) & (base + KERNEL_TAPS - 1 <= time.m - 1)
    taps = np.arange(KERNEL_TAPS)
    idx = base[..., None] + taps                      # (nrx, ncell, taps)
    w = pulse_kernel(idx - u[..., None]) * G[..., None]
    w[~inside] = 0.0
    idx = np.where(inside[..., None], idx, taps)
    rows = idx + (np.arange(nrx) * time.m).reshape(nrx, 1, 1)

    # column-major storage: every cell owns nrx * taps consecutive entries
    data = np.ascontiguousarray(w.transpose(1, 0, 2)).ravel()
    indices = np.ascontiguousarray(rows.transpose(1, 0, 2)).ravel()
    per_col = nrx * KERNEL_TAPS
    indptr = np.arange(0, ncell * per_col + 1, per_col)
    A = sp.csc_matrix((data, indices, indptr), shape=(nrx * time.m, ncell))
    return A, int((~inside).sum())


def _pair_matrix(grid: ReflectivityGrid, tx: Pose, rx: Pose, time: TimeGrid, cfg: SystemConfig):
    A, dropped = observation_matrix(grid.points(), tx, [rx], time, cfg)
    if dropped:
        warnings.warn(f"{dropped} cells outside the time window were dropped", OutOfWindowWarning, stacklevel=3)
    return A


def forward_observe(rho: ReflectivityGrid, tx: Pose, rx: Pose, time: TimeGrid, cfg: SystemConfig) -> Track:
    """Raw baseband track of a single Tx/Rx pair observing ``rho``."""
    A = _pair_matrix(rho, tx, rx, time, cfg)
    return Track(time, A @ rho.flat())


def adjoint_observe(trk: Track, tx: Pose, rx: Pose, grid_shape: ReflectivityGrid, cfg: SystemConfig) -> ReflectivityGrid:
    """Conjugate transpose of :func:`forward_observe` (single-pair backprojection)."""
    A = _pair_matrix(grid_shape, tx, rx, trk.time, cfg)
    return grid_shape.with_values(A.conj().T @ trk.samples)


def chirp_replica(spec: ChirpSpec) -> np.ndarray:
    """Analytic linear up-chirp sampled at ``spec.fs``."""
    t = np.arange(int(round(spec.duration * spec.fs))) / spec.fs
    f_lo = spec.f_center - spec.bandwidth / 2.0
    k = spec.bandwidth / spec.duration
    return np.exp(2j * np.pi * (f_lo * t + 0.5 * k * t ** 2))


def pulse_compress(raw, spec: ChirpSpec, numtaps: int = 129) -> Track:
    """Matched filtering, basebanding, low-pass filtering and decimation.

    Sample ``n`` of the output corresponds to an echo whose chirp starts at
    ``n * decimation / fs`` seconds.
    """
    x = np.asarray(raw, dtype=float)
    s = chirp_replica(spec)
    if x.size < s.size:
        raise TooShort(f"{x.size} samples is shorter than the {s.size}-sample chirp")
    # y[n] = sum_k x[n + k] conj(s[k]); zero lags beyond the record
    full = signal.correlate(x, s, mode="full", method="fft")
    y = full[s.size - 1:]
    n = np.arange(y.size)
    bb = y * np.exp(-2j * np.pi * spec.f_center * n / spec.fs)
    taps = signal.firwin(numtaps, spec.bandwidth / 2.0, fs=spec.fs)
    padlen = min(3 * numtaps, bb.size - 1)
    lp = signal.filtfilt(taps, [1.0], bb, padlen=padlen)
    out = lp[::spec.decimation]
    return Track(TimeGrid(0.0, spec.decimation / spec.fs, out.size), out)
