import math

import numpy as np
import pytest
from scipy.signal import windows

from sasnav.acoustic import (KERNEL_HALF_WIDTH, ChirpSpec, TimeGrid, Track, adjoint_observe, attenuation,
                             chirp_replica, element_pattern, forward_observe, greens_function,
                             observation_matrix, propagation_delay, pulse_compress, pulse_kernel, time_window)
from sasnav.errors import CoincidentPoint, ShapeMismatch, TooShort, ValidationError
from sasnav.geometry import IDENTITY, PingGeometry, Pose, SystemConfig
from sasnav.scene import RippleSpec, synth_scene

from conftest import random_geometry, tiny_grid


def test_pulse_kernel_shape():
    assert pulse_kernel(0.0) == pytest.approx(1.0)
    u = np.linspace(-8, 8, 161)
    k = pulse_kernel(u)
    assert np.allclose(k, k[::-1])
    assert np.all(k[np.abs(u) >= KERNEL_HALF_WIDTH] == 0.0)
    # even integer offsets sit on zeros of sinc(u/2)
    assert np.allclose(pulse_kernel(np.array([2.0, 4.0, -2.0])), 0.0, atol=1e-15)


def test_pulse_kernel_window_is_kaiser():
    # sampled on the tap grid the taper matches scipy's symmetric Kaiser window
    n = 2 * KERNEL_HALF_WIDTH + 1
    u = np.linspace(-KERNEL_HALF_WIDTH, KERNEL_HALF_WIDTH, n)[1:-1]
    w = windows.kaiser(n, 8.0)[1:-1]
    assert np.allclose(pulse_kernel(u), np.sinc(u / 2) * w)


def test_delay_and_pattern():
    tx, rx = Pose(0, 0, 0), Pose(1, 0, 0)
    assert propagation_delay(tx, rx, np.array([0.0, 10.0]), 1500.0) == pytest.approx((10 + math.hypot(1, 10)) / 1500)
    with pytest.raises(ValidationError):
        propagation_delay(tx, rx, np.array([0.0, 1.0]), 0.0)
    # broadside response is 1 and the first null sits at sin(phi) = lambda / D
    lam, D = 0.005, 0.05
    pts = np.array([[0.0, 10.0], [10 * math.tan(math.asin(lam / D)), 10.0]])
    p = element_pattern(IDENTITY, 0.0, D, lam, pts, np.hypot(pts[:, 0], pts[:, 1]))
    assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-12)


def test_attenuation_exploding_sources():
    cfg = SystemConfig()
    z = np.array([0.0, 10.0])
    a = attenuation(Pose(0, 0, 0), Pose(0, 0, 0), z, 0.0, 0.0, cfg)
    assert a == pytest.approx(1 / math.sqrt(20.0))
    with pytest.raises(CoincidentPoint):
        attenuation(Pose(0, 10, 0), Pose(0, 0, 0), z, 0.0, 0.0, cfg)


def dense_matrix(points, tx, receivers, time, cfg):
    """Brute-force observation matrix, one entry at a time."""
    A = np.zeros((len(receivers) * time.m, len(points)), complex)
    t = time.times
    for r, rx in enumerate(receivers):
        for n, z in enumerate(points):
            tau = propagation_delay(tx, rx, z, cfg.c)
            g = attenuation(tx, rx, z, tx.theta, rx.theta, cfg) * np.exp(-2j * np.pi * cfg.f0 * tau)
            A[r * time.m:(r + 1) * time.m, n] = pulse_kernel((t - tau) / time.dt) * g
    return A


def test_observation_matrix_matches_brute_force(small_cfg, rng):
    cfg = small_cfg
    grid = tiny_grid(cfg, 5)
    geo = random_geometry(cfg, rng)
    time = time_window(grid.points(), [(geo.tx, r) for r in geo.rx_centers], cfg)
    A, dropped = observation_matrix(grid.points(), geo.tx, geo.rx_centers, time, cfg)
    assert dropped == 0
    B = dense_matrix(grid.points(), geo.tx, geo.rx_centers, time, cfg)
    assert np.abs(A.toarray() - B).max() <= 1e-12 * np.abs(B).max()


def test_greens_function_matches_matrix_weights(small_cfg):
    grid = tiny_grid(small_cfg, 4)
    tx, rx = Pose(-0.05, 0, 0), Pose(0.05, 0, 0)
    G = greens_function(grid, tx, rx, small_cfg)
    tau = propagation_delay(tx, rx, grid.points(), small_cfg.c)
    assert np.allclose(np.angle(G * np.exp(2j * np.pi * small_cfg.f0 * tau)), 0.0)
    assert np.allclose(np.abs(G), attenuation(tx, rx, grid.points(), 0, 0, small_cfg))


def test_cells_outside_window_are_dropped(small_cfg):
    grid = tiny_grid(small_cfg, 4)
    time = TimeGrid(0.0, 1 / 60e3, 10)
    A, dropped = observation_matrix(grid.points(), IDENTITY, [Pose(0.05, 0, 0)], time, small_cfg)
    assert dropped == grid.size
    assert A.nnz == 0 or np.all(A.data == 0)


def test_point_echo_lands_at_its_delay(cfg):
    grid = tiny_grid(cfg, 9)
    vals = np.zeros(grid.size, complex)
    vals[grid.size // 2] = 1.0
    rho = grid.with_values(vals)
    tx, rx = Pose(-0.05, 0, 0), Pose(0.05, 0, 0)
    time = time_window(grid.points(), [(tx, rx)], cfg)
    trk = forward_observe(rho, tx, rx, time, cfg)
    tau = propagation_delay(tx, rx, grid.points()[grid.size // 2], cfg.c)
    assert abs(time.times[np.argmax(np.abs(trk.samples))] - tau) <= time.dt / 2


def test_adjoint_identity(small_cfg, rng):
    cfg = small_cfg
    for _ in range(20):
        grid = tiny_grid(cfg, 6, (rng.normal(0, 0.1), 10 + rng.normal(0, 0.1)))
        tx, rx = Pose(*rng.normal(0, 0.1, 2), rng.normal(0, 0.02)), Pose(*rng.normal(0, 0.1, 2), rng.normal(0, 0.02))
        time = time_window(grid.points(), [(tx, rx)], cfg)
        x = grid.with_values(rng.standard_normal(grid.size) + 1j * rng.standard_normal(grid.size))
        y = Track(time, rng.standard_normal(time.m) + 1j * rng.standard_normal(time.m))
        lhs = np.vdot(y.samples, forward_observe(x, tx, rx, time, cfg).samples)
        rhs = np.vdot(adjoint_observe(y, tx, rx, grid, cfg).flat(), x.flat())
        assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_forward_is_deterministic_and_linear(small_cfg, rng):
    cfg = small_cfg
    grid = tiny_grid(cfg, 5)
    a = synth_scene(grid, RippleSpec(), None, 1)
    b = synth_scene(grid, RippleSpec(), None, 2)
    tx, rx = Pose(-0.05, 0, 0), Pose(0.05, 0, 0)
    time = time_window(grid.points(), [(tx, rx)], cfg)
    fa = forward_observe(a, tx, rx, time, cfg).samples
    fb = forward_observe(b, tx, rx, time, cfg).samples
    fab = forward_observe(a.with_values(2 * a.flat() - 1j * b.flat()), tx, rx, time, cfg).samples
    assert np.allclose(fab, 2 * fa - 1j * fb)
    assert np.array_equal(fa, forward_observe(a, tx, rx, time, cfg).samples)


def test_track_validation():
    with pytest.raises(ShapeMismatch):
        Track(TimeGrid(0, 1, 3), np.zeros(4))
    with pytest.raises(ValidationError):
        TimeGrid(0, 0, 3)


def test_time_window_covers_all_delays(cfg):
    grid = tiny_grid(cfg, 10)
    geo = PingGeometry.replacement(IDENTITY, cfg)
    pairs = [(geo.tx, r) for r in geo.rx_centers]
    time = time_window(grid.points(), pairs, cfg, margin=0.1)
    for tx, rx in pairs:
        tau = propagation_delay(tx, rx, grid.points(), cfg.c)
        assert tau.min() - time.t0 > KERNEL_HALF_WIDTH * time.dt
        assert time.t_end - tau.max() > KERNEL_HALF_WIDTH * time.dt


def test_pulse_compression_peak_and_symmetry():
    spec = ChirpSpec()
    s = chirp_replica(spec).real
    k = 40
    raw = np.zeros(s.size + 100 * spec.decimation)
    raw[k * spec.decimation:k * spec.decimation + s.size] += s
    out = pulse_compress(raw, spec)
    mag = np.abs(out.samples)
    assert np.argmax(mag) == k
    assert out.time.dt == pytest.approx(spec.decimation / spec.fs)
    # compressed envelope: symmetric main lobe about the echo
    assert mag[k - 1] == pytest.approx(mag[k + 1], rel=0.05)
    assert mag[k + 1] < mag[k]


def test_pulse_compression_resolution():
    spec = ChirpSpec(decimation=1)
    s = chirp_replica(spec).real
    raw = np.zeros(s.size + 400)
    raw[100:100 + s.size] = s
    mag = np.abs(pulse_compress(raw, spec).samples)
    half = mag >= mag.max() / 2
    width = np.ptp(np.flatnonzero(half)) / spec.fs
    # half-amplitude width of sinc(B t) is 1.21 / B
    assert width == pytest.approx(1.21 / spec.bandwidth, rel=0.25)


def test_pulse_compression_too_short():
    with pytest.raises(TooShort):
        pulse_compress(np.zeros(10), ChirpSpec())
