import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasnav.errors import MidpointNotZero, NonPositiveRange, ValidationError
from sasnav.geometry import (IDENTITY, PingGeometry, Pose, SystemConfig, bistatic_replacement, compose,
                             differential_displacement, inverse, max_speed, phase_center, relative_pose,
                             wrap_angle)
from sasnav.micronav import pair_placements, relative_from_sigma, sigma_from_relative

coord = st.floats(-5, 5, allow_nan=False)
angle = st.floats(-3.0, 3.0, allow_nan=False)
poses = st.builds(Pose, coord, coord, angle)
small = st.builds(Pose, st.floats(-0.2, 0.2), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))


def close(a: Pose, b: Pose, tol=1e-9):
    return (abs(a.x - b.x) < tol and abs(a.y - b.y) < tol
            and abs(wrap_angle(a.theta - b.theta)) < tol)


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


@given(poses, poses, poses)
def test_compose_is_associative(a, b, c):
    assert close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-8)


@given(poses)
def test_inverse_cancels(a):
    assert close(compose(a, inverse(a)), IDENTITY)
    assert close(compose(inverse(a), a), IDENTITY)


@given(poses, poses)
def test_relative_pose_recomposes(a, b):
    assert close(compose(a, relative_pose(a, b)), b, 1e-8)


@given(poses)
def test_apply_matches_compose(a):
    pt = np.array([0.3, -1.2])
    moved = compose(a, Pose(*pt, 0.0))
    assert np.allclose(a.apply(pt), [moved.x, moved.y])


def test_pose_arithmetic_is_componentwise():
    a, b = Pose(1, 2, 0.1), Pose(0.5, -1, 0.2)
    assert close(a + b, Pose(1.5, 1, 0.3))
    assert close(a - b, Pose(0.5, 3, -0.1))
    assert close(-a, Pose(-1, -2, -0.1))


def test_phase_center_is_midpoint():
    pc = phase_center(Pose(0, 0, 0), Pose(1, 2, 0.3))
    assert (pc.x, pc.y, pc.theta) == pytest.approx((0.5, 1.0, 0.3))


def test_differential_displacement():
    d = differential_displacement(Pose(1, 1, 0.1), Pose(1.2, 0.9, 0.15))
    assert (d.x, d.y, d.theta) == pytest.approx((0.2, -0.1, 0.05))


@given(poses)
def test_replacement_geometry_keeps_phase_center(pca):
    cfg = SystemConfig()
    geo = PingGeometry.replacement(pca, cfg)
    assert close(geo.pca, pca, 1e-9)
    assert close(geo.localized().pca, IDENTITY, 1e-9)
    assert geo.N == cfg.N


def test_replacement_matches_rigid_array():
    cfg = SystemConfig()
    pca = Pose(1.0, 0.2, 0.03)
    geo = PingGeometry.replacement(pca, cfg)
    rigid = PingGeometry.rigid(geo.array_mid, cfg)
    assert close(rigid.tx, geo.tx) and all(close(a, b) for a, b in zip(rigid.rx_centers, geo.rx_centers))


def test_receiver_spacing():
    cfg = SystemConfig()
    geo = PingGeometry.replacement(IDENTITY, cfg)
    xs = np.array([r.x for r in geo.rx_centers])
    assert np.allclose(np.diff(xs), cfg.L)
    assert xs.mean() == pytest.approx(geo.array_mid.x)


def test_bistatic_replacement_rejects_asymmetric_offsets():
    with pytest.raises(MidpointNotZero):
        bistatic_replacement(IDENTITY, Pose(0.05, 0, 0), Pose(0.0, 0, 0))


def test_transformed_is_rigid():
    cfg = SystemConfig(N=3, K=1)
    geo = PingGeometry.replacement(Pose(0.1, 0.0, 0.0), cfg)
    moved = geo.transformed(Pose(0.3, -0.2, 0.4))
    d0 = [math.hypot(r.x - geo.tx.x, r.y - geo.tx.y) for r in geo.rx_centers]
    d1 = [math.hypot(r.x - moved.tx.x, r.y - moved.tx.y) for r in moved.rx_centers]
    assert np.allclose(d0, d1)


def test_max_speed():
    cfg = SystemConfig()
    assert max_speed(cfg, 10.0) == pytest.approx(16 * 0.05 * 1500 / 80)
    with pytest.raises(NonPositiveRange):
        max_speed(cfg, 0.0)


@pytest.mark.parametrize("kw", [dict(f0=-1), dict(bandwidth=0), dict(N=0), dict(K=16), dict(midrange=0)])
def test_system_config_validation(kw):
    with pytest.raises(ValidationError):
        SystemConfig(**kw)


@settings(max_examples=200)
@given(small, st.floats(0.05, 0.4))
def test_sigma_round_trip(sigma, advance):
    nominal = Pose(advance, 0.0, 0.0)
    assert close(sigma_from_relative(nominal, relative_from_sigma(nominal, sigma)), sigma, 1e-12)


@given(small)
def test_sigma_is_antisymmetric_in_pair_order(sigma):
    nominal = Pose(0.2, 0.0, 0.0)
    rel = relative_from_sigma(nominal, sigma)
    back = sigma_from_relative(inverse(nominal), inverse(rel))
    assert close(back, -sigma, 1e-12)


def test_pair_placements_split_evenly():
    p, q = pair_placements(Pose(0.2, 0, 0), Pose(0.02, -0.01, 0.004))
    assert close(p, Pose(-0.01, 0.005, -0.002))
    assert close(q, Pose(0.21, -0.005, 0.002))
    assert close(relative_from_sigma(Pose(0.2, 0, 0), IDENTITY), Pose(0.2, 0, 0))
