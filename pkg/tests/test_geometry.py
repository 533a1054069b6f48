import math

import numpy as np
import pytest

from crossdrive.geometry import Path, PathBuilder, ReferenceTrajectory


def test_straight_path_length_and_tangent():
    p = PathBuilder(0.0, 0.0, 0.0).line(10.0).build()
    assert p.length == pytest.approx(10.0)
    np.testing.assert_allclose(p.tangents, np.tile([1.0, 0.0], (len(p.points), 1)), atol=1e-12)


def test_arc_path_length_and_heading():
    b = PathBuilder(0.0, 0.0, 0.0).arc(9.0, math.pi / 2)
    assert b.heading == pytest.approx(math.pi / 2)
    p = b.build()
    # Polyline chords underestimate the true arc length slightly.
    assert p.length == pytest.approx(9.0 * math.pi / 2, rel=1e-3)
    # Quarter left turn from the origin heading east ends at (9, 9).
    assert p.points[-1, 0] == pytest.approx(9.0, abs=1e-6)
    assert p.points[-1, 1] == pytest.approx(9.0, abs=1e-6)


def test_right_arc_mirrors_left():
    left = PathBuilder(0.0, 0.0, 0.0).arc(5.0, math.pi / 2).build()
    right = PathBuilder(0.0, 0.0, 0.0).arc(5.0, -math.pi / 2).build()
    np.testing.assert_allclose(right.points[:, 0], left.points[:, 0], atol=1e-9)
    np.testing.assert_allclose(right.points[:, 1], -left.points[:, 1], atol=1e-9)


def test_sample_at_midpoint():
    p = PathBuilder(2.0, -35.0, math.pi / 2).line(20.0).build()
    x, y, heading, tx, ty = p.sample_at(10.0)
    assert x == pytest.approx(2.0)
    assert y == pytest.approx(-25.0)
    assert heading == pytest.approx(math.pi / 2)
    assert (tx, ty) == (pytest.approx(0.0, abs=1e-12), pytest.approx(1.0))


def test_sample_at_clamps():
    p = PathBuilder(0.0, 0.0, 0.0).line(5.0).build()
    assert p.sample_at(-3.0)[0] == pytest.approx(0.0)
    assert p.sample_at(99.0)[0] == pytest.approx(5.0)


def test_project_on_and_off_path():
    p = PathBuilder(0.0, 0.0, 0.0).line(10.0).build()
    s, d = p.project(4.0, 0.0)
    assert s == pytest.approx(4.0)
    assert d == pytest.approx(0.0, abs=1e-12)
    s, d = p.project(4.0, 2.5)
    assert s == pytest.approx(4.0)
    assert d == pytest.approx(2.5)
    s, d = p.project(-3.0, 1.0)
    assert s == pytest.approx(0.0)
    assert d == pytest.approx(math.hypot(3.0, 1.0))


def test_project_round_trip_property():
    p = PathBuilder(0.0, 0.0, 0.3).line(12.0).arc(8.0, 1.1).line(7.0).build()
    rng = np.random.default_rng(5)
    for s_true in rng.uniform(0.5, p.length - 0.5, size=60):
        x, y, _, tx, ty = p.sample_at(float(s_true))
        # Offset laterally, well inside the arc radius.
        off = float(rng.uniform(-1.5, 1.5))
        s_hat, d_hat = p.project(x - ty * off, y + tx * off)
        assert s_hat == pytest.approx(float(s_true), abs=0.08)
        assert d_hat == pytest.approx(abs(off), abs=0.05)


def test_path_rejects_degenerate_input():
    with pytest.raises(ValueError):
        Path(np.array([[0.0, 0.0]]))
    with pytest.raises(ValueError):
        Path(np.array([[0.0, 0.0], [0.0, 0.0]]))


def test_resample_spacing_uniform():
    p = Path.from_waypoints(np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]]), spacing=0.5)
    gaps = np.diff(p.s)
    assert np.allclose(gaps, gaps[0])
    assert gaps[0] == pytest.approx(0.5, abs=0.05)
    assert p.length == pytest.approx(7.0)


def test_window_integrates_speed_profile():
    traj = ReferenceTrajectory(PathBuilder(0.0, 0.0, 0.0).line(60.0).build(), nominal_speed=10.0)
    win = traj.window(0.0, 5, 0.1, np.full(5, 10.0))
    np.testing.assert_allclose(win.x, [0.0, 1.0, 2.0, 3.0, 4.0], atol=1e-9)
    np.testing.assert_allclose(win.v_ref, 10.0)

    # A decaying profile must slow the positions themselves down.
    prof = np.array([10.0, 5.0, 2.5, 0.0, 0.0])
    win2 = traj.window(0.0, 5, 0.1, prof)
    np.testing.assert_allclose(win2.x, [0.0, 1.0, 1.5, 1.75, 1.75], atol=1e-9)
    np.testing.assert_allclose(win2.v_ref, prof)


def test_window_saturates_at_path_end():
    traj = ReferenceTrajectory(PathBuilder(0.0, 0.0, 0.0).line(3.0).build(), nominal_speed=10.0)
    win = traj.window(2.0, 4, 0.1, np.full(4, 10.0))
    np.testing.assert_allclose(win.x, [2.0, 3.0, 3.0, 3.0], atol=1e-9)


def test_window_rejects_profile_mismatch():
    traj = ReferenceTrajectory(PathBuilder(0.0, 0.0, 0.0).line(10.0).build(), nominal_speed=10.0)
    with pytest.raises(ValueError):
        traj.window(0.0, 4, 0.1, np.ones(3))


def test_reference_trajectory_validation():
    p = PathBuilder(0.0, 0.0, 0.0).line(10.0).build()
    with pytest.raises(ValueError):
        ReferenceTrajectory(p, nominal_speed=0.0)
    traj = ReferenceTrajectory(p, nominal_speed=10.0)
    assert traj.start_state() == (pytest.approx(0.0), pytest.approx(0.0), pytest.approx(0.0))
    np.testing.assert_allclose(traj.constant_profile(4), 10.0)
    np.testing.assert_allclose(traj.constant_profile(4, 6.0), 6.0)
