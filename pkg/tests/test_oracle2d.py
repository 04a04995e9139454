import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vpmf.grid_fields import TorusGrid
from vpmf.initial_data import Region, build_phi0
from vpmf.oracle2d import (
    R_MIN,
    CircleSystem,
    OracleTrajectory,
    PenalizedMultiplier,
    StepSizeError,
    circle_rhs,
    compare_phase_field,
    evolve_circles,
    fitted_radii,
    penalized_circle_rhs,
)
from vpmf.sweep import SCENARIOS


def test_hand_values():
    np.testing.assert_allclose(circle_rhs([0.3]), [0.0], atol=1e-15)
    np.testing.assert_allclose(circle_rhs([0.2, 0.2]), [0.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(circle_rhs([0.1, 0.2]), [-10 / 3, 5 / 3], rtol=1e-14)
    with pytest.raises(ValueError):
        circle_rhs([0.1, 0.0])


@given(arrays(float, st.integers(1, 6), elements=st.floats(0.01, 0.5)))
def test_area_rate_vanishes(r):
    assert abs(np.dot(r, circle_rhs(r))) <= 1e-14


def test_single_circle_is_fixed_point():
    traj = evolve_circles(CircleSystem((0.25,)), 0.1, 50.0)
    assert np.abs(traj.radii - 0.25).max() <= 1e-12
    assert traj.extinctions == []


def test_smaller_circle_goes_extinct_with_area_conserved():
    coarse = evolve_circles(CircleSystem((0.1, 0.2)), 1e-3, 0.02)
    fine = evolve_circles(CircleSystem((0.1, 0.2)), 5e-4, 0.02)
    (idx, t_ext), = coarse.extinctions
    assert idx == 0 and 0 < t_ext < 0.02
    assert fine.extinctions[0][1] == pytest.approx(t_ext, abs=1e-4)
    area = np.pi * np.sum(coarse.radii**2, axis=1)
    before = coarse.times < t_ext
    assert np.abs(area[before] - area[0]).max() <= 1e-8
    # perimeter never increases
    length = 2 * np.pi * np.sum(coarse.radii, axis=1)
    assert np.all(np.diff(length) <= 1e-12)


def test_near_symmetric_pair_separates():
    traj = evolve_circles(CircleSystem((0.15, 0.1501)), 1e-3, 0.01)
    assert circle_rhs([0.15, 0.1501])[0] < 0
    assert np.all(np.diff(traj.radii[:, 0]) < 0)
    assert np.all(np.diff(traj.radii[:, 1]) > 0)


def test_step_size_rule_can_fail_loudly():
    with pytest.raises(StepSizeError):
        evolve_circles(CircleSystem((0.1, 0.2)), 1.0, 1.0, max_halvings=1)


def test_penalized_reduction():
    r0 = np.array([0.25])
    np.testing.assert_allclose(penalized_circle_rhs(r0, r0, 0.02, 0.95), [-4.0])
    traj = evolve_circles(CircleSystem((0.25,)), 1e-2, 2.0, multiplier=PenalizedMultiplier(r0, 0.02, 0.95))
    r_eq = traj.radii[-1, 0]
    lam = 4 / 3 * np.pi * (0.25**2 - r_eq**2) / 0.02**0.95
    assert lam == pytest.approx(1 / r_eq, rel=1e-6)


def test_trajectory_csv_and_interpolation():
    traj = OracleTrajectory(np.array([0.0, 1.0]), np.array([[0.2, 0.1], [0.3, 0.0]]))
    assert traj.at(0.5) == pytest.approx([0.25, 0.05])
    lines = traj.to_csv().splitlines()
    assert lines[0] == "t,r_1,r_2" and lines[2] == "1.0,0.3,0.0"


def test_circle_system_validation():
    with pytest.raises(ValueError):
        CircleSystem((0.1, -0.1))
    with pytest.raises(ValueError):
        CircleSystem.from_region(SCENARIOS["ellipse"])


def test_compare_on_initial_data():
    grid = TorusGrid(2, 128)
    region = SCENARIOS["two_balls"]
    system = CircleSystem.from_region(region)
    oracle = evolve_circles(system, 1e-3, 0.0)
    phi = build_phi0(region, 0.02, grid).phi0
    result = compare_phase_field([(0.0, phi, grid)], oracle, system.centers)
    assert result.max_error <= grid.h
    assert result.to_csv().splitlines()[0] == "t,r_fit_1,r_fit_2,r_ode_1,r_ode_2,error"


def test_loop_count_mismatch_is_an_event():
    grid = TorusGrid(2, 128)
    region = SCENARIOS["two_balls"]
    system = CircleSystem.from_region(region)
    oracle = evolve_circles(system, 1e-3, 0.002)
    only_big = build_phi0(Region.ball((0.75, 0.75), 0.2), 0.02, grid).phi0
    result = compare_phase_field([(0.001, only_big, grid)], oracle, system.centers)
    assert result.rows == []
    assert result.events[0]["event"] == "loop_count_mismatch" and result.events[0]["loops"] == 1


def test_fitted_radii_assigns_by_centre():
    grid = TorusGrid(2, 128)
    phi = build_phi0(SCENARIOS["two_balls"], 0.02, grid).phi0
    fits, n = fitted_radii(phi, grid, ((0.75, 0.75), (0.25, 0.25)))
    assert n == 2 and fits == pytest.approx([0.2, 0.12], abs=grid.h / 5)
    assert R_MIN == 1e-4
