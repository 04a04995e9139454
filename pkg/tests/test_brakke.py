import numpy as np
import pytest

from vpmf.allen_cahn_solver import PhaseState, SolverParams, initial_state, k_of, rhs, run, step
from vpmf.brakke import (
    BrakkeAccumulator,
    MissingStepsError,
    TestFunction,
    bump,
    check_identity,
    check_weak_inequality,
    lambda_l2_report,
)
from vpmf.diagnostics import energy_density
from vpmf.grid_fields import TorusGrid
from vpmf.initial_data import build_phi0, profile_from_field
from vpmf.sweep import SCENARIOS

EPS = 0.04


@pytest.fixture(scope="module")
def ball_run():
    grid = TorusGrid(2, 64)
    params = SolverParams.auto(EPS, 0.95, 0.004, grid)
    profile = build_phi0(SCENARIOS["ball"], EPS, grid)
    states = []
    run(params, profile, [states.append])
    return params, states


def test_bump_profile():
    assert bump(0.0) == 1.0 and bump(1.0) == 0.0 and bump(2.0) == 0.0
    assert bump(0.5) == pytest.approx(0.5625)


def test_test_function_invariants():
    grid = TorusGrid(2, 64)
    tf = TestFunction((0.9, 0.1), 0.2, 0.0, 0.01, "hat")
    val = tf.value(grid, 0.005)
    assert val.min() >= 0 and val.max() <= tf.sup_norm
    assert np.all(val[grid.distance((0.9, 0.1)) >= 0.2] == 0)
    assert tf.eta(0.0) == tf.eta(0.01) == 0.0 and tf.eta(0.005) == 1.0
    d = 1e-7
    assert tf.eta_dot(0.003) == pytest.approx((tf.eta(0.003 + d) - tf.eta(0.003 - d)) / (2 * d), rel=1e-6)
    # closed-form gradient agrees with centred differences at second order away
    # from the support edge, where the second derivative of the bump jumps
    errs = []
    for n in (64, 128, 256):
        g = TorusGrid(2, n)
        inner = g.distance(tf.x0) < 0.9 * tf.r
        errs.append(np.abs(g.gradient(tf.spatial(g)) - tf.spatial_gradient(g))[:, inner].max())
    assert errs[1] / errs[0] == pytest.approx(0.25, abs=0.05)
    assert errs[2] / errs[1] == pytest.approx(0.25, abs=0.05)
    with pytest.raises(ValueError):
        TestFunction((0.5, 0.5), 0.6, 0, 1)
    with pytest.raises(ValueError):
        TestFunction((0.5, 0.5), 0.1, 1, 0)
    with pytest.raises(ValueError):
        TestFunction((0.5, 0.5), 0.1, 0, 1, "box")


def test_pure_phase_has_vanishing_terms():
    grid = TorusGrid(2, 32)
    params = SolverParams.auto(0.08, 0.5, 0.001, grid, volume_constraint=False)
    profile = profile_from_field(np.ones(grid.shape), 0.08, grid)
    states = []
    run(params, profile, [states.append])
    tf = TestFunction((0.5, 0.5), 0.3, 0.0, 0.001)
    rep = check_identity(states, tf, params)
    assert rep.lhs == 0 and all(v == 0 for v in rep.terms.values()) and rep.residual == 0
    margin, c_emp = check_weak_inequality(states, tf, params, C=2.0)
    assert c_emp == 0.0
    assert margin == pytest.approx(0.3 * 2.0 * (1 + 0.001))


def test_semi_discrete_identity_is_exact(ball_run):
    """The integrands sum to d/dt of sum(phi_test * e) along phi_t, to finite-difference accuracy."""
    params, states = ball_run
    grid, eps = params.grid, params.epsilon
    s = states[40]
    tf = TestFunction((0.75, 0.5), 0.2, 0.0, 0.004, "hat")
    phi_t = rhs(s.phi, s.lam, params)

    def weighted_energy(tau):
        return grid.integrate(tf.value(grid, s.t + tau) * energy_density(grid, s.phi + tau * phi_t, eps))

    d = 1e-7
    numeric = (weighted_energy(d) - weighted_energy(-d)) / (2 * d)
    acc = BrakkeAccumulator([tf], params)
    led = acc._ledgers[0]
    led._accumulate(s, 1.0, acc._fields(s))
    assert sum(led.sums.values()) == pytest.approx(numeric, rel=1e-6)


def test_residual_is_first_order_in_dt():
    grid = TorusGrid(2, 64)
    profile = build_phi0(SCENARIOS["ellipse"], EPS, grid)
    base = SolverParams.auto(EPS, 0.95, 0.004, grid)
    tests = [TestFunction((0.8, 0.5), r, 0.0, 0.004) for r in (0.1, 0.2, 0.4)]
    res = []
    for dt in (base.dt, base.dt / 2):
        acc = BrakkeAccumulator(tests, base.with_dt(dt))
        run(base.with_dt(dt), profile, [acc])
        res.append(np.array([r.normalized_residual for r in acc.reports()]))
    assert np.all(res[0] <= 0.05)
    assert np.all(res[1] <= 0.5 * 1.2 * res[0])


def test_terms_have_the_right_signs_and_lambda_term_requadrates(ball_run):
    params, states = ball_run
    grid, eps = params.grid, params.epsilon
    tf = TestFunction((0.75, 0.5), 0.1, 0.0, 0.004)
    rep = check_identity(states, tf, params)
    assert rep.terms["term_curv"] <= 0 and rep.terms["term_vel"] <= 0
    chi = tf.spatial(grid)
    independent = 0.0
    for a, b in zip(states, states[1:]):
        w = 0.5 * (1 - a.phi**2) ** 2
        independent += (b.t - a.t) * a.lam**2 * np.sum(chi * w) * grid.h**2 / eps
    assert rep.terms["term_lambda"] == pytest.approx(independent, rel=1e-12)
    js = rep.to_json()
    assert set(js) >= {"test", "terms", "residual", "normalized_residual", "C_emp", "weak_margin"}
    assert js["test"]["r"] == 0.1


def test_far_test_function_sees_nothing(ball_run):
    params, states = ball_run
    # ball of radius 0.25 at the centre; this support stays > 10 eps from the interface
    tf = TestFunction((0.0, 0.0), 0.1, 0.0, 0.004)
    rep = check_identity(states, tf, params)
    assert abs(rep.lhs) <= 1e-6 and all(abs(v) <= 1e-6 for v in rep.terms.values())


def test_weak_margin_is_identity_slack(ball_run):
    params, states = ball_run
    tf = TestFunction((0.75, 0.5), 0.2, 0.0, 0.004)
    rep = check_identity(states, tf, params)
    C = 2 * rep.C_emp
    margin, c_emp = check_weak_inequality(states, tf, params, C)
    assert c_emp == rep.C_emp
    assert margin == pytest.approx(rep.terms["term_lambda"] - rep.residual, rel=1e-9)


def test_missing_steps_are_rejected(ball_run):
    params, states = ball_run
    tf = TestFunction((0.75, 0.5), 0.2, 0.0, 0.004)
    with pytest.raises(MissingStepsError, match="jumps"):
        check_identity(states[::2], tf, params)
    with pytest.raises(MissingStepsError, match="covers"):
        check_identity(states[: len(states) // 2], tf, params)
    with pytest.raises(MissingStepsError):
        check_identity([], tf, params)


def test_window_inside_trajectory_is_snapped(ball_run):
    params, states = ball_run
    tf = TestFunction((0.75, 0.5), 0.2, 0.001, 0.003)
    rep = check_identity(states, tf, params)
    assert abs(rep.t_start - 0.001) <= params.dt and abs(rep.t_end - 0.003) <= params.dt
    assert rep.normalized_residual <= 0.05


def test_short_hat_window_converges_at_first_order():
    grid = TorusGrid(2, 64)
    base = SolverParams.auto(EPS, 0.95, 0.004, grid)
    profile = build_phi0(SCENARIOS["ball"], EPS, grid)
    tf = TestFunction((0.75, 0.5), 0.2, 0.001, 0.003, "hat")
    res = []
    for k in (2, 4):
        states = []
        run(base.with_dt(base.dt / k), profile, [states.append])
        res.append(abs(check_identity(states, tf, base.with_dt(base.dt / k)).residual))
    assert res[1] <= 0.6 * res[0]


def test_lambda_l2_report(ball_run):
    params, states = ball_run
    assert states[0].lam == 0.0
    total, ratio = lambda_l2_report(states, 0.0, 0.004)
    manual = sum((b.t - a.t) * a.lam**2 for a, b in zip(states, states[1:]))
    assert total == pytest.approx(manual, rel=1e-12)
    assert ratio == pytest.approx(total / 1.004)
    assert lambda_l2_report(states, 0.0, 0.0)[0] == 0.0
