import numpy as np
import pytest
from _util import FAST, scalar_network, small_problem

from starris.channel import ChannelSet, IQIParams, Network, RISConfig
from starris.optimizer import (
    Problem,
    SolverSettings,
    ao_loop,
    apply_ms_mask,
    ccp_linearized_constraint,
    evaluate,
    initial_ris,
    initial_state,
    parametric_subproblem,
    project_theta,
    solve_p_step,
    solve_theta_step,
)
from starris.rates import EEParams, InfeasibleThresholds, mwee_objective, rate_report
from starris.surrogates import ExpansionPoint, PSurrogateForms
import starris.optimizer as opt


def test_settings_must_be_positive():
    with pytest.raises(ValueError):
        SolverSettings(max_outer=0)
    with pytest.raises(ValueError):
        SolverSettings(epsilon0=-0.1)
    assert SolverSettings(barrier={"mu_final": 1e-5}).barrier.mu_final == 1e-5


# -- projection, CCP tangent, masks ------------------------------------------


def test_project_examples():
    r, t = project_theta(3.0, 4.0)
    assert (r, t) == (pytest.approx(0.6), pytest.approx(0.8))
    z = np.exp(1j * np.pi / 3)
    r, t = project_theta(z, 0.0)
    assert r == pytest.approx(z, abs=1e-15) and t == 0


def test_project_zero_pair_keeps_previous():
    prev_r, prev_t = np.array([0.6, 0.3]), np.array([0.8j, 0.0])
    with pytest.warns(RuntimeWarning):
        r, t = project_theta(np.array([0.0, 2.0]), np.array([0.0, 0.0]), prev_r, prev_t)
    np.testing.assert_allclose(r, [0.6, 1.0])
    np.testing.assert_allclose(t, [0.8j, 0.0])


def test_project_preserves_phase():
    rng = np.random.default_rng(0)
    a = rng.normal(size=20) + 1j * rng.normal(size=20)
    b = rng.normal(size=20) + 1j * rng.normal(size=20)
    r, t = project_theta(a, b)
    np.testing.assert_allclose(np.abs(r) ** 2 + np.abs(t) ** 2, 1.0, atol=1e-14)
    np.testing.assert_allclose(np.angle(r), np.angle(a), atol=1e-12)
    np.testing.assert_allclose(np.angle(t), np.angle(b), atol=1e-12)


def test_ccp_tangent_examples():
    rng = np.random.default_rng(1)
    r, t = project_theta(rng.normal(size=5) + 1j * rng.normal(size=5), rng.normal(size=5) + 1j * rng.normal(size=5))
    np.testing.assert_allclose(ccp_linearized_constraint(r, t, r, t), 1.0, atol=1e-14)
    assert ccp_linearized_constraint(1.0, 0.0, 0.5, 0.0) == pytest.approx(0.0)
    for _ in range(100):
        a, b = rng.normal(size=4) * 2, rng.normal(size=4) * 2
        zeta = ccp_linearized_constraint(r[0], t[0], a[0] + 1j * a[1], b[0] + 1j * b[1])
        assert zeta <= abs(a[0] + 1j * a[1]) ** 2 + abs(b[0] + 1j * b[1]) ** 2 + 1e-12


def test_ms_mask():
    rng = np.random.default_rng(2)
    mask = rng.random((2, 6)) < 0.5
    ris = initial_ris(2, 6, "T_I", "MS", mask, rng)
    # perturb so that both coefficients are nonzero, as after an unconstrained step
    raw = ris.copy(theta_r=ris.theta_r + 0.3, theta_t=ris.theta_t + 0.2j)
    out = apply_ms_mask(raw)
    np.testing.assert_array_equal(out.theta_t[mask], 0.0)
    np.testing.assert_array_equal(out.theta_r[~mask], 0.0)
    assert np.count_nonzero(out.theta_r) + np.count_nonzero(out.theta_t) == 12
    np.testing.assert_allclose(np.abs(out.theta_r) ** 2 + np.abs(out.theta_t) ** 2, 1.0, atol=1e-15)
    as_es = RISConfig(out.theta_r, out.theta_t, "T_I", "ES")
    assert as_es.is_feasible()
    with pytest.raises(ValueError):
        apply_ms_mask(as_es)


def test_initial_ris_feasible():
    rng = np.random.default_rng(3)
    for kind in ("T_U", "T_I", "T_N"):
        for mode in ("ES", "MS"):
            mask = rng.random((2, 5)) < 0.5 if mode == "MS" else None
            assert initial_ris(2, 5, kind, mode, mask, rng).is_feasible()


# -- evaluation ---------------------------------------------------------------


def test_state_objective_matches_rate_model():
    problem, state = small_problem(4)
    rep = rate_report(problem.net.real_channels(state.ris), problem.net.C_n, state.covs, problem.ee)
    assert state.objective == pytest.approx(mwee_objective(rep, state.covs, problem.ee), abs=1e-8)


def test_infeasible_thresholds_reported():
    problem, state = small_problem(5)
    strict = Problem(problem.net, EEParams(r_th=1e3))
    with pytest.raises(InfeasibleThresholds):
        evaluate(strict, state.covs, state.ris)
    with pytest.raises(InfeasibleThresholds):
        solve_p_step(strict, state)


# -- covariance step ------------------------------------------------------------


def _symmetric_two_user():
    F = np.zeros((1, 2, 1, 1, 2), dtype=complex)
    F[0, 0, 0, 0] = [1.0, 0.3]
    F[0, 1, 0, 0] = [0.3, 1.0]
    ch = ChannelSet(np.zeros((1, 2, 1, 1, 1), dtype=complex), np.zeros((1, 1, 1, 2), dtype=complex), F,
                    np.zeros((1, 2, 1), dtype=bool))
    net = Network(ch, IQIParams.ideal(1, 2, 2, 1, 0.1))
    problem = Problem(net, EEParams(), rate_splitting=False, ris_fixed=True)
    ris = RISConfig(np.zeros((1, 1)), np.zeros((1, 1)), "T_U")
    return problem, initial_state(problem, ris)


def test_zero_lambda_equalizes_symmetric_users():
    problem, state = _symmetric_two_user()
    layout = problem.covariance_layout()
    forms = PSurrogateForms(ExpansionPoint(problem.net, state.covs, state.ris), layout)
    covs, _, _ = parametric_subproblem(problem, forms, 0.0)
    rp, _ = forms.evaluate(layout.to_vector(covs))
    assert rp[0, 0] == pytest.approx(rp[0, 1], abs=1e-3)


@pytest.mark.parametrize("rs", [False, True])
def test_large_lambda_switches_transmitter_off(rs):
    problem, state = small_problem(6, rate_splitting=rs)
    layout = problem.covariance_layout()
    forms = PSurrogateForms(ExpansionPoint(problem.net, state.covs, state.ris), layout)
    covs, _, _ = parametric_subproblem(problem, forms, 1e6)
    private = np.trace(covs.P_private, axis1=2, axis2=3).sum(axis=1)
    assert private.max() <= 1e-3 * problem.ee.P_max
    if not rs:
        assert covs.power().max() <= 1e-3 * problem.ee.P_max
    else:
        # the common stream must keep its surrogate rate nonnegative, so it
        # only shrinks across successive expansion points
        for _ in range(6):
            forms = PSurrogateForms(ExpansionPoint(problem.net, covs, state.ris), layout)
            covs, _, _ = parametric_subproblem(problem, forms, 1e6)
        assert covs.power().max() <= 1e-3 * problem.ee.P_max


def test_scalar_dinkelbach_fixed_point():
    net = scalar_network(1.0, noise_power=0.1)
    problem = Problem(net, EEParams(P_c=0.5, eta=1.0, P_max=4.0), rate_splitting=False, proper=True, ris_fixed=True)
    state = initial_state(problem, RISConfig(np.zeros((1, 1)), np.zeros((1, 1)), "T_U"))
    for _ in range(20):
        new = solve_p_step(problem, state)
        if new.objective - state.objective < 1e-12:
            break
        state = new
    lam, value = state.dinkelbach[-1] if state.dinkelbach else (state.objective, 0.0)
    rep = rate_report(net.real_channels(state.ris), net.C_n, state.covs)
    cost = problem.ee.P_c + problem.ee.eta * state.covs.power()[0]
    assert rep.r_p[0, 0] - state.objective * cost == pytest.approx(0.0, abs=1e-6)


def test_dinkelbach_lambda_nondecreasing():
    problem, state = small_problem(7, L=1, K=2)
    new = solve_p_step(problem, state)
    lams = [lam for lam, _ in new.dinkelbach]
    vals = [v for _, v in new.dinkelbach]
    assert len(lams) >= 2
    assert np.all(np.diff(lams) >= 0)
    assert np.all(np.diff(vals) <= 1e-9)
    assert new.objective >= state.objective - 1e-9


def test_warm_start_is_stationary():
    problem, state = small_problem(2, L=1, K=2)
    problem.ris_fixed = True
    state, _ = ao_loop(problem, state, SolverSettings(max_outer=30, outer_tol=1e-13))
    again = solve_p_step(problem, state)
    assert again.objective == pytest.approx(state.objective, abs=1e-8)


def test_p_step_feasibility():
    problem, state = small_problem(8)
    new = solve_p_step(problem, state)
    new.covs.check(problem.ee.P_max)
    assert np.all(new.covs.r_common_alloc >= 0)
    rep = rate_report(problem.net.real_channels(new.ris), problem.net.C_n, new.covs)
    assert np.all(new.covs.r_common_alloc.sum(axis=1) <= rep.r_c_cell + 1e-9)


# -- RIS step ---------------------------------------------------------------------


def test_acceptance_rejects_worse_candidate(monkeypatch):
    problem, state = small_problem(9, "T_I")
    state, _ = ao_loop(problem, state, FAST)
    bad = initial_ris(2, 4, "T_I", "ES", None, np.random.default_rng(123))
    assert evaluate(problem, state.covs, bad)[1] < state.objective
    monkeypatch.setattr(opt, "_theta_subproblem", lambda *a, **k: bad.copy())
    new, rec = solve_theta_step(problem, state, FAST)
    np.testing.assert_array_equal(new.ris.theta_r, state.ris.theta_r)
    np.testing.assert_array_equal(new.ris.theta_t, state.ris.theta_t)
    assert new.objective == state.objective
    assert rec.rejected == FAST.ccp_inner_iters and not rec.accepted


@pytest.mark.parametrize("kind", ["T_I", "T_N"])
@pytest.mark.parametrize("mode", ["ES", "MS"])
def test_accepted_iterates_feasible(kind, mode):
    problem, state = small_problem(10, kind, mode)
    seen = []
    for _ in range(2):
        state = solve_p_step(problem, state, FAST)
        state, rec = solve_theta_step(problem, state, FAST)
        seen.append(state.ris)
    for ris in seen:
        np.testing.assert_allclose(np.abs(ris.theta_r) ** 2 + np.abs(ris.theta_t) ** 2, 1.0, atol=1e-9)
        if kind == "T_N":
            assert np.all(np.abs(ris.theta_r + ris.theta_t) ** 2 <= 1 + 1e-9)
            assert np.all(np.abs(ris.theta_r - ris.theta_t) ** 2 <= 1 + 1e-9)
        if mode == "MS":
            assert not np.any(ris.theta_t[ris.reflect_only]) and not np.any(ris.theta_r[~ris.reflect_only])


def test_unconstrained_set_never_projects_or_rejects():
    problem, state = small_problem(11, "T_U")
    _, trace = ao_loop(problem, state, SolverSettings(max_outer=6, outer_tol=1e-12, ccp_inner_iters=3))
    theta = [r for r in trace if r.half_step == "theta"]
    assert theta and all(not r.projected and r.rejected == 0 for r in theta)


# -- outer loop -------------------------------------------------------------------


def test_zero_channels_stop_at_zero():
    problem, _ = small_problem(12)
    ch = problem.net.channels
    zero = ChannelSet(np.zeros_like(ch.G_user), np.zeros_like(ch.G_bs), np.zeros_like(ch.F), ch.transmit_side)
    problem = Problem(Network(zero, problem.net.iqi), problem.ee)
    state = initial_state(problem, initial_ris(2, 4, "T_I", rng=0))
    final, trace = ao_loop(problem, state, FAST)
    assert final.objective == 0.0
    assert final.outer_iter <= 2
    assert final.covs.power().max() == 0.0


def test_trace_nondecreasing_over_ten_iterations():
    problem, state = small_problem(1, "T_I", L=1, K=2)
    final, trace = ao_loop(problem, state, SolverSettings(max_outer=10, outer_tol=1e-15, ccp_inner_iters=3))
    obj = np.array([r.objective for r in trace])
    assert np.all(np.diff(obj) >= -1e-9)
    assert trace[-1].outer_iter == final.outer_iter
    assert final.objective == obj[-1]


def test_single_outer_iteration():
    problem, state = small_problem(13)
    seen = []
    final, trace = ao_loop(problem, state, SolverSettings(max_outer=1, ccp_inner_iters=2), on_record=seen.append)
    assert [r.half_step for r in trace] == ["init", "P", "theta"]
    assert seen == trace
    assert final.outer_iter == 1


def test_ris_fixed_skips_theta_step():
    problem, state = small_problem(14)
    problem.ris_fixed = True
    final, trace = ao_loop(problem, state, SolverSettings(max_outer=2))
    assert all(r.half_step != "theta" for r in trace)
    np.testing.assert_array_equal(final.ris.theta_r, state.ris.theta_r)
