"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import json
import pathlib

import numpy as np
import pytest
from _util import scalar_network, small_problem
from scipy.optimize import brentq

from starris.channel import ChannelSet, IQIParams, Network, RISConfig, ScenarioConfig, generate_scenario
from starris.experiments import ExperimentConfig, run_sweep
from starris.optimizer import Problem, SolverSettings, ao_loop, initial_state, solve_p_step, solve_theta_step
from starris.rates import CovarianceSet, EEParams, common_rate_bound, energy_efficiency, private_rate
from starris.surrogates import (
    ExpansionPoint,
    surrogate_common_rate_P,
    surrogate_common_rate_theta,
    surrogate_private_rate_P,
    surrogate_private_rate_theta,
)
from starris.wl_algebra import proper_covariance

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"
COMBOS = [(k, m) for k in ("T_U", "T_I", "T_N") for m in ("ES", "MS")]


@pytest.mark.slow
def test_criterion_1_monotone_convergence(criterion):
    settings = SolverSettings(max_outer=8, ccp_inner_iters=3)
    worst, longest, bad = np.inf, 0, []
    for seed in range(100):
        kind, mode = COMBOS[seed % len(COMBOS)]
        problem, state = small_problem(seed, kind, mode)
        final, trace = ao_loop(problem, state, settings)
        steps = np.diff([r.objective for r in trace])
        worst = min(worst, steps.min())
        longest = max(longest, final.outer_iter)
        if steps.min() < -1e-9 or final.outer_iter > settings.max_outer:
            bad.append(seed)
    ok = not bad
    criterion(1, ok, f"100 runs, worst half-step change {worst:.2e}, max outer iters {longest}, bad seeds {bad}")
    assert ok


def _surrogate_setup():
    cfg = ScenarioConfig(L=2, K=2, M=2, N_RIS=4, transmit_fraction=0.5, direct_extra_loss_db=10.0)
    _, ch = generate_scenario(3, cfg)
    net = Network(ch, IQIParams.from_config(cfg))
    rng = np.random.default_rng(30)
    return net, rng


def _rand_covs(rng):
    covs = CovarianceSet.zeros(2, 2, 4)
    for l in range(2):
        share = rng.dirichlet(np.ones(3)) * rng.uniform(0.05, 1.0)
        for j in range(3):
            A = rng.normal(size=(4, 4))
            P = A @ A.T * share[j] / np.trace(A @ A.T)
            if j < 2:
                covs.P_private[l, j] = P
            else:
                covs.P_common[l] = P
    return covs


def _rand_ris(rng):
    a = rng.random((2, 4))
    ph = rng.uniform(0, 2 * np.pi, (2, 2, 4))
    return RISConfig(np.sqrt(a) * np.exp(1j * ph[0]), np.sqrt(1 - a) * np.exp(1j * ph[1]), "T_I")


def test_criterion_2_surrogates(criterion):
    net, rng = _surrogate_setup()
    exp = ExpansionPoint(net, _rand_covs(rng), _rand_ris(rng))
    users = [(l, k) for l in range(2) for k in range(2)]
    cases = {
        "private/P": (surrogate_private_rate_P, private_rate, "P"),
        "common/P": (surrogate_common_rate_P, common_rate_bound, "P"),
        "private/theta": (surrogate_private_rate_theta, private_rate, "theta"),
        "common/theta": (surrogate_common_rate_theta, common_rate_bound, "theta"),
    }
    samples_P = [_rand_covs(rng) for _ in range(200)]
    samples_theta = [_rand_ris(rng) for _ in range(200)]
    dirs_P = [_rand_covs(rng) for _ in range(3)]
    dirs_theta = [_rand_ris(rng) for _ in range(3)]
    h = 1e-6
    results = {}
    for name, (sur, exact, kind) in cases.items():
        def both(point):
            if kind == "P":
                Hr, covs = exp.Hr, point
            else:
                Hr, covs = net.real_channels(point), exp.covs
            return [(sur(exp, point, l, k), exact(l, k, Hr, net.C_n, covs)) for l, k in users]

        at = exp.covs if kind == "P" else exp.ris
        tight = max(abs(s - e) for s, e in both(at))
        slack = min(e - s for p in (samples_P if kind == "P" else samples_theta) for s, e in both(p))
        grad_err = 0.0
        for d in dirs_P if kind == "P" else dirs_theta:
            if kind == "P":
                step = lambda t: CovarianceSet(exp.covs.P_private + t * d.P_private,
                                               exp.covs.P_common + t * d.P_common, np.zeros((2, 2)))
            else:
                step = lambda t: RISConfig(exp.ris.theta_r + t * d.theta_r, exp.ris.theta_t + t * d.theta_t, "T_U")
            plus, minus = both(step(h)), both(step(-h))
            for (sp, ep), (sm, em) in zip(plus, minus):
                gs, ge = (sp - sm) / (2 * h), (ep - em) / (2 * h)
                grad_err = max(grad_err, abs(gs - ge) / max(abs(ge), 1e-3))
        results[name] = (tight, slack, grad_err)
    ok = all(t <= 1e-8 and s >= -1e-7 and g <= 1e-3 for t, s, g in results.values())
    detail = "; ".join(f"{n}: tight {t:.1e}, min slack {s:.1e}, grad rel err {g:.1e}" for n, (t, s, g) in results.items())
    criterion(2, ok, detail)
    assert ok


def _ee_oracle(a, P_c, eta, P_max):
    """Maximizer of log2(1 + a q) / (P_c + eta q) over q in [0, P_max]."""
    f = lambda q: a * (P_c + eta * q) / ((1 + a * q) * np.log(2)) - eta * np.log2(1 + a * q)
    q = P_max if f(P_max) >= 0 else brentq(f, 0.0, P_max, xtol=1e-15)
    return np.log2(1 + a * q) / (P_c + eta * q), q


def test_criterion_3_dinkelbach_oracle(criterion):
    cases = [(1.0, 0.1, 0.5, 1.0, 4.0), (0.3, 1.0, 1.0, 2.5, 1.0), (2.0, 0.01, 0.2, 1.5, 10.0), (0.7, 0.05, 2.0, 3.0, 2.0)]
    worst_ee, worst_res = 0.0, 0.0
    for h, noise, P_c, eta, P_max in cases:
        net = scalar_network(h, noise)
        problem = Problem(net, EEParams(P_c=P_c, eta=eta, P_max=P_max), rate_splitting=False, proper=True,
                          ris_fixed=True)
        state = solve_p_step(problem, initial_state(problem, RISConfig(np.zeros((1, 1)), np.zeros((1, 1)), "T_U")))
        target, _ = _ee_oracle(abs(h) ** 2 / noise, P_c, eta, P_max)
        lam, value = state.dinkelbach[-1]
        q = state.covs.power()[0]
        rate = np.log2(1 + abs(h) ** 2 * q / noise)
        worst_ee = max(worst_ee, abs(state.objective - target))
        worst_res = max(worst_res, abs(value), abs(rate - lam * (P_c + eta * q)))
    ok = worst_ee <= 1e-5 and worst_res <= 1e-6
    criterion(3, ok, f"max |EE - analytic| {worst_ee:.1e}, max fixed-point residual {worst_res:.1e}")
    assert ok


def test_criterion_4_rate_convention(criterion):
    rng = np.random.default_rng(40)
    worst = 0.0
    for _ in range(50):
        nt, nr = rng.integers(1, 5, size=2)
        noise = 10 ** rng.uniform(-2, 1)
        H = rng.normal(size=(nr, nt)) + 1j * rng.normal(size=(nr, nt))
        G = rng.normal(size=(nt, nt)) + 1j * rng.normal(size=(nt, nt))
        Q = G @ G.conj().T * rng.uniform(0.1, 3.0) / nt
        ch = ChannelSet(np.zeros((1, 1, 1, nr, 1), complex), np.zeros((1, 1, 1, nt), complex),
                        H[None, None, None], np.zeros((1, 1, 1), bool))
        net = Network(ch, IQIParams.ideal(1, 1, nt, nr, noise))
        covs = CovarianceSet.zeros(1, 1, 2 * nt)
        covs.P_private[0, 0] = proper_covariance(Q)
        Hr = net.real_channels(RISConfig(np.zeros((1, 1)), np.zeros((1, 1)), "T_U"))
        real = private_rate(0, 0, Hr, net.C_n, covs)
        cplx = np.linalg.slogdet(np.eye(nr) + H @ Q @ H.conj().T / noise)[1] / np.log(2)
        worst = max(worst, abs(real - cplx))
    ok = worst <= 1e-9
    criterion(4, ok, f"50 instances, max |real - complex| {worst:.1e}")
    assert ok


def test_criterion_5_projection_feasibility(criterion):
    settings = SolverSettings(ccp_inner_iters=3)
    worst_budget, worst_phase, accepted = 0.0, 0.0, 0
    for seed in range(12):
        kind, mode = [(k, m) for k in ("T_I", "T_N") for m in ("ES", "MS")][seed % 4]
        problem, state = small_problem(100 + seed, kind, mode)
        for _ in range(3):
            state = solve_p_step(problem, state, settings)
            state, rec = solve_theta_step(problem, state, settings)
            if not rec.accepted:
                continue
            accepted += 1
            r, t = state.ris.theta_r, state.ris.theta_t
            worst_budget = max(worst_budget, np.abs(np.abs(r) ** 2 + np.abs(t) ** 2 - 1).max())
            if kind == "T_N":
                worst_phase = max(worst_phase, (np.abs(r + t) ** 2).max() - 1, (np.abs(r - t) ** 2).max() - 1)
    ok = accepted > 0 and worst_budget <= 1e-9 and worst_phase <= 1e-9
    criterion(5, ok, f"{accepted} accepted iterates, max budget error {worst_budget:.1e}, "
                     f"max |r+-t|^2 excess {worst_phase:.1e}")
    assert ok


def _paired(base, **changes):
    d = json.loads((CONFIGS / base).read_text())
    d.update(changes)
    rows = run_sweep(ExperimentConfig.from_dict(d))
    assert not any(r.failed for r in rows)
    return np.array([r.objective for r in rows])


@pytest.mark.slow
def test_criterion_6_fig2_trends(criterion):
    rs = _paired("fig2.json")
    tin = _paired("fig2.json", scheme="TIN")
    rand = _paired("fig2.json", ris_mode="RandomRIS")
    none = _paired("fig2.json", ris_mode="NoRIS")
    unaware = _paired("fig2.json", ris_mode="RandomRIS", signaling="ProperIGSOff")
    gaps = {
        "RS-TIN": np.mean(rs - tin),
        "TIN-random": np.mean(tin - rand),
        "random-noRIS": np.mean(rand - none),
        "IGS-unaware": np.mean(rs - unaware),
    }
    ok = all(g >= 0 for g in gaps.values())
    means = f"means RS {rs.mean():.4f}, TIN {tin.mean():.4f}, random {rand.mean():.4f}, " \
            f"noRIS {none.mean():.4f}, unaware {unaware.mean():.4f}"
    criterion(6, ok, means + "; paired gaps " + ", ".join(f"{k} {v:.4f}" for k, v in gaps.items()))
    assert ok


@pytest.mark.slow
def test_criterion_7_fig3_trends(criterion):
    es = _paired("fig3.json")
    ms = _paired("fig3.json", ris_mode="MS")
    regular = _paired("fig3.json", ris_mode="RegularRIS")
    none = _paired("fig3.json", ris_mode="NoRIS")
    gaps = {"ES-MS": np.mean(es - ms), "MS-regular": np.mean(ms - regular), "regular-noRIS": np.mean(regular - none)}
    rel = (es.mean() - ms.mean()) / es.mean()
    ok = all(g >= 0 for g in gaps.values()) and rel <= 0.10
    means = f"means ES {es.mean():.4f}, MS {ms.mean():.4f}, regular {regular.mean():.4f}, noRIS {none.mean():.4f}"
    criterion(7, ok, means + "; paired gaps " + ", ".join(f"{k} {v:.4f}" for k, v in gaps.items())
              + f"; MS {100 * rel:.1f}% below ES")
    assert ok


def test_criterion_8_ee_arithmetic(criterion):
    zero = CovarianceSet.zeros(1, 1, 2)
    e1 = energy_efficiency(0, 0, 1.0, zero, EEParams(P_c=1.0, eta=1.0))
    base = energy_efficiency(0, 0, 1.0, zero, EEParams(P_c=1.0))
    doubled = energy_efficiency(0, 0, 1.0, zero, EEParams(P_c=2.0))
    covs = CovarianceSet.zeros(1, 4, 2)
    covs.P_private[0, 0] = np.diag([0.1, 0.1])
    covs.P_common[0] = np.diag([0.2, 0.2])
    e3 = energy_efficiency(0, 0, 2.0, covs, EEParams(P_c=0.1, eta=2.0))
    checks = [e1 == 1.0, doubled == base / 2, abs(e3 - 2 / 0.7) <= 2e-16 * e3]
    ok = all(checks)
    criterion(8, ok, f"e(r=1, Tr=0) = {e1!r}, doubled P_c ratio {doubled / base!r}, e(2; 0.1, 2, 0.2, 0.4, K=4) = "
                     f"{e3!r} vs 2/0.7 = {2 / 0.7!r}")
    assert ok
