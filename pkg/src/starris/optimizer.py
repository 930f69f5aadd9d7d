"""Alternating MM optimization of the minimum weighted energy efficiency.

The covariance step maximizes the surrogate max-min EE with the generalized
Dinkelbach method; the RIS step maximizes it over the coefficients, with a
linearized unit-modulus constraint, projection and a monotone acceptance
rule for the non-convex feasibility sets.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .barrier import (
    AffineLMI,
    BarrierSettings,
    LinearBlock,
    NumericalFailure,
    QuadraticBlock,
    maximize,
)
from .channel import Network, RISConfig, ThetaLayout
from .rates import (
    CovarianceSet,
    EEParams,
    InfeasibleThresholds,
    allocate_common_rate,
    rate_report,
    user_costs,
)
from .surrogates import CovarianceLayout, ExpansionPoint, PSurrogateForms, theta_quadratics

log = logging.getLogger(__name__)

__all__ = [
    "InfeasibleThresholds",
    "NumericalFailure",
    "OptState",
    "Problem",
    "SolverSettings",
    "TraceRecord",
    "ao_loop",
    "apply_ms_mask",
    "ccp_linearized_constraint",
    "evaluate",
    "initial_covariances",
    "initial_ris",
    "initial_state",
    "parametric_subproblem",
    "project_theta",
    "solve_p_step",
    "solve_theta_step",
]


@dataclass
class SolverSettings:
    outer_tol: float = 1e-4
    max_outer: int = 50
    dinkelbach_tol: float = 1e-6
    max_dinkelbach: int = 30
    ccp_inner_iters: int = 10
    epsilon0: float = 0.1
    epsilon_decay: float = 0.5
    interior_mix: float = 1e-2
    barrier: BarrierSettings = field(default_factory=BarrierSettings)

    def __post_init__(self):
        if isinstance(self.barrier, dict):
            self.barrier = BarrierSettings(**self.barrier)
        for name in ("outer_tol", "max_outer", "dinkelbach_tol", "max_dinkelbach", "ccp_inner_iters",
                     "epsilon0", "epsilon_decay", "interior_mix"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Problem:
    """One optimization instance.

    ``rate_splitting=False`` gives treating interference as noise (no common
    streams); ``proper=True`` restricts covariances to the proper block
    structure; ``ris_fixed`` freezes the RIS coefficients.
    """

    net: Network
    ee: EEParams
    rate_splitting: bool = True
    proper: bool = False
    ris_fixed: bool = False

    @property
    def dims(self):
        L, K, M, N_BS, N_u, N_RIS = self.net.dims
        return L, K, 2 * N_BS

    def covariance_layout(self) -> CovarianceLayout:
        L, K, n = self.dims
        return CovarianceLayout(L, K, n, common=self.rate_splitting, proper=self.proper)


@dataclass
class TraceRecord:
    outer_iter: int
    half_step: str
    objective: float
    epsilon: float = float("nan")
    accepted: bool = True
    projected: bool = False
    inner_iters: int = 0
    rejected: int = 0


@dataclass
class OptState:
    covs: CovarianceSet
    ris: RISConfig
    objective: float
    outer_iter: int = 0
    inner_iters: int = 0
    epsilon: float = float("nan")
    ee_users: np.ndarray | None = None
    dinkelbach: list = field(default_factory=list)

    def replace(self, **changes) -> "OptState":
        kw = dict(self.__dict__)
        kw.update(changes)
        return OptState(**kw)


# ----------------------------------------------------------------------------
# evaluation and initialization


def evaluate(problem: Problem, covs: CovarianceSet, ris: RISConfig):
    """Exact MWEE of ``(covs, ris)`` with the common rate split optimally.

    Returns ``(covs_with_allocation, objective, per_user_ee)``. Raises
    :class:`InfeasibleThresholds` when no split meets the rate thresholds.
    """
    L, K, _ = covs.shape
    net, ee = problem.net, problem.ee
    out = covs.copy()
    if not problem.rate_splitting:
        out.P_common[:] = 0.0
    Hr = net.real_channels(ris)
    rep = rate_report(Hr, net.C_n, out)
    cost = user_costs(out, ee)
    alpha = ee.weights(L, K)
    r_th = ee.thresholds(L, K)
    alloc = np.zeros((L, K))
    for l in range(L):
        budget = rep.r_c_cell[l] if problem.rate_splitting else 0.0
        alloc[l], _ = allocate_common_rate(rep.r_p[l], budget, alpha[l] * cost[l], r_th[l])
    out.r_common_alloc = alloc
    e = (rep.r_p + alloc) / cost
    return out, float(np.min(e / alpha)), e


def initial_covariances(problem: Problem) -> CovarianceSet:
    """Isotropic streams sharing the full power budget of each BS."""
    L, K, n = problem.dims
    streams = K + (1 if problem.rate_splitting else 0)
    covs = CovarianceSet.zeros(L, K, n)
    level = problem.ee.P_max / (streams * n)
    covs.P_private[:] = level * np.eye(n)
    if problem.rate_splitting:
        covs.P_common[:] = level * np.eye(n)
    return covs


def initial_ris(M, N, set_kind="T_I", mode="ES", reflect_only=None, rng=None) -> RISConfig:
    """Uniform random phases with the budget split evenly between
    reflection and transmission (half the budget under ``T_U``)."""
    rng = np.random.default_rng(rng)
    budget = 0.5 if set_kind == "T_U" else 1.0
    phase_r = rng.uniform(0.0, 2.0 * np.pi, (M, N))
    if set_kind == "T_N":
        # |r + t|^2 <= 1 with |r|^2 + |t|^2 = 1 forces a quarter-turn offset
        phase_t = phase_r + np.where(rng.random((M, N)) < 0.5, 0.5, -0.5) * np.pi
    else:
        phase_t = rng.uniform(0.0, 2.0 * np.pi, (M, N))
    if mode == "MS":
        amp = np.sqrt(budget)
        theta_r = np.where(reflect_only, amp * np.exp(1j * phase_r), 0.0)
        theta_t = np.where(reflect_only, 0.0, amp * np.exp(1j * phase_t))
    else:
        amp = np.sqrt(budget / 2.0)
        theta_r = amp * np.exp(1j * phase_r)
        theta_t = amp * np.exp(1j * phase_t)
    return RISConfig(theta_r, theta_t, set_kind, mode, reflect_only)


def initial_state(problem: Problem, ris: RISConfig, covs: CovarianceSet | None = None) -> OptState:
    covs = initial_covariances(problem) if covs is None else covs
    covs, obj, e = evaluate(problem, covs, ris)
    return OptState(covs, ris.copy(), obj, ee_users=e)


# ----------------------------------------------------------------------------
# covariance step


class _PStepBlock:
    """Scalar constraints of the parametric covariance subproblem.

    Variables: ``[covariance coordinates, r_c (L*K, if rate splitting), t]``.
    Rows: per-user ``r~_lk + r_c,lk - lam * alpha_lk * cost_lk - t``,
    per-user common-rate constraints ``r~_c,lk' - sum_k r_c,lk`` and, when
    any are positive, the rate thresholds ``r~_lk + r_c,lk - r_th,lk``.
    """

    def __init__(self, problem: Problem, forms: PSurrogateForms, lam: float):
        self.forms = forms
        layout = forms.layout
        L, K = layout.L, layout.K
        self.L, self.K = L, K
        self.nx = layout.size
        self.rs = problem.rate_splitting
        self.nr = L * K if self.rs else 0
        self.n = self.nx + self.nr + 1
        ee = problem.ee
        self.alpha = ee.weights(L, K).ravel()
        self.r_th = ee.thresholds(L, K).ravel()
        self.use_th = bool(np.any(self.r_th > 0))
        self.lam = lam
        # cost_lk = P_c + eta * (tr P_lk + tr P_c,l / K), linear in x
        tr_basis = np.trace(layout.basis, axis1=1, axis2=2)
        self.cost_lin = np.zeros((L * K, self.nx))
        for b, (l, j) in enumerate(layout.blocks):
            sl = layout.block_slice(b)
            if j == K:
                self.cost_lin[l * K : (l + 1) * K, sl] += ee.eta * tr_basis / K
            else:
                self.cost_lin[l * K + j, sl] += ee.eta * tr_basis
        self.cost0 = np.full(L * K, ee.P_c)
        self.size = L * K * (1 + (1 if self.rs else 0) + (1 if self.use_th else 0))
        self._cache_x = None

    def split(self, z):
        return z[: self.nx], z[self.nx : self.nx + self.nr], z[-1]

    def costs(self, x):
        return self.cost0 + self.cost_lin @ x

    def _eval(self, z, derivs):
        x, rc, t = self.split(z)
        res = self.forms.evaluate(x, derivs=derivs)
        rp, rcs = res[0].ravel(), res[1].ravel()
        rate = rp + (rc if self.rs else 0.0)
        rows = [rate - self.lam * self.alpha * self.costs(x) - t]
        if self.rs:
            sums = rc.reshape(self.L, self.K).sum(axis=1)
            rows.append(rcs - np.repeat(sums, self.K))
        if self.use_th:
            rows.append(rate - self.r_th)
        return np.concatenate(rows), res

    def values(self, z):
        return self._eval(z, False)[0]

    def derivs(self, z):
        g, res = self._eval(z, True)
        _, _, gp, gc, hp, hc = res
        LK, nx, nr = self.L * self.K, self.nx, self.nr
        gp, gc = gp.reshape(LK, nx), gc.reshape(LK, nx)
        self._hp, self._hc = hp.reshape(LK, nx, nx), hc.reshape(LK, nx, nx)
        J = np.zeros((self.size, self.n))
        J[:LK, :nx] = gp - self.lam * self.alpha[:, None] * self.cost_lin
        J[:LK, -1] = -1.0
        row = LK
        if self.rs:
            J[:LK, nx : nx + nr] = np.eye(LK)
            J[row : row + LK, :nx] = gc
            for l in range(self.L):
                J[row + l * self.K : row + (l + 1) * self.K, nx + l * self.K : nx + (l + 1) * self.K] = -1.0
            row += LK
        if self.use_th:
            J[row : row + LK, :nx] = gp
            if self.rs:
                J[row : row + LK, nx : nx + nr] = np.eye(LK)
        return g, J

    def hess_weighted(self, z, w):
        LK, nx = self.L * self.K, self.nx
        H = np.zeros((self.n, self.n))
        sub = np.einsum("u,uij->ij", w[:LK], self._hp)
        row = LK
        if self.rs:
            sub += np.einsum("u,uij->ij", w[row : row + LK], self._hc)
            row += LK
        if self.use_th:
            sub += np.einsum("u,uij->ij", w[row : row + LK], self._hp)
        H[:nx, :nx] = sub
        return H


def _p_constraints(problem: Problem, block: _PStepBlock, layout: CovarianceLayout):
    L, K, n = problem.dims
    # power budget per BS
    tr_basis = np.trace(layout.basis, axis1=1, axis2=2)
    A = np.zeros((L, block.n))
    for b, (l, j) in enumerate(layout.blocks):
        A[l, layout.block_slice(b)] = -tr_basis
    blocks = [block, LinearBlock(A, np.full(L, problem.ee.P_max))]
    if block.rs:
        R = np.zeros((block.nr, block.n))
        R[:, block.nx : block.nx + block.nr] = np.eye(block.nr)
        blocks.append(LinearBlock(R, np.zeros(block.nr)))
    nblk = len(layout.blocks)
    idx = np.arange(layout.size).reshape(nblk, layout.nb)
    lmis = [AffineLMI(np.zeros((nblk, n, n)), idx, layout.basis)]
    return blocks, lmis


def _interior_start(problem: Problem, layout: CovarianceLayout, covs: CovarianceSet, mix: float):
    x_exp = layout.to_vector(covs)
    inner = initial_covariances(problem)
    inner.P_private *= 0.5
    inner.P_common *= 0.5
    return (1.0 - mix) * x_exp + mix * layout.to_vector(inner)


def parametric_subproblem(problem: Problem, forms: PSurrogateForms, lam: float,
                          settings: SolverSettings | None = None, start=None):
    """Maximize ``min_lk [r~_lk - lam * alpha_lk * cost_lk]`` over covariances
    and common-rate shares.

    Returns ``(covs, value, z)`` where ``z`` is the raw solution vector
    (usable as the next warm start). The value is never below that of the
    expansion point, which is returned itself when the interior solution
    falls short of it. Raises :class:`NumericalFailure` when no strictly
    feasible start exists.
    """
    settings = settings or SolverSettings()
    layout = forms.layout
    block = _PStepBlock(problem, forms, lam)
    blocks, lmis = _p_constraints(problem, block, layout)
    exp_covs = forms.exp.covs
    exp_value = _parametric_value(block, layout.to_vector(exp_covs), exp_covs.r_common_alloc.ravel())

    if start is None:
        x0 = _interior_start(problem, layout, exp_covs, settings.interior_mix)
        rp, rcs = forms.evaluate(x0)
        rc0 = np.zeros(block.nr)
        if block.rs:
            room = np.maximum(rcs.min(axis=1), 0.0)
            alloc = np.maximum(exp_covs.r_common_alloc, 1e-3 * (room[:, None] + 1e-9) / block.K)
            scale = np.minimum(1.0, 0.9 * room / np.maximum(alloc.sum(axis=1), 1e-300))
            rc0 = (alloc * np.where(room > 0, scale, 1.0)[:, None]).ravel()
        z0 = np.concatenate([x0, rc0, [0.0]])
    else:
        z0 = np.array(start, dtype=float)
    # epigraph variable just below the worst row
    z0[-1] = 0.0
    z0[-1] = block.values(z0)[: block.L * block.K].min() - 1.0

    res = maximize(np.eye(block.n)[-1], blocks, lmis, z0, settings.barrier)
    x, rc, _ = block.split(res.x)
    value = _parametric_value(block, x, rc)
    if not value >= exp_value:
        # the barrier stops short of the boundary; an expansion point on the
        # boundary can then beat it and is itself a feasible answer
        if not np.isfinite(exp_value):
            raise NumericalFailure(f"parametric value {value:.3e} with no usable expansion point")
        x = layout.to_vector(exp_covs)
        rc = exp_covs.r_common_alloc.ravel() if block.rs else np.zeros(0)
        value = exp_value
        res.x = np.concatenate([x, rc, [exp_value]])
    covs = layout.to_covs(x, rc if block.rs else None)
    return covs, value, res.x


def _parametric_value(block: _PStepBlock, x, rc):
    rp, _ = block.forms.evaluate(x)
    rate = rp.ravel() + (rc if block.rs else 0.0)
    return float(np.min(rate - block.lam * block.alpha * block.costs(x)))


def solve_p_step(problem: Problem, state: OptState, settings: SolverSettings | None = None) -> OptState:
    """Covariance update with the RIS coefficients held fixed.

    Runs generalized Dinkelbach on the surrogate max-min EE. The returned
    state never has a lower exact objective than ``state``.
    """
    settings = settings or SolverSettings()
    L, K, _ = problem.dims
    r_th = problem.ee.thresholds(L, K)
    if np.any(r_th > 0):
        rep = rate_report(problem.net.real_channels(state.ris), problem.net.C_n, state.covs)
        if np.any(rep.r_p + state.covs.r_common_alloc < r_th - 1e-9):
            raise InfeasibleThresholds("rate thresholds are not met at the expansion point")

    layout = problem.covariance_layout()
    exp = ExpansionPoint(problem.net, state.covs, state.ris)
    forms = PSurrogateForms(exp, layout)
    alpha = problem.ee.weights(L, K).ravel()

    lam = max(state.objective, 0.0)
    history = []
    candidate = None
    for _ in range(settings.max_dinkelbach):
        try:
            covs, value, _ = parametric_subproblem(problem, forms, lam, settings)
        except NumericalFailure as err:
            log.debug("parametric subproblem failed: %s", err)
            break
        candidate = covs
        rp, _ = forms.evaluate(layout.to_vector(covs))
        rate = rp.ravel() + covs.r_common_alloc.ravel()
        costs = user_costs(covs, problem.ee).ravel()
        lam_next = float(np.min(rate / (alpha * costs)))
        history.append((lam, value))
        if value <= settings.dinkelbach_tol or lam_next <= lam:
            break
        lam = lam_next

    obj = -np.inf
    if candidate is not None:
        try:
            covs, obj, e = evaluate(problem, candidate, state.ris)
        except InfeasibleThresholds:
            return state.replace(dinkelbach=history)
    if obj <= 0.0 and state.objective <= 0.0 and not np.any(r_th > 0):
        # nothing is attainable: the least-energy point is silence
        covs = CovarianceSet.zeros(*problem.dims)
        covs, obj, e = evaluate(problem, covs, state.ris)
        return state.replace(covs=covs, objective=obj, ee_users=e, dinkelbach=history)
    if candidate is None:
        return state.replace(dinkelbach=history)
    if obj >= state.objective:
        return state.replace(covs=covs, objective=obj, ee_users=e, dinkelbach=history)
    return state.replace(dinkelbach=history)


# ----------------------------------------------------------------------------
# RIS step


def ccp_linearized_constraint(theta_r_prev, theta_t_prev, theta_r, theta_t):
    """Tangent of ``|theta_r|^2 + |theta_t|^2`` at the previous coefficients."""
    return (
        np.abs(theta_r_prev) ** 2
        + 2.0 * np.real(theta_r_prev * np.conj(theta_r - theta_r_prev))
        + np.abs(theta_t_prev) ** 2
        + 2.0 * np.real(theta_t_prev * np.conj(theta_t - theta_t_prev))
    )


def project_theta(theta_r, theta_t, prev_r=None, prev_t=None):
    """Scale each coefficient pair onto ``|theta_r|^2 + |theta_t|^2 = 1``.

    Pairs that are exactly zero cannot be scaled; they keep ``prev_r`` /
    ``prev_t`` (with a warning).
    """
    theta_r = np.asarray(theta_r, dtype=complex)
    theta_t = np.asarray(theta_t, dtype=complex)
    norm = np.sqrt(np.abs(theta_r) ** 2 + np.abs(theta_t) ** 2)
    zero = norm == 0.0
    safe = np.where(zero, 1.0, norm)
    out_r, out_t = theta_r / safe, theta_t / safe
    if np.any(zero):
        warnings.warn("zero RIS coefficient pair; keeping previous values", RuntimeWarning, stacklevel=2)
        if prev_r is not None:
            out_r = np.where(zero, prev_r, out_r)
            out_t = np.where(zero, prev_t, out_t)
    return out_r, out_t


def _quarter_turn(theta_r, theta_t):
    """Rotate both phases symmetrically so they differ by exactly +-pi/2,
    which is what ``|r +- t|^2 <= 1`` demands on the unit budget."""
    both = (np.abs(theta_r) > 0) & (np.abs(theta_t) > 0)
    cross = np.real(theta_r * np.conj(theta_t))
    bad = both & (np.abs(cross) > 1e-13)
    if not np.any(bad):
        return theta_r, theta_t
    d = np.angle(theta_t) - np.angle(theta_r)
    target = np.where(np.sin(d) >= 0, 0.5 * np.pi, -0.5 * np.pi)
    shift = np.angle(np.exp(1j * (target - d))) / 2.0
    r = np.where(bad, theta_r * np.exp(-1j * shift), theta_r)
    t = np.where(bad, theta_t * np.exp(1j * shift), theta_t)
    return r, t


def apply_ms_mask(ris: RISConfig) -> RISConfig:
    """Zero the masked coefficient of every element; under ``T_I``/``T_N`` the
    surviving one takes the whole unit budget."""
    if ris.mode != "MS":
        raise ValueError("mask only applies in MS mode")
    out = ris.copy()
    out.theta_t = np.where(ris.reflect_only, 0.0, ris.theta_t)
    out.theta_r = np.where(ris.reflect_only, ris.theta_r, 0.0)
    if ris.set_kind in ("T_I", "T_N"):
        keep = np.where(ris.reflect_only, out.theta_r, out.theta_t)
        mag = np.abs(keep)
        unit = np.where(mag > 0, keep / np.where(mag > 0, mag, 1.0), 1.0)
        out.theta_r = np.where(ris.reflect_only, unit, 0.0)
        out.theta_t = np.where(ris.reflect_only, 0.0, unit)
    return out


def _theta_constraints(layout: ThetaLayout, ris: RISConfig, n: int, eps: float):
    """Element-wise feasibility rows over the coefficient coordinates."""
    keys, pairs = layout.element_pairs()
    both = pairs.min(axis=1) >= 0
    blocks = []

    def quad_rows(idx_list, Qs):
        if len(idx_list):
            blocks.append(QuadraticBlock(n, np.asarray(idx_list), np.asarray(Qs), c=np.ones(len(idx_list))))

    # budget |r|^2 + |t|^2 <= 1
    idx2, idx4 = [], []
    for (off_r, off_t), b in zip(pairs, both):
        if b:
            idx4.append([off_r, off_r + 1, off_t, off_t + 1])
        else:
            off = max(off_r, off_t)
            idx2.append([off, off + 1])
    quad_rows(idx4, [np.eye(4)] * len(idx4))
    quad_rows(idx2, [np.eye(2)] * len(idx2))

    if ris.set_kind in ("T_I", "T_N"):
        # zeta(theta) >= 1 - eps, linear in the coordinates
        x_prev = layout.to_vector(ris)
        A = np.zeros((len(pairs), n))
        off = np.zeros(len(pairs))
        for row, (off_r, off_t) in enumerate(pairs):
            for o in (off_r, off_t):
                if o < 0:
                    continue
                A[row, o : o + 2] = 2.0 * x_prev[o : o + 2]
                off[row] -= x_prev[o : o + 2] @ x_prev[o : o + 2]
        blocks.append(LinearBlock(A, off - (1.0 - eps)))

    if ris.set_kind == "T_N" and len(idx4):
        # |r + t|^2 <= 1 and |r - t|^2 <= 1
        plus = np.block([[np.eye(2), np.eye(2)], [np.eye(2), np.eye(2)]])
        minus = np.block([[np.eye(2), -np.eye(2)], [-np.eye(2), np.eye(2)]])
        quad_rows(idx4 + idx4, [plus] * len(idx4) + [minus] * len(idx4))
    return blocks


def _theta_subproblem(problem: Problem, state: OptState, layout: ThetaLayout, eps: float,
                      settings: SolverSettings):
    L, K, _ = problem.dims
    LK = L * K
    exp = ExpansionPoint(problem.net, state.covs, state.ris)
    qp, qc = theta_quadratics(exp, layout)
    nth = layout.size
    alpha = problem.ee.weights(L, K).ravel()
    cost = user_costs(state.covs, problem.ee).ravel()
    r_th = problem.ee.thresholds(L, K).ravel()
    # common streams with no power cannot carry rate
    live_cells = np.array([], dtype=int)
    if problem.rate_splitting:
        live_cells = np.flatnonzero(np.trace(state.covs.P_common, axis1=1, axis2=2) > 0)
    rc_users = np.concatenate([np.arange(l * K, (l + 1) * K) for l in live_cells]) if len(live_cells) else np.array([], dtype=int)
    nr = len(rc_users)
    n = nth + nr + 1
    col = {u: nth + j for j, u in enumerate(rc_users)}
    all_idx = np.tile(np.arange(nth), (LK, 1))

    def lin_rc():
        B = np.zeros((LK, n))
        for u, cidx in col.items():
            B[u, cidx] = 1.0
        return B

    blocks = []
    # users: r^_p + r_c - alpha * cost * t >= 0
    B = lin_rc()
    B[:, -1] = -alpha * cost
    blocks.append(QuadraticBlock(n, all_idx, qp.Q.reshape(LK, nth, nth), q=qp.q.reshape(LK, nth),
                                 c=qp.c.ravel(), B=B))
    if nr:
        rows = [l * K + kk for l in live_cells for kk in range(K)]
        Bc = np.zeros((len(rows), n))
        for r_i, u in enumerate(rows):
            l = u // K
            for kk in range(K):
                Bc[r_i, col[l * K + kk]] = -1.0
        blocks.append(QuadraticBlock(n, all_idx[rows], qc.Q.reshape(LK, nth, nth)[rows],
                                     q=qc.q.reshape(LK, nth)[rows], c=qc.c.ravel()[rows], B=Bc))
        R = np.zeros((nr, n))
        R[np.arange(nr), nth + np.arange(nr)] = 1.0
        blocks.append(LinearBlock(R, np.zeros(nr)))
    if np.any(r_th > 0):
        blocks.append(QuadraticBlock(n, all_idx, qp.Q.reshape(LK, nth, nth), q=qp.q.reshape(LK, nth),
                                     c=qp.c.ravel() - r_th, B=lin_rc()))
    blocks.extend(_theta_constraints(layout, state.ris, n, eps))

    x_prev = layout.to_vector(state.ris)
    shrink = eps / 4.0 if state.ris.set_kind in ("T_I", "T_N") else 1e-3
    z0 = np.zeros(n)
    z0[:nth] = (1.0 - shrink) * x_prev
    if nr:
        alloc = state.covs.r_common_alloc.ravel()[rc_users]
        qcv = qc(z0[:nth]).ravel()
        for l in live_cells:
            sel = [j for j, u in enumerate(rc_users) if u // K == l]
            room = max(qcv[l * K : (l + 1) * K].min(), 0.0)
            a = np.maximum(alloc[sel], 1e-3 * room / K + 1e-12)
            z0[nth + np.asarray(sel)] = a * min(1.0, 0.9 * room / a.sum()) if room > 0 else a
    z0[-1] = np.min((qp(z0[:nth]).ravel() + _rc_full(z0, col, LK)) / (alpha * cost)) - 1.0

    t_exp = state.objective
    res = maximize(np.eye(n)[-1], blocks, [], z0, settings.barrier)
    z = res.x
    t_new = float(np.min((qp(z[:nth]).ravel() + _rc_full(z, col, LK)) / (alpha * cost)))
    if not t_new >= t_exp:
        raise NumericalFailure(f"RIS subproblem value {t_new:.6e} below expansion value {t_exp:.6e}")
    return layout.from_vector(z[:nth], state.ris)


def _rc_full(z, col, LK):
    out = np.zeros(LK)
    for u, c in col.items():
        out[u] = z[c]
    return out


def solve_theta_step(problem: Problem, state: OptState, settings: SolverSettings | None = None):
    """RIS update with covariances held fixed.

    Returns ``(state, record)``; ``record`` is the half-step trace entry.
    """
    settings = settings or SolverSettings()
    ris = state.ris
    layout = ThetaLayout.for_config(ris)
    convex = ris.set_kind == "T_U"
    rounds = 1 if convex else settings.ccp_inner_iters
    eps = settings.epsilon0
    accepted_any, projected, rejected, done = False, False, 0, 0
    for _ in range(rounds):
        try:
            cand = _theta_subproblem(problem, state, layout, eps, settings)
        except NumericalFailure as err:
            # no surrogate ascent: the step is a no-op, not a rejection
            log.debug("RIS subproblem made no progress: %s", err)
            break
        done += 1
        if not convex:
            r, t = project_theta(cand.theta_r, cand.theta_t, state.ris.theta_r, state.ris.theta_t)
            if ris.set_kind == "T_N":
                r, t = _quarter_turn(r, t)
            cand = cand.copy(theta_r=r, theta_t=t)
            if cand.mode == "MS":
                cand = apply_ms_mask(cand)
            projected = True
        try:
            covs, obj, e = evaluate(problem, state.covs, cand)
        except InfeasibleThresholds:
            obj = -np.inf
        ok = cand.is_feasible() and obj >= state.objective
        if ok:
            state = state.replace(covs=covs, ris=cand, objective=obj, ee_users=e)
            accepted_any = True
        else:
            rejected += 1
        eps *= settings.epsilon_decay
        if not convex and not ok and eps < 1e-12:
            break
    state = state.replace(epsilon=eps, inner_iters=state.inner_iters + done)
    rec = TraceRecord(state.outer_iter, "theta", state.objective, eps, accepted_any, projected, done, rejected)
    return state, rec


# ----------------------------------------------------------------------------
# alternating optimization


def ao_loop(problem: Problem, initial: OptState, settings: SolverSettings | None = None, on_record=None):
    """Alternate covariance and RIS updates until the relative objective
    change drops below ``outer_tol`` or ``max_outer`` is reached.

    Returns ``(state, trace)``.
    """
    settings = settings or SolverSettings()
    state = initial
    trace = [TraceRecord(0, "init", state.objective)]

    def emit(rec):
        trace.append(rec)
        if on_record is not None:
            on_record(rec)

    if on_record is not None:
        on_record(trace[0])
    for it in range(1, settings.max_outer + 1):
        prev = state.objective
        state = state.replace(outer_iter=it)
        state = solve_p_step(problem, state, settings)
        emit(TraceRecord(it, "P", state.objective, accepted=True, inner_iters=len(state.dinkelbach)))
        if not problem.ris_fixed:
            state, rec = solve_theta_step(problem, state, settings)
            emit(rec)
        change = abs(state.objective - prev) / max(abs(prev), 1e-12)
        if change < settings.outer_tol:
            break
    return state, trace
