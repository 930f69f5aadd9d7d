"""Concave minorizers of the rates.

Covariance step: the concave part ``0.5 log2|D + S|`` is kept and the
convex part ``-0.5 log2|D|`` is replaced by its tangent at the expansion
point. RIS step: the rate is bounded below by a function that is linear in
the channel through ``V = H P^{1/2}`` minus a convex quadratic in ``S + D``;
both are quadratic in the stacked real/imaginary RIS coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .channel import Network, RISConfig, ThetaLayout
from .rates import (
    CovarianceSet,
    common_signal_covariance,
    interference_covariance,
    signal_covariance,
)
from .wl_algebra import LOG2E, inv_psd, logdet2, psd_sqrt

KAPPA = 0.5 * LOG2E  # 1 / (2 ln 2)


@dataclass
class ExpansionPoint:
    """Covariances and RIS coefficients at the previous iterate, with the
    interference covariances and rate pieces evaluated there."""

    net: Network
    covs: CovarianceSet
    ris: RISConfig
    Hr: np.ndarray = field(init=False)
    D: np.ndarray = field(init=False)  # D_lk
    S: np.ndarray = field(init=False)  # S_lk
    S_c: np.ndarray = field(init=False)  # S_c,lk
    r_p2: np.ndarray = field(init=False)  # 0.5 log2 |D_lk|
    r_c2: np.ndarray = field(init=False)  # 0.5 log2 |D_c,lk|
    r_p: np.ndarray = field(init=False)
    r_c_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        self.covs = self.covs.copy()
        self.ris = self.ris.copy()
        self.refresh()

    def refresh(self):
        L, K, _ = self.covs.shape
        self.Hr = self.net.real_channels(self.ris)
        d = self.Hr.shape[-2]
        self.D = np.empty((L, K, d, d))
        self.S = np.empty_like(self.D)
        self.S_c = np.empty_like(self.D)
        self.r_p2 = np.empty((L, K))
        self.r_c2 = np.empty((L, K))
        self.r_p = np.empty((L, K))
        self.r_c_bar = np.empty((L, K))
        for l in range(L):
            for k in range(K):
                D = interference_covariance(l, k, self.Hr, self.net.C_n, self.covs)
                S = signal_covariance(l, k, self.Hr, self.covs)
                Sc = common_signal_covariance(l, k, self.Hr, self.covs)
                self.D[l, k], self.S[l, k], self.S_c[l, k] = D, S, Sc
                self.r_p2[l, k] = 0.5 * logdet2(D)
                self.r_c2[l, k] = 0.5 * logdet2(D + S)
                self.r_p[l, k] = 0.5 * logdet2(D + S) - self.r_p2[l, k]
                self.r_c_bar[l, k] = 0.5 * logdet2(D + S + Sc) - self.r_c2[l, k]

    @property
    def D_c(self):
        return self.D + self.S


# ----------------------------------------------------------------------------
# covariance step, matrix form


def _tangent_terms(Hr, Dinv, covs: CovarianceSet, ref: CovarianceSet, l, k, include_own: bool):
    L, K, _ = covs.shape
    total = 0.0
    H = Hr[l, k, l]
    M = H.T @ Dinv @ H
    for j in range(K):
        if j == k and not include_own:
            continue
        total += np.trace(M @ (covs.P_private[l, j] - ref.P_private[l, j]))
    P_bs, P_ref = covs.bs_total(), ref.bs_total()
    for i in range(L):
        if i == l:
            continue
        Mi = Hr[l, k, i].T @ Dinv @ Hr[l, k, i]
        total += np.trace(Mi @ (P_bs[i] - P_ref[i]))
    return KAPPA * total


def surrogate_private_rate_P(exp: ExpansionPoint, covs: CovarianceSet, l: int, k: int) -> float:
    """Lower bound on the private rate of ``(l, k)``, tight at ``exp.covs``."""
    Hr, C_n = exp.Hr, exp.net.C_n
    D = interference_covariance(l, k, Hr, C_n, covs)
    S = signal_covariance(l, k, Hr, covs)
    first = 0.5 * logdet2(D + S)
    return first - exp.r_p2[l, k] - _tangent_terms(Hr, inv_psd(exp.D[l, k]), covs, exp.covs, l, k, False)


def surrogate_common_rate_P(exp: ExpansionPoint, covs: CovarianceSet, l: int, k: int) -> float:
    """Lower bound on the common rate decodable at ``(l, k)``."""
    Hr, C_n = exp.Hr, exp.net.C_n
    D_c = interference_covariance(l, k, Hr, C_n, covs) + signal_covariance(l, k, Hr, covs)
    S_c = common_signal_covariance(l, k, Hr, covs)
    first = 0.5 * logdet2(D_c + S_c)
    return first - exp.r_c2[l, k] - _tangent_terms(Hr, inv_psd(exp.D_c[l, k]), covs, exp.covs, l, k, True)


# ----------------------------------------------------------------------------
# RIS step, matrix form


def _theta_bound(r_bar, S_bar, D_bar, V_bar, V, S_plus_D):
    Dinv = inv_psd(D_bar)
    W = Dinv - inv_psd(S_bar + D_bar)
    inner = -np.trace(S_bar @ Dinv) + 2.0 * np.trace(V_bar.T @ Dinv @ V) - np.trace(W.T @ S_plus_D)
    return r_bar + KAPPA * inner


def surrogate_private_rate_theta(exp: ExpansionPoint, ris: RISConfig, l: int, k: int, covs=None) -> float:
    """Lower bound on the private rate as a function of the RIS coefficients,
    with covariances fixed at ``exp.covs``; tight at ``exp.ris``."""
    covs = exp.covs if covs is None else covs
    Hr = exp.net.real_channels(ris)
    root = psd_sqrt(covs.P_private[l, k])
    V = Hr[l, k, l] @ root
    V_bar = exp.Hr[l, k, l] @ root
    SD = interference_covariance(l, k, Hr, exp.net.C_n, covs) + signal_covariance(l, k, Hr, covs)
    return _theta_bound(exp.r_p[l, k], exp.S[l, k], exp.D[l, k], V_bar, V, SD)


def surrogate_common_rate_theta(exp: ExpansionPoint, ris: RISConfig, l: int, k: int, covs=None) -> float:
    covs = exp.covs if covs is None else covs
    Hr = exp.net.real_channels(ris)
    root = psd_sqrt(covs.P_common[l])
    V = Hr[l, k, l] @ root
    V_bar = exp.Hr[l, k, l] @ root
    SD = (
        interference_covariance(l, k, Hr, exp.net.C_n, covs)
        + signal_covariance(l, k, Hr, covs)
        + common_signal_covariance(l, k, Hr, covs)
    )
    return _theta_bound(exp.r_c_bar[l, k], exp.S_c[l, k], exp.D_c[l, k], V_bar, V, SD)


# ----------------------------------------------------------------------------
# RIS step, quadratic form in the coefficient vector


@dataclass
class ThetaQuadratic:
    """``f(x) = c + q @ x - x @ Q @ x`` for every user; arrays indexed [l, k]."""

    c: np.ndarray  # (L, K)
    q: np.ndarray  # (L, K, n)
    Q: np.ndarray  # (L, K, n, n)

    def __call__(self, x):
        return self.c + self.q @ x - np.einsum("lkij,i,j->lk", self.Q, x, x)


def theta_quadratics(exp: ExpansionPoint, layout: ThetaLayout):
    """Private and common RIS-step bounds as quadratics in ``layout`` coordinates."""
    L, K, _ = exp.covs.shape
    A = exp.net.theta_affine(exp.ris, layout)
    n = layout.size
    covs = exp.covs
    P_bs = covs.bs_total()
    out = []
    for common in (False, True):
        c = np.empty((L, K))
        q = np.empty((L, K, n))
        Q = np.empty((L, K, n, n))
        for l in range(L):
            for k in range(K):
                if common:
                    S_bar, D_bar, P_sig = exp.S_c[l, k], exp.D_c[l, k], covs.P_common[l]
                    r_bar = exp.r_c_bar[l, k]
                    own = P_bs[l]
                else:
                    S_bar, D_bar, P_sig = exp.S[l, k], exp.D[l, k], covs.P_private[l, k]
                    r_bar = exp.r_p[l, k]
                    own = covs.P_private[l].sum(axis=0)
                Dinv = inv_psd(D_bar)
                W = Dinv - inv_psd(S_bar + D_bar)
                G = np.zeros((n + 1, n + 1))
                for i in range(L):
                    Pf = own if i == l else P_bs[i]
                    G += kernels.quad_gram(A[l, k, i], W, Pf)
                G = 0.5 * (G + G.T)
                lin = 2.0 * np.einsum("pij,ji->p", A[l, k, l], P_sig @ exp.Hr[l, k, l].T @ Dinv)
                const = r_bar + KAPPA * (-np.trace(S_bar @ Dinv) - np.trace(W @ exp.net.C_n[l, k]))
                c[l, k] = const + KAPPA * (lin[0] - G[0, 0])
                q[l, k] = KAPPA * (lin[1:] - 2.0 * G[0, 1:])
                Q[l, k] = KAPPA * G[1:, 1:]
        out.append(ThetaQuadratic(c, q, Q))
    return out[0], out[1]


# ----------------------------------------------------------------------------
# covariance step, coordinate form


def symmetric_basis(n: int, proper: bool = False) -> np.ndarray:
    """Frobenius-orthogonal basis of symmetric ``n x n`` matrices.

    With ``proper`` the basis spans ``[[A, -B], [B, A]]`` (A symmetric,
    B skew-symmetric), the real form of proper complex covariances.
    """
    mats = []
    if not proper:
        for i in range(n):
            for j in range(i, n):
                E = np.zeros((n, n))
                E[i, j] = E[j, i] = 1.0
                mats.append(E)
        return np.asarray(mats)
    m = n // 2
    for i in range(m):
        for j in range(i, m):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            E[m + i, m + j] = E[m + j, m + i] = 1.0
            mats.append(E)
    for i in range(m):
        for j in range(i + 1, m):
            E = np.zeros((n, n))
            E[m + i, j] = 1.0
            E[m + j, i] = -1.0
            E[i, m + j] = -1.0
            E[j, m + i] = 1.0
            mats.append(E)
    return np.asarray(mats)


class CovarianceLayout:
    """Coordinates of all optimized covariances in one real vector.

    Blocks are ``(l, j)`` with ``j < K`` for private streams and ``j == K``
    for the common stream of cell ``l`` (absent when ``common=False``).
    """

    def __init__(self, L, K, n, common=True, proper=False):
        self.L, self.K, self.n = L, K, n
        self.common = common
        self.basis = symmetric_basis(n, proper)
        self.nb = len(self.basis)
        self.blocks = [(l, j) for l in range(L) for j in range(K + (1 if common else 0))]
        self.size = self.nb * len(self.blocks)
        self._norm = np.einsum("aij,aij->a", self.basis, self.basis)

    def block_slice(self, b):
        return slice(b * self.nb, (b + 1) * self.nb)

    def coords(self, P):
        return np.einsum("aij,ij->a", self.basis, P) / self._norm

    def matrix(self, z):
        return np.tensordot(z, self.basis, axes=1)

    def to_vector(self, covs: CovarianceSet) -> np.ndarray:
        x = np.empty(self.size)
        for b, (l, j) in enumerate(self.blocks):
            P = covs.P_common[l] if j == self.K else covs.P_private[l, j]
            x[self.block_slice(b)] = self.coords(P)
        return x

    def to_covs(self, x, r_common=None) -> CovarianceSet:
        covs = CovarianceSet.zeros(self.L, self.K, self.n)
        for b, (l, j) in enumerate(self.blocks):
            P = self.matrix(x[self.block_slice(b)])
            if j == self.K:
                covs.P_common[l] = P
            else:
                covs.P_private[l, j] = P
        if r_common is not None:
            covs.r_common_alloc = np.asarray(r_common, dtype=float).reshape(self.L, self.K).copy()
        return covs

    def block_index(self):
        """BS index and stream index of every coordinate."""
        bs = np.repeat([l for l, _ in self.blocks], self.nb)
        stream = np.repeat([j for _, j in self.blocks], self.nb)
        return bs, stream


class PSurrogateForms:
    """Covariance-step surrogates of every user over ``CovarianceLayout`` coordinates."""

    def __init__(self, exp: ExpansionPoint, layout: CovarianceLayout):
        self.exp = exp
        self.layout = layout
        L, K = layout.L, layout.K
        Hr = exp.Hr
        bs, stream = layout.block_index()
        E = layout.basis
        self.coef = np.empty((L, K, layout.size) + exp.D.shape[-2:])
        self.mask_first = np.empty((L, K, layout.size), dtype=bool)  # |D + S|
        self.mask_d = np.empty_like(self.mask_first)  # |D|
        self.mask_common = np.empty_like(self.mask_first)  # |D_c + S_c|
        x_bar = layout.to_vector(exp.covs)
        self.x_bar = x_bar
        self.lin_p = np.zeros((L, K, layout.size))
        self.lin_c = np.zeros((L, K, layout.size))
        for l in range(L):
            for k in range(K):
                for b, (i, j) in enumerate(layout.blocks):
                    H = Hr[l, k, i]
                    self.coef[l, k, layout.block_slice(b)] = np.einsum("ui,aij,vj->auv", H, E, H)
                own_cell = bs == l
                is_common = stream == K
                self.mask_first[l, k] = ~(own_cell & is_common)
                self.mask_d[l, k] = self.mask_first[l, k] & ~(own_cell & (stream == k))
                self.mask_common[l, k] = True
                Dinv = inv_psd(exp.D[l, k])
                Dcinv = inv_psd(exp.D_c[l, k])
                tr_d = np.einsum("uv,avu->a", Dinv, self.coef[l, k])
                tr_c = np.einsum("uv,avu->a", Dcinv, self.coef[l, k])
                self.lin_p[l, k] = KAPPA * tr_d * self.mask_d[l, k]
                self.lin_c[l, k] = KAPPA * tr_c * self.mask_first[l, k]

        # stack s = (common, l, k): masked coefficients, offsets and tangents
        LK = L * K
        d = exp.D.shape[-1]
        first = self.coef * self.mask_first[..., None, None]
        self._coef = np.ascontiguousarray(
            np.concatenate([first.reshape(LK, layout.size, d, d), self.coef.reshape(LK, layout.size, d, d)])
        )
        self._coef_t = np.ascontiguousarray(self._coef.transpose(0, 2, 3, 1))
        C = exp.net.C_n.reshape(LK, d, d)
        self._C = np.concatenate([C, C])
        self._r2 = np.concatenate([exp.r_p2.ravel(), exp.r_c2.ravel()])
        self._lin = np.concatenate([self.lin_p.reshape(LK, -1), self.lin_c.reshape(LK, -1)])

    def evaluate(self, x, derivs=False):
        """Private and common surrogates, optionally with gradients/Hessians.

        Values are ``-inf`` where a log-det argument is not positive definite.
        """
        L, K = self.layout.L, self.layout.K
        LK, n = L * K, self.layout.size
        X = self._C + self._coef_t @ x
        try:
            ch = np.linalg.cholesky(X)
        except np.linalg.LinAlgError:
            # outside the log-det domain
            bad = np.full((L, K), -np.inf)
            if derivs:
                z = np.zeros((L, K, n))
                return bad, bad.copy(), z, z.copy(), np.zeros((L, K, n, n)), np.zeros((L, K, n, n))
            return bad, bad.copy()
        val = 2.0 * KAPPA * np.log(np.diagonal(ch, axis1=1, axis2=2)).sum(axis=1)
        r = val - self._r2 - self._lin @ (x - self.x_bar)
        rp, rc = r[:LK].reshape(L, K), r[LK:].reshape(L, K)
        if not derivs:
            return rp, rc
        Xinv = np.linalg.inv(X)
        Xinv = 0.5 * (Xinv + Xinv.transpose(0, 2, 1))
        tr, curv = kernels.logdet_derivs_batch(Xinv, self._coef)
        g = KAPPA * tr - self._lin
        h = -KAPPA * curv
        return (
            rp,
            rc,
            g[:LK].reshape(L, K, n),
            g[LK:].reshape(L, K, n),
            h[:LK].reshape(L, K, n, n),
            h[LK:].reshape(L, K, n, n),
        )
