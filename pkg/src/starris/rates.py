"""Interference covariances, private/common rates and energy efficiency.

All quantities live in the real-decomposition domain, so rates carry the
1/2 prefactor: ``r = 0.5 * log2 det(I + D^-1 S)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .wl_algebra import is_psd, logdet2


@dataclass
class CovarianceSet:
    """Real-domain transmit covariances (watts) and common-rate shares.

    ``P_private[l, k]`` belongs to user ``(l, k)``, ``P_common[l]`` to the
    common stream of cell ``l``; ``r_common_alloc[l, k]`` is the part of the
    common rate credited to user ``(l, k)`` (bits/s/Hz).
    """

    P_private: np.ndarray  # (L, K, n, n)
    P_common: np.ndarray  # (L, n, n)
    r_common_alloc: np.ndarray  # (L, K)

    @classmethod
    def zeros(cls, L, K, n):
        return cls(np.zeros((L, K, n, n)), np.zeros((L, n, n)), np.zeros((L, K)))

    def copy(self) -> "CovarianceSet":
        return CovarianceSet(self.P_private.copy(), self.P_common.copy(), self.r_common_alloc.copy())

    @property
    def shape(self):
        L, K, n, _ = self.P_private.shape
        return L, K, n

    def bs_total(self) -> np.ndarray:
        """``P_i = P_c,i + sum_k P_ik`` for every BS."""
        return self.P_common + self.P_private.sum(axis=1)

    def power(self) -> np.ndarray:
        return np.trace(self.bs_total(), axis1=1, axis2=2)

    def check(self, P_max: float, tol: float = 1e-9):
        """Raise ``ValueError`` when a feasibility invariant is broken."""
        L, K, _ = self.shape
        for l in range(L):
            if not is_psd(self.P_common[l]):
                raise ValueError(f"P_common[{l}] is not PSD")
            for k in range(K):
                if not is_psd(self.P_private[l, k]):
                    raise ValueError(f"P_private[{l}, {k}] is not PSD")
        if np.any(self.power() > P_max + tol):
            raise ValueError(f"power budget exceeded: {self.power()} > {P_max}")
        if np.any(self.r_common_alloc < 0):
            raise ValueError("negative common-rate allocation")


@dataclass
class EEParams:
    """Energy-efficiency constants: ``e = r / (P_c + eta * tr(P_lk + P_c,l / K))``."""

    P_c: float = 1.0
    eta: float = 2.5
    alpha: np.ndarray | float = 1.0
    r_th: np.ndarray | float = 0.0
    P_max: float = 1.0

    def __post_init__(self):
        if self.P_c <= 0 or self.eta <= 0 or self.P_max <= 0:
            raise ValueError("P_c, eta and P_max must be positive")
        if np.any(np.asarray(self.alpha) <= 0):
            raise ValueError("weights must be positive")
        if np.any(np.asarray(self.r_th) < 0):
            raise ValueError("rate thresholds must be nonnegative")

    def weights(self, L, K) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.alpha, dtype=float), (L, K)).copy()

    def thresholds(self, L, K) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.r_th, dtype=float), (L, K)).copy()

    def replace(self, **changes) -> "EEParams":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return EEParams(**kw)


@dataclass
class RateReport:
    r_p: np.ndarray  # (L, K)
    r_c_bar: np.ndarray  # (L, K)
    r_c_cell: np.ndarray  # (L,)
    r_total: np.ndarray  # (L, K)
    ee: np.ndarray = field(default=None)  # (L, K) per-user energy efficiency


def _hph(H, P):
    return H @ P @ H.T


def interference_covariance(l, k, Hr, C_n, covs: CovarianceSet) -> np.ndarray:
    """``D_lk``: intercell and intracell interference plus noise."""
    L, K, _ = covs.shape
    P_bs = covs.bs_total()
    D = C_n[l, k].copy()
    for i in range(L):
        if i != l:
            D += _hph(Hr[l, k, i], P_bs[i])
    intra = covs.P_private[l].sum(axis=0) - covs.P_private[l, k]
    D += _hph(Hr[l, k, l], intra)
    return D


def signal_covariance(l, k, Hr, covs: CovarianceSet) -> np.ndarray:
    return _hph(Hr[l, k, l], covs.P_private[l, k])


def common_signal_covariance(l, k, Hr, covs: CovarianceSet) -> np.ndarray:
    return _hph(Hr[l, k, l], covs.P_common[l])


def private_rate(l, k, Hr, C_n, covs: CovarianceSet) -> float:
    D = interference_covariance(l, k, Hr, C_n, covs)
    S = signal_covariance(l, k, Hr, covs)
    return max(0.5 * (logdet2(D + S) - logdet2(D)), 0.0)


def common_rate_bound(l, k, Hr, C_n, covs: CovarianceSet) -> float:
    """Largest common rate of cell ``l`` decodable at user ``(l, k)``."""
    D_c = interference_covariance(l, k, Hr, C_n, covs) + signal_covariance(l, k, Hr, covs)
    S_c = common_signal_covariance(l, k, Hr, covs)
    return max(0.5 * (logdet2(D_c + S_c) - logdet2(D_c)), 0.0)


def cell_common_rate(l, Hr, C_n, covs: CovarianceSet) -> float:
    K = covs.shape[1]
    return min(common_rate_bound(l, k, Hr, C_n, covs) for k in range(K))


def user_costs(covs: CovarianceSet, ee: EEParams) -> np.ndarray:
    """Denominator ``P_c + eta * tr(P_lk + P_c,l / K)`` of every user."""
    K = covs.shape[1]
    tr_p = np.trace(covs.P_private, axis1=2, axis2=3)
    tr_c = np.trace(covs.P_common, axis1=1, axis2=2)
    return ee.P_c + ee.eta * (tr_p + tr_c[:, None] / K)


def energy_efficiency(l, k, rate: float, covs: CovarianceSet, ee: EEParams) -> float:
    K = covs.shape[1]
    cost = ee.P_c + ee.eta * (np.trace(covs.P_private[l, k]) + np.trace(covs.P_common[l]) / K)
    return float(rate / cost)


def rate_report(Hr, C_n, covs: CovarianceSet, ee: EEParams | None = None) -> RateReport:
    L, K, _ = covs.shape
    r_p = np.empty((L, K))
    r_c = np.empty((L, K))
    for l in range(L):
        for k in range(K):
            r_p[l, k] = private_rate(l, k, Hr, C_n, covs)
            r_c[l, k] = common_rate_bound(l, k, Hr, C_n, covs)
    r_total = r_p + covs.r_common_alloc
    rep = RateReport(r_p, r_c, r_c.min(axis=1), r_total)
    if ee is not None:
        rep.ee = r_total / user_costs(covs, ee)
    return rep


def mwee_objective(report: RateReport, covs: CovarianceSet, ee: EEParams) -> float:
    """Minimum over users of ``e_lk / alpha_lk``."""
    L, K, _ = covs.shape
    e = report.r_total / user_costs(covs, ee)
    return float(np.min(e / ee.weights(L, K)))


class InfeasibleThresholds(ValueError):
    """The rate thresholds cannot be met at the current point."""


def allocate_common_rate(r_p, r_common, scale, r_th=0.0):
    """Split one cell's common rate to maximize ``min_k (r_p + r_c) / scale``.

    ``scale[k]`` is ``alpha_k`` times the user's power cost. Every user is
    first lifted to its rate threshold; the rest of ``r_common`` is
    water-filled. Returns ``(alloc, level)`` where ``level`` is the achieved
    minimum ratio.
    """
    r_p = np.asarray(r_p, dtype=float)
    scale = np.asarray(scale, dtype=float)
    K = r_p.size
    floor = np.maximum(np.broadcast_to(np.asarray(r_th, dtype=float), (K,)) - r_p, 0.0)
    budget = max(float(r_common), 0.0)
    if floor.sum() > budget * (1 + 1e-12) + 1e-12:
        raise InfeasibleThresholds(f"thresholds need {floor.sum()} of common rate, only {budget} available")
    # need(e) = sum_k max(floor_k, e * scale_k - r_p,k) is continuous, increasing
    knots = (r_p + floor) / scale
    order = np.sort(knots)
    level = (budget + r_p.sum()) / scale.sum()
    for e in order:
        if np.maximum(floor, e * scale - r_p).sum() > budget:
            act = knots < e
            if act.any():
                level = (budget - floor[~act].sum() + r_p[act].sum()) / scale[act].sum()
            else:
                # the first knot already exhausts the budget (rounding)
                level = e
            break
    alloc = np.maximum(floor, level * scale - r_p)
    total = alloc.sum()
    if total > budget and total > 0:
        alloc *= budget / total
    return alloc, float(np.min((r_p + alloc) / scale))
