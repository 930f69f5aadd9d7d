"""Log-barrier interior-point method for small concave programs.

Solves ``maximize c @ x`` subject to concave scalar constraints
``g_i(x) >= 0`` (grouped in blocks) and affine matrix inequalities
``X0 + sum_a x[idx_a] A_a > 0``. Each centering step minimizes
``-tau * c @ x - sum log g_i - sum log det X`` by damped Newton; ``tau``
grows by ``mu_factor`` until the barrier parameter ``1 / tau`` drops below
``mu_final``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels

log = logging.getLogger(__name__)


class NumericalFailure(RuntimeError):
    """The interior-point method could not produce a usable point."""


@dataclass
class BarrierSettings:
    mu0: float = 1.0
    mu_factor: float = 10.0
    mu_final: float = 1e-6
    newton_tol: float = 1e-6
    max_newton: int = 80
    max_backtrack: int = 60
    armijo: float = 0.25
    shrink: float = 0.5


@dataclass
class BarrierResult:
    x: np.ndarray
    value: float
    newton_steps: int
    mu: float


class LinearBlock:
    """``g = offset + A @ x``."""

    def __init__(self, A, offset):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.offset = np.asarray(offset, dtype=float).reshape(-1)
        self.size = self.offset.size

    def values(self, x):
        return self.offset + self.A @ x

    def derivs(self, x):
        return self.values(x), self.A

    def hess_weighted(self, x, w):
        return None


class QuadraticBlock:
    """Rows ``g_i = c_i + B_i @ x + q_i @ x[idx_i] - x[idx_i] @ Q_i @ x[idx_i]``.

    ``Q_i`` must be positive semidefinite so every row is concave. ``B`` is
    a dense linear part over the full variable vector (may be ``None``).
    """

    def __init__(self, n, idx, Q, q=None, c=None, B=None):
        self.n = n
        self.idx = np.atleast_2d(np.asarray(idx, dtype=int))
        self.Q = np.asarray(Q, dtype=float)
        m, s = self.idx.shape
        self.q = np.zeros((m, s)) if q is None else np.asarray(q, dtype=float)
        self.c = np.zeros(m) if c is None else np.asarray(c, dtype=float)
        self.B = None if B is None else np.asarray(B, dtype=float)
        self.size = m
        self.shared = bool(np.all(self.idx == self.idx[0]))
        self._rows = np.arange(m)[:, None]

    def _local(self, x):
        if self.shared:
            xs = x[self.idx[0]]
            return np.broadcast_to(xs, self.idx.shape), self.Q @ xs
        xs = x[self.idx]
        return xs, (self.Q @ xs[:, :, None])[..., 0]

    def values(self, x):
        xs, Qx = self._local(x)
        g = self.c + np.einsum("ij,ij->i", self.q, xs) - np.einsum("ij,ij->i", xs, Qx)
        if self.B is not None:
            g = g + self.B @ x
        return g

    def derivs(self, x):
        xs, Qx = self._local(x)
        g = self.c + np.einsum("ij,ij->i", self.q, xs) - np.einsum("ij,ij->i", xs, Qx)
        J = np.zeros((self.size, self.n)) if self.B is None else self.B.copy()
        if self.B is not None:
            g = g + self.B @ x
        np.add.at(J, (np.broadcast_to(self._rows, self.idx.shape), self.idx), self.q - 2.0 * Qx)
        return g, J

    def hess_weighted(self, x, w):
        H = np.zeros((self.n, self.n))
        if self.shared:
            sub = -2.0 * np.tensordot(w, self.Q, axes=1)
            ix = self.idx[0]
            H[np.ix_(ix, ix)] += sub
        else:
            vals = -2.0 * w[:, None, None] * self.Q
            np.add.at(H, (self.idx[:, :, None], self.idx[:, None, :]), vals)
        return H


class AffineLMI:
    """``X(x) = X0 + sum_a x[idx[a]] * coef[a]``, required positive definite.

    A stack of independent inequalities is given by a 3-D ``X0`` (B, d, d)
    with ``idx`` of shape (B, na); ``coef`` (na, d, d) is then shared or
    given per block as (B, na, d, d).
    """

    def __init__(self, X0, idx, coef):
        X0 = np.asarray(X0, dtype=float)
        self.batched = X0.ndim == 3
        self.X0 = X0 if self.batched else X0[None]
        self.idx = np.atleast_2d(np.asarray(idx, dtype=int))
        coef = np.asarray(coef, dtype=float)
        nb, na = self.idx.shape
        if coef.ndim == 3:
            coef = np.broadcast_to(coef, (nb,) + coef.shape)
        self.coef = np.array(coef, order="C")
        self._coef_t = np.ascontiguousarray(self.coef.transpose(0, 2, 3, 1))
        self.dim = nb * self.X0.shape[1]

    def matrix(self, x):
        X = self.X0 + (self._coef_t @ x[self.idx][:, None, :, None])[..., 0]
        return X if self.batched else X[0]

    def chol(self, x):
        X = self.X0 + (self._coef_t @ x[self.idx][:, None, :, None])[..., 0]
        try:
            return np.linalg.cholesky(X)
        except np.linalg.LinAlgError:
            return None

    def logdet(self, x):
        ch = self.chol(x)
        if ch is None:
            return -np.inf
        return 2.0 * np.log(np.diagonal(ch, axis1=1, axis2=2)).sum()

    def add_newton_terms(self, x, grad, H):
        """Add the gradient and Hessian of ``-log det X(x)``."""
        X = self.X0 + (self._coef_t @ x[self.idx][:, None, :, None])[..., 0]
        Xinv = np.linalg.inv(X)
        Xinv = 0.5 * (Xinv + Xinv.transpose(0, 2, 1))
        tr, curv = kernels.logdet_derivs_batch(Xinv, self.coef)
        np.add.at(grad, self.idx, -tr)
        np.add.at(H, (self.idx[:, :, None], self.idx[:, None, :]), curv)


class _Problem:
    def __init__(self, c, blocks, lmis, n):
        self.c = c
        self.blocks = blocks
        self.lmis = lmis
        self.n = n
        self.m = sum(b.size for b in blocks) + sum(lmi.dim for lmi in lmis)

    def feasible(self, x):
        for b in self.blocks:
            g = b.values(x)
            if not np.all(np.isfinite(g)) or np.any(g <= 0):
                return False
        return all(lmi.chol(x) is not None for lmi in self.lmis)

    def potential(self, x, tau):
        """Barrier potential; ``inf`` outside the strict interior."""
        val = -tau * (self.c @ x)
        for b in self.blocks:
            g = b.values(x)
            if not np.all(np.isfinite(g)) or np.any(g <= 0):
                return np.inf
            val -= np.log(g).sum()
        for lmi in self.lmis:
            ld = lmi.logdet(x)
            if not np.isfinite(ld):
                return np.inf
            val -= ld
        return val

    def newton_system(self, x, tau):
        n = self.n
        grad = -tau * self.c.copy()
        H = np.zeros((n, n))
        for b in self.blocks:
            g, J = b.derivs(x)
            inv = 1.0 / g
            grad -= J.T @ inv
            H += (J.T * inv**2) @ J
            Hg = b.hess_weighted(x, inv)
            if Hg is not None:
                H -= Hg
        for lmi in self.lmis:
            lmi.add_newton_terms(x, grad, H)
        return grad, H


def _solve(H, rhs):
    n = H.shape[0]
    scale = max(np.abs(np.diag(H)).max(initial=0.0), 1e-300)
    Hr = H + (1e-13 * scale) * np.eye(n)
    try:
        L = np.linalg.cholesky(Hr)
        return np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(Hr, rhs, rcond=None)[0]


def _center(prob: _Problem, x, tau, s: BarrierSettings, stop=None):
    steps = 0
    for _ in range(s.max_newton):
        grad, H = prob.newton_system(x, tau)
        dx = _solve(H, -grad)
        dec = -(grad @ dx)
        if not np.isfinite(dec):
            raise NumericalFailure("non-finite Newton decrement")
        if dec / 2.0 <= s.newton_tol:
            break
        f0 = prob.potential(x, tau)
        step = 1.0
        for _ in range(s.max_backtrack):
            xn = x + step * dx
            fn = prob.potential(xn, tau)
            if np.isfinite(fn) and fn <= f0 - s.armijo * step * dec:
                break
            step *= s.shrink
        else:
            break
        x = xn
        steps += 1
        if stop is not None and stop(x):
            break
    return x, steps


def maximize(c, blocks, lmis, x0, settings: BarrierSettings | None = None) -> BarrierResult:
    """Maximize ``c @ x`` from ``x0``; runs a phase-I search if ``x0`` is not
    strictly feasible for the scalar constraints. The matrix inequalities
    must hold strictly at ``x0``."""
    s = settings or BarrierSettings()
    c = np.asarray(c, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    for lmi in lmis:
        if lmi.chol(x) is None:
            raise NumericalFailure("starting point violates a matrix inequality")
    total_steps = 0
    if blocks:
        gmin = min(b.values(x).min() for b in blocks)
        if not gmin > 0:
            x, steps = _phase_one(blocks, lmis, x, gmin, s)
            total_steps += steps
    prob = _Problem(c, blocks, lmis, n)
    tau = 1.0 / s.mu0
    while True:
        x, steps = _center(prob, x, tau, s)
        total_steps += steps
        if 1.0 / tau < s.mu_final:
            break
        tau *= s.mu_factor
    return BarrierResult(x, float(c @ x), total_steps, 1.0 / tau)


class _Shifted:
    """Block ``g_i(x) + s`` over the extended vector ``[x, s]``."""

    def __init__(self, block, n):
        self.block = block
        self.n = n
        self.size = block.size

    def values(self, z):
        return self.block.values(z[:-1]) + z[-1]

    def derivs(self, z):
        g, J = self.block.derivs(z[:-1])
        return g + z[-1], np.hstack([J, np.ones((self.size, 1))])

    def hess_weighted(self, z, w):
        H = self.block.hess_weighted(z[:-1], w)
        if H is None:
            return None
        out = np.zeros((self.n + 1, self.n + 1))
        out[:-1, :-1] = H
        return out


def _phase_one(blocks, lmis, x, gmin, s: BarrierSettings):
    n = x.size
    z = np.append(x, 1.0 - gmin)
    ext = [_Shifted(b, n) for b in blocks]
    c = np.zeros(n + 1)
    c[-1] = -1.0
    prob = _Problem(c, ext, list(lmis), n + 1)
    margin = 1e-9

    def done(zz):
        return zz[-1] < -margin

    tau = 1.0 / s.mu0
    steps = 0
    while True:
        z, k = _center(prob, z, tau, s, stop=done)
        steps += k
        if done(z):
            return z[:-1].copy(), steps
        if 1.0 / tau < s.mu_final:
            raise NumericalFailure(f"no strictly feasible point found (phase-I slack {z[-1]:.3e})")
        tau *= s.mu_factor
