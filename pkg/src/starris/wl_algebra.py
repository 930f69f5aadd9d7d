"""Real-domain algebra for complex and widely-linear maps.

Every real-domain matrix in the package uses the block layout
``[[Re, -Im], [Im, Re]]`` with the real parts first, so a complex vector
``x`` is represented by ``[Re x; Im x]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG2E = 1.0 / np.log(2.0)
EIG_FLOOR = 1e-12


class NonPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a covariance is not positive definite after flooring."""


@dataclass(frozen=True)
class WidelyLinearMap:
    """``y = gamma1 @ x + gamma2 @ conj(x)``."""

    gamma1: np.ndarray
    gamma2: np.ndarray

    def __post_init__(self):
        g1 = np.atleast_2d(np.asarray(self.gamma1, dtype=complex))
        g2 = np.atleast_2d(np.asarray(self.gamma2, dtype=complex))
        if g1.shape != g2.shape:
            raise ValueError(f"gamma1 {g1.shape} and gamma2 {g2.shape} differ in shape")
        object.__setattr__(self, "gamma1", g1)
        object.__setattr__(self, "gamma2", g2)

    @classmethod
    def identity(cls, dim: int) -> "WidelyLinearMap":
        return cls(np.eye(dim, dtype=complex), np.zeros((dim, dim), dtype=complex))

    @property
    def shape(self):
        return self.gamma1.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.gamma1 @ x + self.gamma2 @ np.conj(x)

    def compose(self, inner: "WidelyLinearMap") -> "WidelyLinearMap":
        """Map equal to applying ``inner`` first and then ``self``."""
        g1 = self.gamma1 @ inner.gamma1 + self.gamma2 @ np.conj(inner.gamma2)
        g2 = self.gamma1 @ inner.gamma2 + self.gamma2 @ np.conj(inner.gamma1)
        return WidelyLinearMap(g1, g2)


def real_decompose(a) -> np.ndarray:
    """Return ``[[Re A, -Im A], [Im A, Re A]]``."""
    a = np.asarray(a, dtype=complex)
    if a.ndim == 1:
        return np.concatenate([a.real, a.imag])
    re, im = a.real, a.imag
    return np.block([[re, -im], [im, re]])


def real_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    return np.concatenate([x.real, x.imag], axis=0)


def complex_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = v.shape[0] // 2
    return v[:n] + 1j * v[n:]


def wl_real_decompose(w: WidelyLinearMap) -> np.ndarray:
    """Real matrix acting on ``[Re x; Im x]`` exactly as ``w`` acts on ``x``."""
    s = w.gamma1 + w.gamma2
    d = w.gamma1 - w.gamma2
    return np.block([[s.real, -d.imag], [s.imag, d.real]])


def proper_covariance(q) -> np.ndarray:
    """Real-domain covariance of a proper complex vector with covariance ``q``.

    The real and imaginary parts each carry half of the power, so
    ``trace`` of the result equals ``trace(q)``.
    """
    return 0.5 * real_decompose(q)


def symmetrize(s: np.ndarray) -> np.ndarray:
    return 0.5 * (s + np.swapaxes(s, -1, -2))


def floor_psd(s: np.ndarray, floor: float = EIG_FLOOR):
    """Symmetrize and clamp small eigenvalues.

    Returns ``(eigvals, eigvecs)`` of the floored matrix. The floor is
    ``floor * trace(s) / dim``; a non-positive floor means the matrix carries
    no power at all and is rejected.
    """
    s = symmetrize(np.asarray(s, dtype=float))
    n = s.shape[0]
    w, v = np.linalg.eigh(s)
    level = floor * np.trace(s) / n
    if not np.isfinite(level) or level <= 0.0:
        raise NonPositiveDefinite(f"matrix with trace {np.trace(s)!r} cannot be floored")
    if w[0] < -1e-10 * w[-1]:
        raise NonPositiveDefinite(f"indefinite matrix, smallest eigenvalue {w[0]!r}")
    return np.maximum(w, level), v


def logdet2(s: np.ndarray) -> float:
    """``log2 det(s)`` for a symmetric positive definite matrix."""
    w, _ = floor_psd(s)
    return float(np.sum(np.log2(w)))


def solve_psd(s: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``s @ x = b`` for symmetric positive definite ``s``."""
    w, v = floor_psd(s)
    b = np.asarray(b, dtype=float)
    scale = w[:, None] if b.ndim > 1 else w
    return v @ ((v.T @ b) / scale)


def inv_psd(s: np.ndarray) -> np.ndarray:
    return symmetrize(solve_psd(s, np.eye(s.shape[0])))


def psd_sqrt(p: np.ndarray) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clamped at zero."""
    w, v = np.linalg.eigh(symmetrize(np.asarray(p, dtype=float)))
    return (v * np.sqrt(np.maximum(w, 0.0))) @ v.T


def is_psd(p: np.ndarray, tol: float = 1e-10) -> bool:
    p = np.asarray(p, dtype=float)
    scale = max(np.abs(p).max(initial=0.0), 1e-300)
    if np.abs(p - p.T).max(initial=0.0) > tol * scale:
        return False
    w = np.linalg.eigvalsh(symmetrize(p))
    return bool(w.min(initial=0.0) >= -tol * max(w.max(initial=0.0), 0.0))
