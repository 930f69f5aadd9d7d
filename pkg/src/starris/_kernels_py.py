"""Pure-numpy kernels; reference behaviour for the compiled versions."""
import numpy as np


def logdet_derivs(xinv, coef):
    """Trace contractions of ``log det(X0 + sum_a x_a A_a)``.

    Returns ``grad[a] = tr(Xinv A_a)`` and
    ``curv[a, b] = tr(Xinv A_a Xinv A_b)``; the Hessian of the log-det is
    ``-curv``.
    """
    grad, curv = logdet_derivs_batch(xinv[None], coef[None])
    return grad[0], curv[0]


def logdet_derivs_batch(xinv, coef):
    """``logdet_derivs`` over a stack: ``xinv`` (s, d, d), ``coef`` (s, na, d, d)."""
    ns, na, d, _ = coef.shape
    y = np.matmul(xinv[:, None], coef)
    grad = np.trace(y, axis1=2, axis2=3)
    flat = y.reshape(ns, na, d * d)
    flat_t = y.transpose(0, 1, 3, 2).reshape(ns, na, d * d)
    curv = np.matmul(flat, flat_t.transpose(0, 2, 1))
    return grad, curv


def quad_gram(coef, q, p):
    """``gram[a, b] = tr(q A_a p A_b^T)`` for a stack ``A`` of shape (na, d, n).

    ``q`` and ``p`` are symmetric, so ``gram`` is too; the compiled version
    only fills one triangle and mirrors it.
    """
    na = coef.shape[0]
    t = np.matmul(np.matmul(q, coef), p)
    return t.reshape(na, -1) @ coef.reshape(na, -1).T
