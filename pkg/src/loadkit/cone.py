"""Euclidean projection onto a polyhedral cone ``{y : K y >= 0}``.

By Moreau's decomposition, ``c = P_K(c) + P_polar(c)`` with the polar cone
generated by ``-K^T``. The polar part is found by nonnegative least squares
``min_{lam >= 0} || K^T lam + c ||`` and ``P_K(c) = c + K^T lam``.
"""

from __future__ import annotations

import numpy as np

from .errors import SolverFailure


def nnls(A, b, max_iter: int | None = None, tol: float | None = None):
    """Lawson-Hanson active-set solver for ``min ||A x - b||, x >= 0``.

    Returns ``(x, residual_norm)``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if tol is None:
        tol = 10 * np.finfo(float).eps * max(m, n) * max(1.0, float(np.abs(A).sum(axis=0).max(initial=0.0))) \
            * max(1.0, float(np.abs(b).max(initial=0.0)))
    max_iter = max_iter or 3 * n + 30
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ b
    it = 0
    while np.any(~passive & (w > tol)):
        if it >= max_iter:
            raise SolverFailure(f"NNLS did not converge in {max_iter} iterations")
        it += 1
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                x = z
                break
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            drop = passive & (x <= tol)
            if not drop.any():
                drop[np.flatnonzero(neg)[np.argmin(x[neg])]] = True
            passive[drop] = False
            x[drop] = 0.0
            if not passive.any():
                break
        w = A.T @ (b - A @ x)
    return x, float(np.linalg.norm(A @ x - b))


def project(K, c) -> tuple[np.ndarray, np.ndarray]:
    """Project ``c`` onto ``{y : K y >= 0}``; returns ``(projection, multipliers)``."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    c = np.asarray(c, dtype=float)
    if K.size == 0:
        return c.copy(), np.zeros(0)
    lam, _ = nnls(K.T, -c)
    return c + K.T @ lam, lam
