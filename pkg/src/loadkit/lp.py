"""Certified LP feasibility via a dense phase-one simplex (Bland's rule).

The system handled here is

    A y >= b        (one row per inequality)
    a . y  = r

with ``y`` free. Either a feasible ``y`` is returned or a Farkas certificate
``(lam >= 0, mu)`` with ``A^T lam + mu a = 0`` and ``b . lam + mu r = 1``;
any feasible ``y`` would give ``0 = lam . A y + mu a . y >= b . lam + mu r = 1``.
Both outcomes are re-checked independently before being reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverFailure

FEAS_TOL = 1e-9
RANK_TOL = 1e-9


@dataclass
class PhaseOneResult:
    feasible: bool
    x: np.ndarray
    duals: np.ndarray  # simplex multipliers of the phase-one problem
    objective: float
    pivots: int


def phase_one(A, b, basis=None, max_pivots: int | None = None, tol: float = 1e-9,
              refactor_every: int = 100) -> PhaseOneResult:
    """Find ``x >= 0`` with ``A x = b`` or prove none exists.

    ``basis`` optionally names, per row, a column that is already a unit
    vector with a nonnegative right-hand side; rows without one (``-1``) get
    an artificial variable. Bland's smallest-index rule prevents cycling.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    basis = [-1] * m if basis is None else list(basis)
    for i in range(m):
        if sign[i] < 0:
            basis[i] = -1
    A *= sign[:, None]
    b *= sign

    art_rows = [i for i in range(m) if basis[i] < 0]
    k = len(art_rows)
    T = np.zeros((m + 1, n + k + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    for j, i in enumerate(art_rows):
        T[i, n + j] = 1.0
        basis[i] = n + j
    start_basis = list(basis)
    full = T[:m, :-1].copy()
    cost = np.zeros(n + k)
    cost[n:] = 1.0
    # objective row holds reduced costs; last entry is -objective
    T[m, :-1] = cost
    for i in range(m):
        if cost[basis[i]]:
            T[m] -= T[i]

    scale = max(1.0, float(np.abs(T[:m, :-1]).max(initial=0.0)))
    piv_tol = tol * scale
    max_pivots = max_pivots or 50 * (m + n + k + 10)
    pivots = 0
    while True:
        red = T[m, :-1]
        candidates = np.flatnonzero(red < -piv_tol)
        if candidates.size == 0 or -T[m, -1] <= piv_tol:
            break
        col = int(candidates[0])
        colv = T[:m, col]
        rows = np.flatnonzero(colv > piv_tol)
        if rows.size == 0:
            # phase one is bounded below by zero, so this is a numerical artefact
            red[col] = 0.0
            continue
        ratios = T[rows, -1] / colv[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        row = int(min(ties, key=lambda r: basis[r]))
        T[row] /= T[row, col]
        others = np.flatnonzero(T[:, col])
        others = others[others != row]
        T[others] -= np.outer(T[others, col], T[row])
        basis[row] = col
        np.maximum(T[:m, -1], 0.0, out=T[:m, -1])
        pivots += 1
        if pivots > max_pivots:
            raise SolverFailure(f"phase-one simplex exceeded {max_pivots} pivots")
        if pivots % refactor_every == 0:
            _refactor(T, full, b, cost, basis)

    _refactor(T, full, b, cost, basis)
    x = np.zeros(n + k)
    for i in range(m):
        x[basis[i]] = T[i, -1]
    objective = float(cost @ x)
    # initial basic columns are unit vectors, so pi_i = c_j - reduced_cost_j
    duals = np.array([cost[j] - T[m, j] for j in start_basis])
    feasible = objective <= max(piv_tol, FEAS_TOL) * max(1.0, float(np.abs(b).max(initial=0.0)))
    return PhaseOneResult(feasible, x[:n], duals * sign, objective, pivots)


def _refactor(T, full, b, cost, basis) -> None:
    """Rebuild the tableau from the original columns to shed round-off."""
    m = full.shape[0]
    Bm = full[:, basis]
    try:
        lu = np.linalg.solve(Bm, np.hstack([full, b[:, None]]))
        pi = np.linalg.solve(Bm.T, cost[basis])
    except np.linalg.LinAlgError:
        return
    T[:m] = lu
    np.maximum(T[:m, -1], 0.0, out=T[:m, -1])
    T[m, :-1] = cost - pi @ full
    T[m, -1] = -pi @ b


@dataclass
class FeasibilityResult:
    feasible: bool
    y: np.ndarray | None = None
    lam: np.ndarray | None = None
    mu: float | None = None
    max_violation: float = 0.0


def _scale(A, a, b, r) -> float:
    return max(1.0, float(np.abs(A).max(initial=0.0)), float(np.abs(a).max(initial=0.0)),
               float(np.abs(b).max(initial=0.0)), abs(r))


def verify_point(A, b, a, r, y, tol=FEAS_TOL) -> float:
    """Largest violation of ``A y >= b``, ``a . y = r`` (scaled); 0 if none."""
    A, b, a = np.asarray(A, float), np.asarray(b, float), np.asarray(a, float)
    scale = _scale(A, a, b, r) * max(1.0, float(np.abs(y).max(initial=0.0)))
    viol = max(float(np.max(b - A @ y, initial=0.0)), abs(float(a @ y) - r))
    return viol / scale


def verify_certificate(A, b, a, r, lam, mu) -> float:
    """Largest violation of the Farkas identities (scaled); 0 if exact."""
    A, b, a, lam = np.asarray(A, float), np.asarray(b, float), np.asarray(a, float), np.asarray(lam, float)
    gap = float(b @ lam + mu * r)
    if gap <= 0:
        return np.inf
    lam_n, mu_n = lam / gap, mu / gap
    scale = _scale(A, a, b, r) * max(1.0, float(np.abs(lam_n).max(initial=0.0)), abs(mu_n))
    viol = max(float(np.max(-lam_n, initial=0.0)),
               float(np.abs(A.T @ lam_n + mu_n * a).max(initial=0.0)))
    return viol / scale


def lp_feasibility(rows_ge, row_eq, rhs_eq: float = 1.0, rhs_ge=None, tol: float = FEAS_TOL
                   ) -> FeasibilityResult:
    """Decide ``{A y >= b, a . y = r}`` with a verified witness either way."""
    A = np.atleast_2d(np.asarray(rows_ge, dtype=float))
    a = np.asarray(row_eq, dtype=float)
    m, n = A.shape if A.size else (0, a.size)
    A = A.reshape(m, n)
    b = np.zeros(m) if rhs_ge is None else np.asarray(rhs_ge, dtype=float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SolverFailure("non-finite LP coefficients")

    reduced = _solve_reduced(A, b, a, rhs_eq, tol)
    if reduced is not None:
        return reduced

    primal = _solve_primal(A, b, a, rhs_eq)
    if primal.feasible:
        y = primal.x[:n] - primal.x[n:2 * n]
        viol = verify_point(A, b, a, rhs_eq, y)
        if viol <= tol:
            return FeasibilityResult(True, y=y, max_violation=viol)
    else:
        lam, mu = primal.duals[:m], float(primal.duals[m])
        gap = float(b @ lam + mu * rhs_eq)
        if gap > 0:
            lam, mu = lam / gap, mu / gap
            if verify_certificate(A, b, a, rhs_eq, lam, mu) <= tol:
                return FeasibilityResult(False, lam=np.maximum(lam, 0.0), mu=mu)

    # one side failed verification: solve the alternative system directly
    alt = _solve_alternative(A, b, a, rhs_eq)
    if alt.feasible:
        lam = alt.x[:m]
        mu = float(alt.x[m] - alt.x[m + 1])
        viol = verify_certificate(A, b, a, rhs_eq, lam, mu)
        if viol <= tol:
            return FeasibilityResult(False, lam=lam, mu=mu, max_violation=viol)
    raise SolverFailure("neither a feasible point nor an infeasibility certificate could be verified")


def _solve_reduced(A, b, a, r, tol) -> FeasibilityResult | None:
    """Solve in row-image space ``w = A y``.

    ``a`` must be a combination ``A^T u`` of the rows (true for the boundary
    systems, where ``a`` sums the gradient rows). Then the system is
    ``w >= b``, ``u . w = r`` and ``N^T w = 0`` for a basis ``N`` of the left
    null space of ``A``; that LP has only ``dim N + 1`` rows.
    Returns None when the reduction does not apply or fails verification.
    """
    m, n = A.shape
    if m == 0:
        return None
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    smax = float(s[0]) if s.size else 0.0
    if smax == 0.0:
        return None
    rank = int(np.sum(s > RANK_TOL * smax))
    u = np.linalg.lstsq(A.T, a, rcond=None)[0]
    if np.abs(A.T @ u - a).max(initial=0.0) > 1e-10 * max(1.0, float(np.abs(a).max())):
        return None
    N = U[:, rank:]
    # w = b + s, s >= 0:   N^T s = -N^T b,   u . s = r - u . b
    M = np.vstack([N.T, u[None, :]])
    d = np.r_[-N.T @ b, r - u @ b]
    res = phase_one(M, d)
    if res.feasible:
        w = b + res.x
        inv = np.where(s[:rank] > 0, 1.0 / s[:rank], 0.0)
        y = Vt[:rank].T @ (inv * (U[:, :rank].T @ w))
        viol = verify_point(A, b, a, r, y)
        if viol <= tol:
            return FeasibilityResult(True, y=y, max_violation=viol)
        return None
    pi_n, pi_0 = res.duals[:-1], float(res.duals[-1])
    lam = -(N @ pi_n + pi_0 * u)
    mu = pi_0
    gap = float(b @ lam + mu * r)
    if gap <= 0:
        return None
    lam, mu = lam / gap, mu / gap
    viol = verify_certificate(A, b, a, r, lam, mu)
    if viol <= tol:
        return FeasibilityResult(False, lam=np.maximum(lam, 0.0), mu=mu, max_violation=viol)
    return None


def _solve_primal(A, b, a, r) -> PhaseOneResult:
    m, n = A.shape
    # columns: y+ (n), y- (n), surplus s (m);   rows: A y - s = b ; a y = r
    M = np.zeros((m + 1, 2 * n + m))
    M[:m, :n] = A
    M[:m, n:2 * n] = -A
    M[:m, 2 * n:] = -np.eye(m)
    M[m, :n] = a
    M[m, n:2 * n] = -a
    rhs = np.r_[b, r]
    basis = [-1] * (m + 1)
    for i in range(m):
        if b[i] <= 0:
            # flip to  -A y + s = -b >= 0  so the surplus starts basic
            M[i] *= -1
            rhs[i] *= -1
            basis[i] = 2 * n + i
    res = phase_one(M, rhs, basis, max_pivots=20 * (2 * n + 2 * m + 10))
    flip = np.ones(m + 1)
    flip[:m][b <= 0] = -1.0
    res.duals = res.duals * flip
    return res


def _solve_alternative(A, b, a, r) -> PhaseOneResult:
    m, n = A.shape
    # columns: lam (m), mu+ , mu- ;  rows: A^T lam + mu a = 0 ; b lam + mu r = 1
    M = np.zeros((n + 1, m + 2))
    M[:n, :m] = A.T
    M[:n, m] = a
    M[:n, m + 1] = -a
    M[n, :m] = b
    M[n, m] = r
    M[n, m + 1] = -r
    return phase_one(M, np.r_[np.zeros(n), 1.0], max_pivots=20 * (n + m + 10))
