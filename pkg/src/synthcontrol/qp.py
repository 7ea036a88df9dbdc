"""Simplex-constrained weighted least squares.

Solves

    minimize    (x1 - X0 w)' diag(v) (x1 - X0 w)
    subject to  w >= 0,  sum(w) = 1

with a Mehrotra predictor-corrector primal-dual interior point method.
When the minimizer is unique, the interior point iterate is polished by
solving the equality-constrained problem on the detected support, which
recovers exact vertices (e.g. a treated unit that copies one donor).

Optimality is reported as a KKT residual that does not depend on the
algorithm: with g the objective gradient and g_min = min_j g_j, the
multiplier z_j = g_j - g_min is dual feasible and the residual is the
largest of the primal infeasibility and the complementarity sum
``sum_j w_j z_j`` (the Frank-Wolfe gap), relative to the scale of the
quadratic form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "DEFAULT_TOL",
    "LOOSE_TOL",
    "QpSolution",
    "SimplexWeights",
    "kkt_residual",
    "solve_simplex_wls",
]

DEFAULT_TOL = 1e-8
# Constraint-violation margin of the loose feasibility mode.
LOOSE_TOL = 0.05
MAX_ITER = 500
SINGULAR_TOL = 1e-10
POLISH_TOL = 1e-8


class QpInputError(ValueError):
    """Raised for malformed or non-finite solver inputs."""


@dataclass(frozen=True)
class SimplexWeights:
    """Nonnegative donor weights summing to one."""

    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if w.min() < -1e-12 or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights are not on the simplex: min={w.min()}, sum={w.sum()}")
        w = np.maximum(w, 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return self.w.size


@dataclass(frozen=True)
class QpSolution:
    weights: SimplexWeights
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    non_unique_hint: bool = False


@njit(cache=True)
def _cholesky(M):
    """Lower Cholesky factor; pivots below a relative floor are clamped."""
    n = M.shape[0]
    L = np.zeros((n, n))
    floor = 1e-14 * max(np.abs(np.diag(M)).max(), 1e-300)
    for j in range(n):
        s = M[j, j]
        for p in range(j):
            s -= L[j, p] * L[j, p]
        if s < floor:
            s = floor
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            t = M[i, j]
            for p in range(j):
                t -= L[i, p] * L[j, p]
            L[i, j] = t / L[j, j]
    return L


@njit(cache=True)
def _cho_solve(L, b):
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for j in range(i):
            s -= L[i, j] * y[j]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for j in range(i + 1, n):
            s -= L[j, i] * x[j]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _max_step(x, dx):
    a = 1.0
    for i in range(x.size):
        if dx[i] < 0.0:
            r = -x[i] / dx[i]
            if r < a:
                a = r
    return a


@njit(cache=True)
def _gradient(A, b, w):
    # gradient of |Aw - b|^2 / 2
    return A.T @ (A @ w - b)


@njit(cache=True)
def _scale(A, b):
    # 1 + max|A'A| + max|A'b|; the Gram maximum sits on the diagonal
    q = 0.0
    for j in range(A.shape[1]):
        s = 0.0
        for i in range(A.shape[0]):
            s += A[i, j] * A[i, j]
        q = max(q, s)
    return 1.0 + q + np.abs(A.T @ b).max()


@njit(cache=True)
def _gap_residual(A, b, w, scale):
    # relative complementarity of the best dual multiplier for w
    g = _gradient(A, b, w)
    gmin = g.min()
    gap = 0.0
    for j in range(w.size):
        gap += w[j] * (g[j] - gmin)
    return max(abs(w.sum() - 1.0), -min(w.min(), 0.0), 2.0 * gap / scale)


@njit(cache=True)
def _newton_factor(A, Q, d, low_rank):
    """Factor M = A'A + diag(1/d); low-rank mode factors I + A D A' instead."""
    if low_rank:
        return _cholesky(np.eye(A.shape[0]) + (A * d) @ A.T)
    M = Q.copy()
    for j in range(d.size):
        M[j, j] += 1.0 / d[j]
    return _cholesky(M)


@njit(cache=True)
def _newton_apply(A, L, d, x, low_rank):
    if not low_rank:
        return _cho_solve(L, x)
    out = np.zeros(x.size)
    r = x.copy()
    # Woodbury loses accuracy when d spans many magnitudes; refine against
    # the exact operator M u = A'A u + u / d
    target = 1e-13 * np.abs(x).max()
    for _ in range(3):
        out += d * (r - A.T @ _cho_solve(L, A @ (d * r)))
        r = x - (A.T @ (A @ out) + out / d)
        if np.abs(r).max() <= target:
            break
    return out


@njit(cache=True)
def _ipm_start(A, b):
    n = A.shape[1]
    w = np.full(n, 1.0 / n)
    return w, np.ones(n), _gradient(A, b, w).min() - 1.0


@njit(cache=True)
def _ipm(A, b, tol, max_iter, w, z, y):
    """Primal-dual interior point for min |Aw - b|^2 / 2 over the simplex.

    Starts from (w, z, y) and returns (w, z, y, iterations, scale).
    """
    k, n = A.shape
    low_rank = k < n
    Q = np.empty((0, 0)) if low_rank else A.T @ A
    w = w.copy()
    z = z.copy()
    ones = np.ones(n)
    scale = _scale(A, b)
    it = 0
    while it < max_iter:
        rd = _gradient(A, b, w) - y - z
        rp = w.sum() - 1.0
        mu = (w @ z) / n
        if np.abs(rd).max() <= tol * scale and abs(rp) <= tol and mu <= tol * scale:
            break
        it += 1
        d = w / z
        L = _newton_factor(A, Q, d, low_rank)
        m1 = _newton_apply(A, L, d, ones, low_rank)
        s1 = m1.sum()

        # affine predictor
        m2 = _newton_apply(A, L, d, -rd - z, low_rank)
        dy = (-rp - m2.sum()) / s1
        dw = m2 + m1 * dy
        dz = (-w * z - z * dw) / w
        a = min(_max_step(w, dw), _max_step(z, dz))
        mu_aff = ((w + a * dw) @ (z + a * dz)) / n
        sigma = (mu_aff / mu) ** 3

        # Mehrotra corrector; when the affine step makes little progress it
        # can cycle, so fall back to a plain centring step
        if sigma > 0.5:
            rc = w * z - 0.5 * mu
        else:
            rc = w * z + dw * dz - sigma * mu
        m2 = _newton_apply(A, L, d, -rd - rc / w, low_rank)
        dy = (-rp - m2.sum()) / s1
        dw = m2 + m1 * dy
        dz = (-rc - z * dw) / w
        a = min(1.0, 0.995 * min(_max_step(w, dw), _max_step(z, dz)))
        w = w + a * dw
        z = z + a * dz
        y = y + a * dy
        # guard against underflow of the barrier terms
        for j in range(n):
            if w[j] < 1e-300:
                w[j] = 1e-300
            if z[j] < 1e-300:
                z[j] = 1e-300
    return w, z, y, it, scale


@njit(cache=True)
def _polish(A, b, w, z):
    """Equality-constrained solve on the support w_j > z_j.

    A singular support system (several optimal weight vectors) is solved
    in the minimum-norm least-squares sense. Returns (w_polished, ok,
    singular).
    """
    n = w.size
    support = np.empty(n, dtype=np.int64)
    m = 0
    for j in range(n):
        if w[j] > z[j]:
            support[m] = j
            m += 1
    out = np.zeros(n)
    if m == 0:
        return out, False, False
    AS = np.empty((A.shape[0], m))
    for a in range(m):
        AS[:, a] = A[:, support[a]]
    K = np.zeros((m + 1, m + 1))
    K[:m, :m] = AS.T @ AS
    K[:m, m] = 1.0
    K[m, :m] = 1.0
    rhs = np.zeros(m + 1)
    rhs[:m] = AS.T @ b
    rhs[m] = 1.0
    # A'A has rank at most k, so a larger support leaves K singular
    singular = m > A.shape[0] + 1
    if not singular:
        sv = np.linalg.svd(K)[1]
        singular = sv[-1] <= SINGULAR_TOL * max(sv[0], 1.0)
    if singular:
        sol = np.linalg.lstsq(K, rhs, SINGULAR_TOL)[0]
    else:
        sol = np.linalg.solve(K, rhs)
    for a in range(m):
        if sol[a] < 0.0:
            return out, False, singular
        out[support[a]] = sol[a]
    return out, True, singular


@njit(cache=True)
def _normalize(w):
    out = np.maximum(w, 0.0)
    return out / out.sum()


@njit(cache=True)
def _objective(X1, X0, v, w):
    r = X1 - X0 @ w
    return (r * v) @ r


@njit(cache=True)
def _solve_core(X1, X0, v, tol, max_iter, loose):
    """Returns (w, objective, residual, iterations, non_unique)."""
    J = X0.shape[1]
    if J == 1:
        w = np.ones(1)
        return w, _objective(X1, X0, v, w), 0.0, 0, False
    sv = np.sqrt(v)
    A = np.ascontiguousarray(X0 * sv.reshape(-1, 1))
    b = X1 * sv
    w0, z0, y0 = _ipm_start(A, b)
    if loose:
        w_ipm, z_ipm, _, iterations, scale = _ipm(A, b, tol, max_iter, w0, z0, y0)
        w = _normalize(w_ipm)
        return w, max(_objective(X1, X0, v, w), 0.0), _gap_residual(A, b, w, scale), iterations, False
    # a moderately accurate iterate usually identifies the support, and the
    # polished solve is then exact; otherwise continue to a much tighter
    # target so the clipped iterate itself meets tol, keeping whichever
    # candidate has the smallest residual
    w_ipm, z_ipm, y_ipm, iterations, scale = _ipm(A, b, max(tol, POLISH_TOL), max_iter, w0, z0, y0)
    w_pol, ok, non_unique = _polish(A, b, w_ipm, z_ipm)
    if ok:
        w_pol = _normalize(w_pol)
        res_pol = _gap_residual(A, b, w_pol, scale)
        if res_pol <= tol:
            return w_pol, max(_objective(X1, X0, v, w_pol), 0.0), res_pol, iterations, non_unique
    w = _normalize(w_ipm)
    residual = _gap_residual(A, b, w, scale)
    if residual > tol * 1e-2:
        w_ipm, z_ipm, _, more, scale = _ipm(A, b, min(tol, 1e-12), max_iter - iterations, w_ipm, z_ipm, y_ipm)
        iterations += more
        w_more = _normalize(w_ipm)
        res_more = _gap_residual(A, b, w_more, scale)
        if res_more < residual:
            w, residual = w_more, res_more
        w_pol, ok, non_unique = _polish(A, b, w_ipm, z_ipm)
        if ok:
            w_pol = _normalize(w_pol)
            res_pol = _gap_residual(A, b, w_pol, scale)
            if res_pol <= max(residual, tol):
                w = w_pol
                residual = res_pol
    return w, max(_objective(X1, X0, v, w), 0.0), residual, iterations, non_unique


@njit(cache=True)
def search_score(X1, X0, v, tol, loose, y1t, Y0t, y1v, Y0v):
    """Solve for W(v) and return the (validation, training) outcome MSPE."""
    w = _solve_core(X1, X0, v, tol, MAX_ITER, loose)[0]
    rv = y1v - Y0v @ w
    rt = y1t - Y0t @ w
    return (rv @ rv) / rv.size, (rt @ rt) / rt.size


def kkt_residual(X1, X0, v, w) -> float:
    """Relative KKT residual of ``w`` for the simplex least-squares problem."""
    X1, X0, v = _check_inputs(X1, X0, v)
    sv = np.sqrt(v)
    A = np.ascontiguousarray(X0 * sv[:, None])
    b = X1 * sv
    return float(_gap_residual(A, b, np.asarray(w, dtype=np.float64), _scale(A, b)))


def _check_inputs(X1, X0, v) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X1 = np.ascontiguousarray(X1, dtype=np.float64)
    X0 = np.ascontiguousarray(X0, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if X0.ndim != 2 or X1.ndim != 1 or v.ndim != 1:
        raise QpInputError("expected X1 (k,), X0 (k, J), v (k,)")
    k, J = X0.shape
    if k < 1 or J < 1 or X1.size != k or v.size != k:
        raise QpInputError(f"shape mismatch: X1 {X1.shape}, X0 {X0.shape}, v {v.shape}")
    if not (np.isfinite(X1).all() and np.isfinite(X0).all() and np.isfinite(v).all()):
        raise QpInputError("non-finite input")
    if (v < 0).any() or not (v > 0).any():
        raise QpInputError("predictor weights must be nonnegative with at least one positive")
    return X1, X0, v


def solve_simplex_wls(
    X1,
    X0,
    v,
    tol: float = DEFAULT_TOL,
    *,
    max_iter: int = MAX_ITER,
    loose: bool = False,
) -> QpSolution:
    """Fit simplex weights matching ``X1`` by a convex combination of ``X0`` columns.

    Parameters
    ----------
    X1 : array_like, shape (k,)
        Treated predictor vector.
    X0 : array_like, shape (k, J)
        Donor predictor matrix, one column per donor.
    v : array_like, shape (k,)
        Nonnegative predictor weights, at least one positive.
    tol : float
        Target relative KKT residual.
    loose : bool
        Stop as soon as the residual falls below ``LOOSE_TOL`` (5%) instead
        of ``tol``. The returned weights are still projected onto the simplex.

    Returns
    -------
    QpSolution
        ``converged`` is False when the iteration cap was reached; the best
        iterate is returned in that case.
    """
    X1, X0, v = _check_inputs(X1, X0, v)
    target = LOOSE_TOL if loose else tol
    w, objective, residual, iterations, non_unique = _solve_core(X1, X0, v, target, max_iter, loose)
    return QpSolution(
        weights=SimplexWeights(w),
        objective=float(objective),
        kkt_residual=float(residual),
        iterations=int(iterations),
        converged=bool(residual <= target),
        non_unique_hint=bool(non_unique),
    )
