"""Reference implementations used only to check the library.

Each oracle takes a different route to the same answer: proximal gradient
instead of coordinate descent, vertex enumeration or the dual LP instead of
the primal simplex, nested loops instead of vectorized argmax.
"""

import itertools

import numpy as np
from scipy.optimize import linprog


# ------------------------------------------------------------ regression

def normal_equations(X, y):
    return np.linalg.solve(X.T @ X, X.T @ y)


def standardized(X, y):
    """Centered, unit-variance columns and centered target (population moments)."""
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return (X - mu) / sd, y - y.mean(), mu, sd


def elastic_net_objective(X, y, b0, w, lam1, lam2):
    """``RSS/(2N) + lam1 |w_std|_1 + lam2 |w_std|^2`` with ``w`` on the original scale."""
    sd = X.std(axis=0)
    r = y - b0 - X @ w
    ws = w * sd
    return r @ r / (2 * len(y)) + lam1 * np.abs(ws).sum() + lam2 * (ws @ ws)


def proximal_gradient(X, y, lam1, lam2=0.0, iters=200_000, tol=1e-15):
    """Accelerated proximal gradient (FISTA) on the standardized problem.

    Returns ``(intercept, weights)`` on the original scale.
    """
    Z, yc, mu, sd = standardized(X, y)
    n = len(y)
    L = np.linalg.eigvalsh(Z.T @ Z / n).max() + 2 * lam2
    step = 1.0 / L
    b = np.zeros(Z.shape[1])
    v = b.copy()
    t = 1.0
    for _ in range(iters):
        grad = -Z.T @ (yc - Z @ v) / n + 2 * lam2 * v
        u = v - step * grad
        b_new = np.sign(u) * np.maximum(np.abs(u) - step * lam1, 0.0)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        v = b_new + (t - 1) / t_new * (b_new - b)
        done = np.max(np.abs(b_new - b)) < tol
        b, t = b_new, t_new
        if done:
            break
    w = b / sd
    return y.mean() - mu @ w, w


# ---------------------------------------------------- quantile regression

def check_loss(r, level):
    return float(np.sum(np.where(r < 0, (level - 1) * r, level * r)))


def vertex_enumeration(A, y, level):
    """Minimum check loss over every basic solution interpolating ``p`` observations."""
    n, p = A.shape
    subsets = np.array(list(itertools.combinations(range(n), p)))
    M = A[subsets]  # S x p x p
    rhs = y[subsets]
    ok = np.abs(np.linalg.det(M)) > 1e-12
    beta = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
    r = y[None, :] - beta @ A.T
    loss = np.where(r < 0, (level - 1) * r, level * r).sum(axis=1)
    best = int(np.argmin(loss))
    return float(loss[best]), beta[best]


def quantile_dual_objective(A, y, level):
    """Optimal value of the dual LP ``max y'z  s.t. A'z = 0, level - 1 <= z <= level``."""
    n = len(y)
    res = linprog(-y, A_eq=A.T, b_eq=np.zeros(A.shape[1]),
                  bounds=[(level - 1, level)] * n, method="highs-ipm",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0
    return -res.fun


def type7_quantile(x, a):
    """Linear interpolation between order statistics at position ``(n - 1) a``."""
    s = np.sort(x)
    pos = (len(s) - 1) * a
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


# ----------------------------------------------------------------- battery

def battery_brute_force(upper, lower, efficiency=0.8):
    """Nested loops over h1 < h2 with a strict improvement rule (first maximum wins)."""
    best, arg = -np.inf, None
    for h1 in range(24):
        for h2 in range(h1 + 1, 24):
            val = efficiency * lower[h2] - upper[h1]
            if val > best:
                best, arg = val, (h1 + 1, h2 + 1)
    return arg, best


def best_daily_profit(prices, efficiency=0.8):
    return max(efficiency * prices[j] - prices[i] for i in range(24) for j in range(i + 1, 24))
