"""Independent reference implementations used as test oracles.

Nothing here imports the package's numerical code: each oracle restates
the definition directly (brute force, dense matrices, generic solvers).
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# --- DTW --------------------------------------------------------------------


def warping_paths(n, m):
    """Every monotone path from (0, 0) to (n-1, m-1) with unit steps."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                for rest in walk(a, b):
                    yield [(i, j)] + rest

    return list(walk(0, 0))


def brute_force_dtw(a, b, squared=False):
    """Minimum path cost over all enumerated warping paths."""
    best = math.inf
    for path in warping_paths(len(a), len(b)):
        total = 0.0
        for i, j in path:
            d = a[i] - b[j]
            total += d * d if squared else abs(d)
        best = min(best, total)
    return best


# --- KDE / ISJ ---------------------------------------------------------------


def direct_kde(samples, h, points):
    x = np.asarray(samples, dtype=float)
    u = (np.asarray(points, dtype=float)[:, None] - x[None, :]) / h
    return np.exp(-0.5 * u * u).sum(axis=1) / (len(x) * h * math.sqrt(2 * math.pi))


def reference_silverman(samples):
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    sd = math.sqrt(sum((v - x.mean()) ** 2 for v in x) / n)
    iqr = np.quantile(x, 0.75) - np.quantile(x, 0.25)
    return 0.9 * min(sd, iqr / 1.34) * n ** (-0.2)


class IsjOracle:
    """ISJ fixed point from an explicit cosine matrix and a grid-scan root search."""

    def __init__(self, bins=4096):
        self.bins = bins
        j = np.arange(bins)
        k = np.arange(1, bins)
        # unnormalized type-II DCT: a_k = 2 * sum_j c_j cos(pi k (2j+1) / (2N))
        self.cos = 2.0 * np.cos(np.pi * np.outer(k, 2 * j + 1) / (2 * bins))
        self.k2 = k.astype(float) ** 2

    def coefficients(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = x.min(), x.max()
        idx = np.floor((x - lo) / (hi - lo) * self.bins).astype(int)
        idx[idx == self.bins] = self.bins - 1
        counts = np.zeros(self.bins)
        np.add.at(counts, idx, 1.0)
        return self.cos @ (counts / len(x))

    def equation(self, t, n, a):
        a2 = (a / 2.0) ** 2
        ell = 7
        f = 2 * np.pi ** (2 * ell) * np.sum(self.k2**ell * a2 * np.exp(-self.k2 * np.pi**2 * t))
        for s in range(ell - 1, 1, -1):
            odd_product = math.prod(range(1, 2 * s, 2))
            k0 = odd_product / math.sqrt(2 * math.pi)
            c = (1 + (1 / 2) ** (s + 0.5)) / 3
            ts = (2 * c * k0 / n / f) ** (2 / (3 + 2 * s))
            f = 2 * np.pi ** (2 * s) * np.sum(self.k2**s * a2 * np.exp(-self.k2 * np.pi**2 * ts))
        return t - (2 * n * math.sqrt(math.pi) * f) ** (-2 / 5)

    def root(self, x, points=4000):
        """Scan a log grid on (0, 0.1] for the first sign change, then bisect to machine precision."""
        a = self.coefficients(x)
        n = len(x)
        grid = np.geomspace(1e-12, 0.1, points)
        vals = [self.equation(t, n, a) for t in grid]
        for i in range(len(grid) - 1):
            if np.sign(vals[i]) != np.sign(vals[i + 1]):
                lo, hi, flo = grid[i], grid[i + 1], vals[i]
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    fm = self.equation(mid, n, a)
                    if np.sign(fm) == np.sign(flo):
                        lo, flo = mid, fm
                    else:
                        hi = mid
                    if hi - lo <= 1e-16 * hi:
                        break
                return 0.5 * (lo + hi)
        return None


# --- epsilon-SVR dual -------------------------------------------------------


def reference_svr_dual(K, y, C, eps):
    """Dense interior-point solve of the dual; returns (beta, objective, bias)."""
    import cvxpy as cp

    n = len(y)
    L = np.linalg.cholesky(K + 1e-12 * np.eye(n))
    beta = cp.Variable(n)
    objective = cp.Maximize(-0.5 * cp.sum_squares(L.T @ beta) - eps * cp.norm1(beta) + y @ beta)
    problem = cp.Problem(objective, [cp.sum(beta) == 0, beta <= C, beta >= -C])
    problem.solve(
        solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12, max_iter=500
    )
    b = np.asarray(beta.value).ravel()
    obj = -0.5 * b @ K @ b - eps * np.abs(b).sum() + y @ b
    # bias from free coefficients: y_i - f_i = eps * sign(beta_i)
    free = (np.abs(b) > 1e-6 * C) & (np.abs(b) < C * (1 - 1e-6))
    f = K @ b
    r = y - f
    if free.any():
        bias = float(np.mean(r[free] - eps * np.sign(b[free])))
    else:
        # KKT interval for b: zero coefs give r-eps <= b <= r+eps,
        # coefs at +C give b <= r-eps, at -C give b >= r+eps
        zero = np.abs(b) <= 1e-6 * C
        upper = np.concatenate([r[zero] + eps, r[b >= C * (1 - 1e-6)] - eps])
        lower = np.concatenate([r[zero] - eps, r[b <= -C * (1 - 1e-6)] + eps])
        bias = float(0.5 * (lower.max() + upper.min()))
    return b, float(obj), bias


def rbf(X, Z, gamma):
    d = ((X[:, None, :] - Z[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-gamma * d)


# --- misc ---------------------------------------------------------------------


def sort_trimmed_mean(values, trim):
    v = sorted(values)
    cut = int(math.floor(trim * len(v)))
    kept = v[cut : len(v) - cut]
    return sum(kept) / len(kept)


def pearson(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.corrcoef(a, b)[0, 1])


def upper_pairs(k):
    return [(i, j) for i, j in itertools.combinations(range(k), 2)]
