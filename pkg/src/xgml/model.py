"""Multi-output epsilon-SVR with an RBF kernel, 5-fold tuning and LOOCV evaluation."""

from __future__ import annotations

import csv
import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_targets
from .exceptions import DegenerateFold, SolverStall, TooFewRows, WidthMismatch, XgmlError

DEFAULT_C = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_FACTORS = (0.1, 1.0, 10.0)
DEFAULT_EPSILON = (0.01, 0.1, 1.0)
STD_FLOOR = 1e-12
MODEL_MAGIC = b"XGMLM1"
MODEL_VERSION = 1


@dataclass(frozen=True)
class SvrHyperParams:
    c: float
    gamma: float
    epsilon: float

    def __post_init__(self):
        if not (self.c > 0 and self.gamma > 0 and self.epsilon >= 0):
            raise ValueError(f"invalid hyperparameters {self}")


# ---------------------------------------------------------------------------
# helpers


def pearson_r(a, b) -> float:
    """Pearson correlation; 0.0 when either side has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0:
        return 0.0
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


def rbf_kernel(X, Z=None, gamma=1.0) -> np.ndarray:
    Z = X if Z is None else Z
    return np.exp(-gamma * cdist(X, Z, "sqeuclidean"))


def canonical_order(X, y=None) -> np.ndarray:
    """Row order that depends only on row contents (lexicographic), for order-free fits."""
    keys = [X[:, c] for c in range(X.shape[1] - 1, -1, -1)]
    if y is not None:
        keys.insert(0, y)
    return np.lexsort(keys)


def _sorted_column_stats(X):
    # sorting first makes the sums independent of row order
    s = np.sort(X, axis=0)
    mean = s.mean(axis=0)
    std = np.sqrt(np.mean((s - mean) ** 2, axis=0))
    const = s[0] == s[-1]
    mean[const] = s[0, const]
    std[const] = 0.0
    return mean, std


def scale_gamma(X) -> float:
    """``1 / (p * mean feature variance)``."""
    _, std = _sorted_column_stats(np.asarray(X, dtype=np.float64))
    var = float(np.mean(std**2))
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


class Standardizer(TransformerMixin, BaseEstimator):
    """Per-feature z-scoring with population std floored at 1e-12.

    Constant columns map to exactly 0.
    """

    def fit(self, X, y=None):
        X = check_features(X)
        if X.shape[0] < 2:
            raise TooFewRows("standardization needs at least 2 rows")
        self.mean_, std = _sorted_column_stats(X)
        self.scale_ = np.maximum(std, STD_FLOOR)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_features(X, n_features=self.n_features_in_)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        return np.asarray(X) * self.scale_ + self.mean_


# ---------------------------------------------------------------------------
# SMO solver


@numba.njit(cache=True)
def _smo(K, z, C, eps, tol, max_iter, track):
    n = z.shape[0]
    l = 2 * n
    beta = np.zeros(l)
    sgn = np.empty(l)
    p = np.empty(l)
    for t in range(n):
        sgn[t] = 1.0
        sgn[t + n] = -1.0
        p[t] = eps - z[t]
        p[t + n] = eps + z[t]
    G = p.copy()
    diag = np.empty(l)
    for t in range(l):
        diag[t] = K[t % n, t % n]
    tau = 1e-12
    history = np.empty(max_iter + 1 if track else 1)
    n_hist = 0
    it = 0
    violation = np.inf
    while True:
        # second-order working-set selection
        gmax = -np.inf
        i = -1
        for t in range(l):
            if sgn[t] > 0:
                if beta[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
            else:
                if beta[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    i = t
        gmax2 = -np.inf
        j = -1
        obj_min = np.inf
        for t in range(l):
            qit = sgn[i] * sgn[t] * K[i % n, t % n] if i >= 0 else 0.0
            if sgn[t] > 0:
                if beta[t] > 0:
                    grad_diff = gmax + G[t]
                    if G[t] >= gmax2:
                        gmax2 = G[t]
                    if grad_diff > 0:
                        quad = diag[i] + diag[t] - 2.0 * sgn[i] * qit
                        if quad <= 0:
                            quad = tau
                        od = -(grad_diff * grad_diff) / quad
                        if od <= obj_min:
                            j = t
                            obj_min = od
            else:
                if beta[t] < C:
                    grad_diff = gmax - G[t]
                    if -G[t] >= gmax2:
                        gmax2 = -G[t]
                    if grad_diff > 0:
                        quad = diag[i] + diag[t] + 2.0 * sgn[i] * qit
                        if quad <= 0:
                            quad = tau
                        od = -(grad_diff * grad_diff) / quad
                        if od <= obj_min:
                            j = t
                            obj_min = od
        violation = gmax + gmax2
        if track:
            obj = 0.0
            for t in range(l):
                obj += 0.5 * beta[t] * (G[t] + p[t])
            history[n_hist] = -obj
            n_hist += 1
        if violation < tol or j == -1 or it >= max_iter:
            break
        it += 1
        qij = sgn[i] * sgn[j] * K[i % n, j % n]
        old_i, old_j = beta[i], beta[j]
        if sgn[i] != sgn[j]:
            quad = diag[i] + diag[j] + 2.0 * qij
            if quad <= 0:
                quad = tau
            delta = (-G[i] - G[j]) / quad
            diff = beta[i] - beta[j]
            beta[i] += delta
            beta[j] += delta
            if diff > 0:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = diff
            else:
                if beta[i] < 0:
                    beta[i] = 0.0
                    beta[j] = -diff
            if diff > 0:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = C - diff
            else:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = C + diff
        else:
            quad = diag[i] + diag[j] - 2.0 * qij
            if quad <= 0:
                quad = tau
            delta = (G[i] - G[j]) / quad
            total = beta[i] + beta[j]
            beta[i] -= delta
            beta[j] += delta
            if total > C:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = total - C
            else:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = total
            if total > C:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = total - C
            else:
                if beta[i] < 0:
                    beta[i] = 0.0
                    beta[j] = total
        di = beta[i] - old_i
        dj = beta[j] - old_j
        for t in range(l):
            G[t] += sgn[t] * (sgn[i] * K[t % n, i % n] * di + sgn[j] * K[t % n, j % n] * dj)
    # offset from free variables, midpoint of the feasible interval otherwise
    ub = np.inf
    lb = -np.inf
    n_free = 0
    s_free = 0.0
    for t in range(l):
        yg = sgn[t] * G[t]
        if beta[t] >= C:
            if sgn[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif beta[t] <= 0:
            if sgn[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            s_free += yg
    rho = s_free / n_free if n_free > 0 else 0.5 * (ub + lb)
    coef = beta[:n] - beta[n:]
    return coef, -rho, it, violation, history[:n_hist], n_free


@dataclass
class DualSolution:
    coef: np.ndarray
    bias: float
    n_iter: int
    violation: float
    n_free: int
    stalled: bool
    objective_history: np.ndarray | None = None


def dual_objective(K, y, coef, epsilon) -> float:
    """``-1/2 c'Kc - eps * sum|c| + y'c`` for dual coefficients ``c = alpha - alpha*``."""
    coef = np.asarray(coef, dtype=np.float64)
    return float(-0.5 * coef @ K @ coef - epsilon * np.abs(coef).sum() + np.dot(y, coef))


def solve_svr_dual(K, y, c, epsilon, tol=1e-3, max_iter=100_000, track=False) -> DualSolution:
    """Solve the epsilon-SVR dual on a precomputed kernel by SMO.

    Stops when the maximal KKT violation drops below ``tol`` or after
    ``max_iter`` pair updates.  A stall (cap hit with violation above
    ``10 * tol``) is reported through a :class:`SolverStall` warning.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    coef, bias, it, viol, hist, n_free = _smo(K, y, float(c), float(epsilon), float(tol), int(max_iter), bool(track))
    stalled = it >= max_iter and viol > 10 * tol
    if stalled:
        warnings.warn(f"SMO hit {max_iter} iterations with KKT violation {viol:.3g}", SolverStall, stacklevel=2)
    return DualSolution(coef, float(bias), int(it), float(viol), int(n_free), stalled, hist if track else None)


# ---------------------------------------------------------------------------
# estimators


class EpsilonSVR(RegressorMixin, BaseEstimator):
    """Epsilon-insensitive kernel SVR (RBF) trained by working-set SMO.

    Parameters
    ----------
    C : float
        Box constraint on the dual coefficients.
    epsilon : float
        Half-width of the insensitive tube.
    gamma : float or "scale"
        RBF width; "scale" uses ``1 / (p * mean feature variance)``.
    """

    def __init__(self, C=1.0, epsilon=0.1, gamma="scale", tol=1e-3, max_iter=100_000, record_objective=False):
        self.C = C
        self.epsilon = epsilon
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter
        self.record_objective = record_objective

    def _resolve_gamma(self, X):
        if self.gamma == "scale":
            return scale_gamma(X)
        return float(self.gamma)

    def fit(self, X, y):
        X = check_features(X)
        y = check_targets(y, X.shape[0])
        if X.shape[0] < 2:
            raise TooFewRows("SVR needs at least 2 training rows")
        SvrHyperParams(float(self.C), 1.0, float(self.epsilon))
        order = canonical_order(X, y)
        X, y = X[order], y[order]
        self.gamma_ = self._resolve_gamma(X)
        K = rbf_kernel(X, gamma=self.gamma_)
        sol = solve_svr_dual(K, y, self.C, self.epsilon, self.tol, self.max_iter, self.record_objective)
        sv = sol.coef != 0
        self.support_ = order[sv]
        self.support_vectors_ = X[sv]
        self.dual_coef_ = sol.coef[sv]
        self.intercept_ = sol.bias
        self.n_iter_ = sol.n_iter
        self.kkt_violation_ = sol.violation
        self.stalled_ = sol.stalled
        self.objective_history_ = sol.objective_history
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def params_(self) -> SvrHyperParams:
        return SvrHyperParams(float(self.C), self.gamma_, float(self.epsilon))

    def predict(self, X):
        check_is_fitted(self, "dual_coef_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise WidthMismatch(f"model expects {self.n_features_in_} features, got {X.shape[1]}")
        if self.dual_coef_.size == 0:
            return np.full(X.shape[0], self.intercept_)
        return rbf_kernel(X, self.support_vectors_, self.gamma_) @ self.dual_coef_ + self.intercept_

    @classmethod
    def from_solution(cls, params: SvrHyperParams, support_vectors, dual_coef, intercept):
        est = cls(C=params.c, epsilon=params.epsilon, gamma=params.gamma)
        est.gamma_ = params.gamma
        est.support_vectors_ = np.asarray(support_vectors, dtype=np.float64)
        est.dual_coef_ = np.asarray(dual_coef, dtype=np.float64)
        est.intercept_ = float(intercept)
        est.n_features_in_ = est.support_vectors_.shape[1]
        return est


class MultiOutputSVR(RegressorMixin, BaseEstimator):
    """One :class:`EpsilonSVR` per outcome on shared standardized features.

    ``params`` optionally gives per-outcome :class:`SvrHyperParams`
    (or dicts with keys c/gamma/epsilon); otherwise ``C``, ``gamma`` and
    ``epsilon`` apply to every outcome.
    """

    def __init__(self, C=1.0, epsilon=0.1, gamma="scale", params=None, tol=1e-3, max_iter=100_000, outcome_names=None):
        self.C = C
        self.epsilon = epsilon
        self.gamma = gamma
        self.params = params
        self.tol = tol
        self.max_iter = max_iter
        self.outcome_names = outcome_names

    def _outcome_params(self, n_out):
        if self.params is None:
            return [dict(C=self.C, epsilon=self.epsilon, gamma=self.gamma)] * n_out
        if len(self.params) != n_out:
            raise ValueError(f"got {len(self.params)} parameter sets for {n_out} outcomes")
        out = []
        for p in self.params:
            p = asdict(p) if isinstance(p, SvrHyperParams) else dict(p)
            out.append(dict(C=p["c"], epsilon=p["epsilon"], gamma=p["gamma"]))
        return out

    def fit(self, X, Y):
        X = check_features(X)
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        self.standardizer_ = Standardizer().fit(X)
        Xs = self.standardizer_.transform(X)
        self.estimators_ = [
            EpsilonSVR(tol=self.tol, max_iter=self.max_iter, **kw).fit(Xs, Y[:, o])
            for o, kw in enumerate(self._outcome_params(Y.shape[1]))
        ]
        self.outcome_names_ = list(self.outcome_names or [f"y{o}" for o in range(Y.shape[1])])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "estimators_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise WidthMismatch(f"model expects {self.n_features_in_} features, got {X.shape[1]}")
        Xs = self.standardizer_.transform(X)
        return np.column_stack([est.predict(Xs) for est in self.estimators_])

    @property
    def stalls_(self):
        return [name for name, est in zip(self.outcome_names_, self.estimators_) if getattr(est, "stalled_", False)]

    # -- serialization -----------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        """Versioned binary: magic, uint32 header length, JSON header, float64 LE blobs."""
        check_is_fitted(self, "estimators_")
        arrays = {"mean": self.standardizer_.mean_, "scale": self.standardizer_.scale_}
        outcomes = []
        for o, est in enumerate(self.estimators_):
            arrays[f"sv{o}"] = est.support_vectors_
            arrays[f"coef{o}"] = est.dual_coef_
            outcomes.append(
                {
                    "name": self.outcome_names_[o],
                    "c": float(est.C),
                    "gamma": float(est.gamma_),
                    "epsilon": float(est.epsilon),
                    "bias": float(est.intercept_),
                    "n_support": int(est.dual_coef_.size),
                }
            )
        layout = [[name, list(np.shape(a))] for name, a in arrays.items()]
        header = {
            "version": MODEL_VERSION,
            "n_features": int(self.n_features_in_),
            "outcomes": outcomes,
            "layout": layout,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "extra": extra or {},
        }
        hbytes = json.dumps(header, sort_keys=True).encode()
        blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())
        Path(path).write_bytes(MODEL_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + blob)

    @classmethod
    def load(cls, path) -> "MultiOutputSVR":
        raw = Path(path).read_bytes()
        if raw[:6] != MODEL_MAGIC:
            raise XgmlError(f"{path}: not a model file")
        (hlen,) = struct.unpack("<I", raw[6:10])
        header = json.loads(raw[10 : 10 + hlen])
        if header["version"] != MODEL_VERSION:
            raise XgmlError(f"{path}: unsupported model version {header['version']}")
        pos = 10 + hlen
        arrays = {}
        for name, shape in header["layout"]:
            count = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += 8 * count
        params = [SvrHyperParams(o["c"], o["gamma"], o["epsilon"]) for o in header["outcomes"]]
        model = cls(params=params, tol=header["tol"], max_iter=header["max_iter"], outcome_names=[o["name"] for o in header["outcomes"]])
        model.standardizer_ = Standardizer()
        model.standardizer_.mean_ = arrays["mean"]
        model.standardizer_.scale_ = arrays["scale"]
        model.standardizer_.n_features_in_ = header["n_features"]
        model.estimators_ = [
            EpsilonSVR.from_solution(p, arrays[f"sv{o}"].reshape(-1, header["n_features"]), arrays[f"coef{o}"], header["outcomes"][o]["bias"])
            for o, p in enumerate(params)
        ]
        model.outcome_names_ = [o["name"] for o in header["outcomes"]]
        model.n_features_in_ = header["n_features"]
        model.extra_ = header["extra"]
        return model


# ---------------------------------------------------------------------------
# tuning and evaluation


def make_grid(X=None, c=DEFAULT_C, gamma_factors=DEFAULT_GAMMA_FACTORS, epsilon=DEFAULT_EPSILON, gamma=None):
    """List of hyperparameter points; gammas are ``factor * g0`` with g0 from standardized ``X``."""
    if gamma is None:
        if X is None:
            raise ValueError("need X to centre the gamma grid")
        Xs = Standardizer().fit_transform(check_features(X))
        g0 = scale_gamma(Xs)
        gamma = [f * g0 for f in gamma_factors]
    return [SvrHyperParams(float(ci), float(g), float(e)) for ci in c for g in gamma for e in epsilon]


def fold_assignment(n: int, n_folds: int = 5, seed: int = 42) -> list[np.ndarray]:
    """Shuffle subject indices once, then cut into contiguous folds."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, n_folds)]


def _fold_kernels_input(X, train, test):
    std = Standardizer().fit(X[train])
    Xtr = std.transform(X[train])
    Xte = std.transform(X[test])
    return Xtr, Xte


@dataclass
class GridSearchResult:
    best: list[SvrHyperParams]
    grid: list[SvrHyperParams]
    scores: np.ndarray  # (n_outcomes, n_grid) mean validation r
    folds: list[np.ndarray]
    seed: int
    spread: np.ndarray | None = None  # (n_outcomes, n_grid) validation prediction std / training target std, fold-averaged


def _select(scores_row, grid):
    # max r; ties -> smaller C, smaller gamma, larger epsilon
    keys = [(-s if np.isfinite(s) else np.inf, g.c, g.gamma, -g.epsilon) for s, g in zip(scores_row, grid)]
    return min(range(len(grid)), key=keys.__getitem__)


def grid_search_5fold(X, Y, grid=None, seed=42, n_folds=5, tol=1e-3, max_iter=100_000, cv_metric="pooled", min_spread=0.1) -> GridSearchResult:
    """Per-outcome hyperparameters maximizing validation Pearson r.

    ``cv_metric="fold_mean"`` averages the r of each validation fold
    (folds with constant targets are skipped); ``"pooled"`` computes one r
    over all out-of-fold predictions.  The standardizer is refit on each
    training split.

    A grid point whose predictions within a validation fold have a standard
    deviation below ``min_spread`` times the training targets' (averaged
    over folds) is treated as degenerate and only chosen if every point is.
    Pearson r of a near-constant predictor is driven by how the intercept
    moves when rows are held out, not by the features.
    """
    if cv_metric not in ("pooled", "fold_mean"):
        raise ValueError("cv_metric must be 'pooled' or 'fold_mean'")
    X = check_features(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, n_out = Y.shape
    grid = list(grid) if grid is not None else make_grid(X)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    folds = fold_assignment(n, n_folds, seed)
    if len(grid) == 1:
        return GridSearchResult([grid[0]] * n_out, grid, np.full((n_out, 1), np.nan), folds, seed)
    if n < 10:
        raise TooFewRows("5-fold grid search needs at least 10 subjects")
    sums = np.zeros((n_out, len(grid)))
    counts = np.zeros(n_out, dtype=int)
    oof = np.zeros((n_out, len(grid), n))
    spread = np.zeros((n_out, len(grid)))
    gammas = sorted({g.gamma for g in grid})
    for test in folds:
        train = np.setdiff1d(np.arange(n), test)
        Xtr, Xte = _fold_kernels_input(X, train, test)
        order = canonical_order(Xtr)
        Xtr, tr_idx = Xtr[order], train[order]
        d_tr = cdist(Xtr, Xtr, "sqeuclidean")
        d_te = cdist(Xte, Xtr, "sqeuclidean")
        kern = {g: (np.exp(-g * d_tr), np.exp(-g * d_te)) for g in gammas}
        for o in range(n_out):
            y_te = Y[test, o]
            degenerate = np.ptp(y_te) == 0
            if not degenerate:
                counts[o] += 1
            y_tr = Y[tr_idx, o]
            for gi, hp in enumerate(grid):
                Ktr, Kte = kern[hp.gamma]
                sol = solve_svr_dual(Ktr, y_tr, hp.c, hp.epsilon, tol, max_iter)
                pred = Kte @ sol.coef + sol.bias
                oof[o, gi, test] = pred
                spread[o, gi] += np.std(pred) / max(np.std(y_tr), np.finfo(float).tiny) / len(folds)
                if not degenerate:
                    sums[o, gi] += pearson_r(y_te, pred)
    if cv_metric == "pooled":
        scores = np.array([[pearson_r(Y[:, o], oof[o, gi]) for gi in range(len(grid))] for o in range(n_out)])
    else:
        if np.any(counts == 0):
            bad = [o for o in range(n_out) if counts[o] == 0]
            raise DegenerateFold(f"every validation fold has constant targets for outcome(s) {bad}")
        scores = sums / counts[:, None]
    best = []
    for o in range(n_out):
        usable = spread[o] >= min_spread
        row = np.where(usable, scores[o], np.nan) if usable.any() else scores[o]
        best.append(grid[_select(row, grid)])
    return GridSearchResult(best, grid, scores, folds, seed, spread)


@dataclass
class OutcomeEval:
    name: str
    pearson_r: float
    observed: np.ndarray
    predicted: np.ndarray
    params: SvrHyperParams | None = None
    stalls: list = field(default_factory=list)


@dataclass
class EvalReport:
    per_outcome: list[OutcomeEval]
    subject_ids: list

    @property
    def mean_r(self) -> float:
        return float(np.mean([o.pearson_r for o in self.per_outcome]))

    def to_dict(self) -> dict:
        return {
            "mean_r": self.mean_r,
            "outcomes": [
                {
                    "name": o.name,
                    "pearson_r": o.pearson_r,
                    "params": asdict(o.params) if o.params else None,
                    "solver_stalls": o.stalls,
                }
                for o in self.per_outcome
            ],
        }

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "eval_report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        for o in self.per_outcome:
            with open(out_dir / f"scatter_{o.name}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["subject_id", "observed", "predicted"])
                for sid, obs, pred in zip(self.subject_ids, o.observed, o.predicted):
                    w.writerow([sid, repr(float(obs)), repr(float(pred))])


def loocv_predictions(X, Y, params: Sequence[SvrHyperParams], tol=1e-3, max_iter=100_000):
    """Held-out predictions ``(n, n_outcomes)`` plus per-outcome stalled subject indices."""
    X = check_features(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, n_out = Y.shape
    if n < 3:
        raise TooFewRows("LOOCV needs at least 3 subjects")
    preds = np.empty((n, n_out))
    stalls = [[] for _ in range(n_out)]
    for i in range(n):
        train = np.delete(np.arange(n), i)
        Xtr, Xte = _fold_kernels_input(X, train, np.array([i]))
        order = canonical_order(Xtr, None)
        Xtr, tr_idx = Xtr[order], train[order]
        d_tr = cdist(Xtr, Xtr, "sqeuclidean")
        d_te = cdist(Xte, Xtr, "sqeuclidean")
        cache = {}
        for o in range(n_out):
            hp = params[o]
            if hp.gamma not in cache:
                cache[hp.gamma] = (np.exp(-hp.gamma * d_tr), np.exp(-hp.gamma * d_te))
            Ktr, Kte = cache[hp.gamma]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SolverStall)
                sol = solve_svr_dual(Ktr, Y[tr_idx, o], hp.c, hp.epsilon, tol, max_iter)
            if sol.stalled:
                stalls[o].append(i)
            preds[i, o] = (Kte @ sol.coef + sol.bias)[0]
    return preds, stalls


def loocv_evaluate(X, Y, params: Sequence[SvrHyperParams], outcome_names=None, subject_ids=None, tol=1e-3, max_iter=100_000) -> EvalReport:
    """Leave-one-out predictions and per-outcome Pearson r."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    preds, stalls = loocv_predictions(X, Y, params, tol, max_iter)
    names = list(outcome_names or [f"y{o}" for o in range(Y.shape[1])])
    ids = list(subject_ids) if subject_ids is not None else list(range(Y.shape[0]))
    per = [
        OutcomeEval(names[o], pearson_r(Y[:, o], preds[:, o]), Y[:, o].copy(), preds[:, o], params[o], stalls[o])
        for o in range(Y.shape[1])
    ]
    return EvalReport(per, ids)
