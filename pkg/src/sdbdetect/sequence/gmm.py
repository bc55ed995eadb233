"""Diagonal-covariance Gaussian mixtures fitted by weighted EM."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class Gmm:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        v = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if m.shape != v.shape or w.shape != (m.shape[0],):
            raise ValueError("inconsistent GMM parameter shapes")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError("GMM weights must form a probability simplex")
        if np.any(v <= 0):
            raise ValueError("GMM variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def component_loglik(g: Gmm, X: np.ndarray) -> np.ndarray:
    """``log w_k + log N(x; mu_k, diag var_k)`` for every frame, ``(T, K)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != g.dim:
        raise ValueError(f"frame dimension {X.shape[1]} != GMM dimension {g.dim}")
    prec = 1.0 / g.variances
    # expand the quadratic so the (T, K, D) tensor is never built
    quad = (X**2) @ prec.T - 2.0 * X @ (g.means * prec).T + np.sum(g.means**2 * prec, axis=1)
    const = -0.5 * (g.dim * LOG_2PI + np.sum(np.log(g.variances), axis=1))
    with np.errstate(divide="ignore"):
        logw = np.log(g.weights)
    return logw + const - 0.5 * np.maximum(quad, 0.0)


def gmm_loglik(g: Gmm, x) -> np.ndarray | float:
    """Log density of a frame (scalar) or of each row of a frame matrix."""
    x = np.asarray(x, dtype=np.float64)
    ll = logsumexp(component_loglik(g, np.atleast_2d(x)), axis=1)
    return float(ll[0]) if x.ndim == 1 else ll


def _dedupe(X: np.ndarray, w: np.ndarray):
    """Collapse repeated rows into unique rows carrying summed weights."""
    uniq, inv = np.unique(X, axis=0, return_inverse=True)
    uw = np.bincount(inv.ravel(), weights=w, minlength=len(uniq))
    return uniq, uw


def kmeans_pp(X: np.ndarray, w: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Weighted k-means++ seeding; returns ``K`` row indices of ``X``."""
    n = len(X)
    first = rng.choice(n, p=w / w.sum())
    chosen = [first]
    d2 = np.sum((X - X[first]) ** 2, axis=1)
    for _ in range(1, K):
        p = w * d2
        total = p.sum()
        if total <= 0:
            # fewer distinct points than components
            idx = rng.choice(n, p=w / w.sum())
        else:
            idx = rng.choice(n, p=p / total)
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(chosen)


def init_gmm(X: np.ndarray, K: int, seed: int = 0, weights=None, var_floor: float = VAR_FLOOR) -> Gmm:
    """Seed a GMM from k-means++ centres and a nearest-centre partition."""
    X = np.asarray(X, dtype=np.float64)
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=np.float64)
    U, uw = _dedupe(X, w)
    rng = np.random.default_rng(seed)
    centres = U[kmeans_pp(U, uw, K, rng)]
    d2 = ((U[:, None, :] - centres[None]) ** 2).sum(-1) if len(U) * K * U.shape[1] < 5e7 else \
        (U**2).sum(1)[:, None] - 2 * U @ centres.T + (centres**2).sum(1)
    assign = np.argmin(d2, axis=1)
    gvar = np.maximum(np.average((U - np.average(U, axis=0, weights=uw)) ** 2, axis=0, weights=uw), var_floor)
    weights_k = np.empty(K)
    means = np.empty((K, U.shape[1]))
    variances = np.empty((K, U.shape[1]))
    for k in range(K):
        m = assign == k
        wk = uw[m].sum()
        weights_k[k] = wk
        if wk > 0:
            means[k] = np.average(U[m], axis=0, weights=uw[m])
            v = np.average((U[m] - means[k]) ** 2, axis=0, weights=uw[m])
            # singleton clusters borrow the global spread
            variances[k] = np.where(v > var_floor, v, gvar) if m.sum() > 1 else gvar
        else:
            means[k] = centres[k]
            variances[k] = gvar
    weights_k = np.maximum(weights_k, 1e-3 * weights_k.sum())
    return Gmm(weights_k / weights_k.sum(), means, np.maximum(variances, var_floor))


@dataclass
class EmStats:
    occ: np.ndarray  # (K,)
    first: np.ndarray  # (K, D)
    second: np.ndarray  # (K, D)

    @classmethod
    def zeros(cls, K: int, D: int) -> "EmStats":
        return cls(np.zeros(K), np.zeros((K, D)), np.zeros((K, D)))

    def add(self, X: np.ndarray, post: np.ndarray) -> None:
        """Accumulate weighted statistics; ``post`` is ``(T, K)`` occupancy."""
        self.occ += post.sum(axis=0)
        self.first += post.T @ X
        self.second += post.T @ (X**2)


def m_step(g: Gmm, stats: EmStats, var_floor: float = VAR_FLOOR) -> Gmm:
    """Re-estimate a GMM from accumulated statistics.

    Components with no occupancy keep their old mean and variance and get
    zero weight.
    """
    occ = stats.occ
    total = occ.sum()
    if total <= 0:
        return g
    live = occ > 1e-10 * total
    means = g.means.copy()
    variances = g.variances.copy()
    means[live] = stats.first[live] / occ[live, None]
    var = stats.second[live] / occ[live, None] - means[live] ** 2
    variances[live] = np.maximum(var, var_floor)
    weights = np.where(live, occ, 0.0)
    return Gmm(weights / weights.sum(), means, variances)


def fit_gmm(
    data,
    K: int = 7,
    seed: int = 0,
    weights=None,
    max_iter: int = 50,
    tol: float = 1e-6,
    var_floor: float = VAR_FLOOR,
    history: list | None = None,
) -> Gmm:
    """Fit a ``K``-component diagonal GMM by EM from a k-means++ start.

    Stops after ``max_iter`` iterations or when the average log-likelihood
    per frame improves by less than ``tol``. Per-frame ``weights`` act as
    repetition counts. If ``history`` is given, the weighted data
    log-likelihood before every M-step and after the last one is appended.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.sum() < 10 * K:
        raise ValueError(f"{w.sum():g} frames are too few for {K} components (need >= {10 * K})")
    if np.all(X == X[0]):
        warnings.warn("all frames identical; variances fall back to the floor", RuntimeWarning)
    g = init_gmm(X, K, seed, w, var_floor)
    total_w = w.sum()
    prev = -np.inf
    for it in range(max_iter):
        comp = component_loglik(g, X)
        ll = logsumexp(comp, axis=1)
        cur = float(w @ ll)
        if history is not None:
            history.append(cur)
        if it and (cur - prev) / total_w < tol:
            break
        prev = cur
        post = np.exp(comp - ll[:, None]) * w[:, None]
        stats = EmStats.zeros(K, X.shape[1])
        stats.add(X, post)
        g = m_step(g, stats, var_floor)
    else:
        if history is not None:
            history.append(float(w @ gmm_loglik(g, X)))
    return g
