"""Left-to-right HMMs with diagonal-GMM states, trained by Baum-Welch.

Each class model is trained in isolation on the labelled segments of its
class. Segments are processed as one padded batch so the forward-backward
recursion loops over time only.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..corpus import CLASSES
from .gmm import VAR_FLOOR, EmStats, Gmm, component_loglik, fit_gmm, m_step

logger = logging.getLogger(__name__)

#: states per class in the tandem recogniser
STATE_COUNTS = {"snore": 7, "breath": 5, "other": 3, "silence": 3}
N_MIX = 7
NEG_INF = -np.inf


@dataclass(frozen=True)
class HmmClassModel:
    """One event class: ``n_states`` in a chain, each with a self-loop.

    ``stay[s]`` is the self-loop probability of state ``s``; the remaining
    mass moves to ``s + 1``, or leaves the model from the last state.
    """

    label: str
    stay: np.ndarray
    states: tuple[Gmm, ...]

    def __post_init__(self):
        stay = np.asarray(self.stay, dtype=np.float64)
        if stay.shape != (len(self.states),):
            raise ValueError("one self-loop probability per state")
        if np.any(stay < 0) or np.any(stay >= 1):
            raise ValueError("self-loop probabilities must lie in [0, 1)")
        object.__setattr__(self, "stay", stay)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def transitions(self) -> np.ndarray:
        """``(S, S + 1)`` matrix; the last column is the exit transition."""
        S = self.n_states
        A = np.zeros((S, S + 1))
        A[np.arange(S), np.arange(S)] = self.stay
        A[np.arange(S), np.arange(S) + 1] = 1.0 - self.stay
        return A

    def log_stay(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.stay)

    def log_move(self) -> np.ndarray:
        return np.log1p(-self.stay)

    def state_loglik(self, X: np.ndarray) -> np.ndarray:
        """Emission log-likelihoods, ``(T, S)``."""
        return np.stack([logsumexp(component_loglik(g, X), axis=1) for g in self.states], axis=1)


@dataclass
class BaumWelchResult:
    model: HmmClassModel
    loglik: list  # weighted data log-likelihood per iteration
    n_frames: float


def _pad(segments, S, ll_fn):
    lengths = np.array([len(s) for s in segments])
    n, Lmax = len(segments), int(lengths.max())
    E = np.full((n, Lmax, S), NEG_INF)
    for i, seg in enumerate(segments):
        E[i, : len(seg)] = ll_fn(seg)
    return E, lengths


def forward_backward(E: np.ndarray, lengths: np.ndarray, log_stay: np.ndarray, log_move: np.ndarray):
    """Log-domain alpha/beta for a padded batch of left-to-right sequences.

    Every sequence starts in state 0 and must leave through the last state
    after its final frame. Returns ``alpha, beta, loglik`` with ``-inf``
    outside each sequence.
    """
    n, Lmax, S = E.shape
    alpha = np.full((n, Lmax, S), NEG_INF)
    alpha[:, 0, 0] = E[:, 0, 0]
    for t in range(1, Lmax):
        prev = alpha[:, t - 1]
        moved = np.full_like(prev, NEG_INF)
        moved[:, 1:] = prev[:, :-1] + log_move[:-1]
        alpha[:, t] = np.logaddexp(prev + log_stay, moved) + E[:, t]
    last = lengths - 1
    idx = np.arange(n)
    loglik = alpha[idx, last, S - 1] + log_move[S - 1]

    beta = np.full((n, Lmax, S), NEG_INF)
    init = np.full(S, NEG_INF)
    init[S - 1] = log_move[S - 1]
    for t in range(Lmax - 1, -1, -1):
        ends = last == t
        beta[ends, t] = init
        inner = last > t
        if t < Lmax - 1 and inner.any():
            nxt = E[inner, t + 1] + beta[inner, t + 1]
            b = nxt + log_stay
            b[:, :-1] = np.logaddexp(b[:, :-1], nxt[:, 1:] + log_move[:-1])
            beta[inner, t] = b
    return alpha, beta, loglik


def _uniform_states(length: int, S: int) -> np.ndarray:
    return (np.arange(length) * S) // length


def init_class_model(label: str, segments, weights, n_states: int, n_mix: int = N_MIX,
                     seed: int = 0, var_floor: float = VAR_FLOOR) -> HmmClassModel:
    """Uniform state segmentation, then one GMM per state."""
    state_frames = [[] for _ in range(n_states)]
    state_w = [[] for _ in range(n_states)]
    stay_n = np.zeros(n_states)
    leave_n = np.zeros(n_states)
    for seg, w in zip(segments, weights):
        st = _uniform_states(len(seg), n_states)
        for s in range(n_states):
            m = st == s
            state_frames[s].append(seg[m])
            state_w[s].append(np.full(int(m.sum()), w))
            stay_n[s] += w * (m.sum() - 1)
            leave_n[s] += w
    states = []
    for s in range(n_states):
        X = np.concatenate(state_frames[s])
        w = np.concatenate(state_w[s])
        K = max(1, min(n_mix, int(w.sum() // 10)))
        if K < n_mix:
            logger.warning("%s state %d: %.0f frames, using %d components", label, s, w.sum(), K)
        states.append(fit_gmm(X, K, seed=seed + 101 * s, weights=w, var_floor=var_floor))
    stay = stay_n / (stay_n + leave_n)
    return HmmClassModel(label, np.clip(stay, 0.0, 1 - 1e-6), tuple(states))


def baum_welch_step(model: HmmClassModel, segments, weights, var_floor: float = VAR_FLOOR):
    """One re-estimation pass; returns the new model and the old data log-likelihood."""
    S = model.n_states
    weights = np.asarray(weights, dtype=np.float64)
    comps = []

    def ll_fn(seg):
        per_state = [component_loglik(g, seg) for g in model.states]
        comps.append(per_state)
        return np.stack([logsumexp(c, axis=1) for c in per_state], axis=1)

    E, lengths = _pad(segments, S, ll_fn)
    ls, lm = model.log_stay(), model.log_move()
    alpha, beta, loglik = forward_backward(E, lengths, ls, lm)
    total = float(weights @ loglik)

    gamma = np.exp(alpha + beta - loglik[:, None, None]) * weights[:, None, None]
    # transition occupancy between t and t + 1
    nxt = E[:, 1:] + beta[:, 1:]
    with np.errstate(invalid="ignore"):
        stay_xi = np.exp(alpha[:, :-1] + ls + nxt - loglik[:, None, None])
        move_xi = np.exp(alpha[:, :-1, :-1] + lm[:-1] + nxt[:, :, 1:] - loglik[:, None, None])
    stay_xi = np.nan_to_num(stay_xi) * weights[:, None, None]
    move_xi = np.nan_to_num(move_xi) * weights[:, None, None]
    stay_n = stay_xi.sum(axis=(0, 1))
    leave_n = np.zeros(S)
    leave_n[:-1] = move_xi.sum(axis=(0, 1))
    leave_n[-1] = weights.sum()
    stay = np.where(stay_n + leave_n > 0, stay_n / np.maximum(stay_n + leave_n, 1e-300), model.stay)

    new_states = []
    for s, g in enumerate(model.states):
        stats = EmStats.zeros(g.n_components, g.dim)
        for i, seg in enumerate(segments):
            c = comps[i][s]
            g_t = gamma[i, : len(seg), s]
            post = np.exp(c - logsumexp(c, axis=1, keepdims=True)) * g_t[:, None]
            stats.add(seg, post)
        new_states.append(m_step(g, stats, var_floor))
    return HmmClassModel(model.label, np.clip(stay, 0.0, 1 - 1e-12), tuple(new_states)), total


def segments_loglik(model: HmmClassModel, segments, weights=None) -> float:
    weights = np.ones(len(segments)) if weights is None else np.asarray(weights, dtype=np.float64)
    E, lengths = _pad(segments, model.n_states, model.state_loglik)
    _, _, loglik = forward_backward(E, lengths, model.log_stay(), model.log_move())
    return float(weights @ loglik)


def baum_welch(model: HmmClassModel, segments, weights=None, max_iter: int = 20,
               tol: float = 1e-5, var_floor: float = VAR_FLOOR) -> BaumWelchResult:
    """Iterate re-estimation until the per-frame gain drops below ``tol``.

    The returned ``loglik`` holds the data log-likelihood under every model
    visited, the final one included.
    """
    weights = np.ones(len(segments)) if weights is None else np.asarray(weights, dtype=np.float64)
    n_frames = float(sum(w * len(s) for s, w in zip(segments, weights)))
    history = []
    for it in range(max_iter):
        new, cur = baum_welch_step(model, segments, weights, var_floor)
        history.append(cur)
        if it and (cur - history[-2]) / n_frames < tol:
            break
        model = new
    else:
        history.append(segments_loglik(model, segments, weights))
    return BaumWelchResult(model, history, n_frames)


def train_class(label: str, segments, weights=None, n_states: int | None = None,
                n_mix: int = N_MIX, max_iter: int = 20, tol: float = 1e-5, seed: int = 0,
                var_floor: float = VAR_FLOOR) -> BaumWelchResult:
    """Initialise and Baum-Welch train one class model on its segments."""
    n_states = n_states or STATE_COUNTS[label]
    weights = np.ones(len(segments)) if weights is None else np.asarray(weights, dtype=np.float64)
    keep = [i for i, s in enumerate(segments) if len(s) >= n_states]
    if len(keep) < len(segments):
        warnings.warn(
            f"{label}: skipped {len(segments) - len(keep)} segments shorter than {n_states} frames",
            RuntimeWarning,
        )
    if not keep:
        raise ValueError(f"no usable training data for class {label!r}")
    segments = [np.asarray(segments[i], dtype=np.float64) for i in keep]
    weights = weights[keep]
    model = init_class_model(label, segments, weights, n_states, n_mix, seed, var_floor)
    result = baum_welch(model, segments, weights, max_iter, tol, var_floor)
    logger.info("%s: %d segments, log-likelihood/frame %.4f after %d iterations",
                label, len(segments), result.loglik[-1] / result.n_frames, len(result.loglik) - 1)
    return result


def train_tandem(segments_by_class: dict, weights_by_class: dict | None = None, n_mix: int = N_MIX,
                 max_iter: int = 20, tol: float = 1e-5, seed: int = 0,
                 var_floor: float = VAR_FLOOR) -> tuple[dict, dict]:
    """Train all four class models; returns ``(models, histories)`` keyed by class."""
    models, histories = {}, {}
    for c, label in enumerate(CLASSES):
        segs = segments_by_class.get(label) or []
        if not segs:
            raise ValueError(f"class {label!r} has no training segments")
        w = None if weights_by_class is None else weights_by_class.get(label)
        res = train_class(label, segs, w, STATE_COUNTS[label], n_mix, max_iter, tol,
                          seed + 1000 * c, var_floor)
        models[label] = res.model
        histories[label] = res.loglik
    return models, histories
