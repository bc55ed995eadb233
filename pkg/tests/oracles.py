"""Slow, independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


def erb_rate(f: float) -> float:
    return 21.4 * math.log10(4.37 * f / 1000.0 + 1.0)


def acf_direct(frame, n_lags: int = 320, eps: float = 1e-10) -> np.ndarray:
    """A(tau) = sum_n y(n) y(n - tau), y(n) = 0 outside the frame, over A(0) + eps."""
    y = [float(v) for v in frame]
    N = len(y)
    a0 = sum(v * v for v in y)
    out = np.zeros(n_lags)
    for tau in range(1, n_lags + 1):
        s = 0.0
        for n in range(tau, N):
            s += y[n] * y[n - tau]
        out[tau - 1] = s / (a0 + eps)
    return out


def edit_counts(ref, hyp) -> tuple[int, int, int]:
    """Top-down recursion for the minimal (edits, subs, ins) alignment, returned as (S, D, I)."""
    ref, hyp = tuple(ref), tuple(hyp)

    @lru_cache(maxsize=None)
    def best(i: int, j: int):
        # (edits, subs, ins, dels) aligning ref[i:] with hyp[j:]
        if i == len(ref):
            k = len(hyp) - j
            return (k, 0, k, 0)
        if j == len(hyp):
            k = len(ref) - i
            return (k, 0, 0, k)
        opts = []
        e, s, n, d = best(i + 1, j + 1)
        if ref[i] == hyp[j]:
            opts.append((e, s, n, d))
        else:
            opts.append((e + 1, s + 1, n, d))
        e, s, n, d = best(i + 1, j)
        opts.append((e + 1, s, n, d + 1))
        e, s, n, d = best(i, j + 1)
        opts.append((e + 1, s, n + 1, d))
        return min(opts, key=lambda t: t[:3])

    e, s, n, d = best(0, 0)
    return s, d, n


def edit_distance_bruteforce(ref, hyp) -> int:
    """Plain exponential recursion, no memoisation (sequences of length <= 8)."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    return min(
        edit_distance_bruteforce(ref[1:], hyp[1:]) + (ref[0] != hyp[0]),
        edit_distance_bruteforce(ref[1:], hyp) + 1,
        edit_distance_bruteforce(ref, hyp[1:]) + 1,
    )


def viterbi_bruteforce(E, n_states, log_stay, log_move, l_init, l_trans, l_final, penalty):
    """Score every state path of the connected event network; return the best as events.

    Returns ``[(class index, start, end), ...]``. Consecutive events of the same
    class are not allowed, matching the decoder's network.
    """
    E = np.asarray(E)
    T, N = E.shape
    C = len(n_states)
    first = np.concatenate([[0], np.cumsum(n_states)[:-1]]).astype(int)
    last = first + np.asarray(n_states) - 1
    cls = np.repeat(np.arange(C), n_states)
    # transition score matrix between flattened states (plus -inf where forbidden)
    A = np.full((N, N), -np.inf)
    for s in range(N):
        A[s, s] = log_stay[s]
        if s != last[cls[s]]:
            A[s, s + 1] = log_move[s]
        else:
            for c2 in range(C):
                if c2 != cls[s]:
                    A[s, first[c2]] = log_move[s] + l_trans[cls[s], c2] + penalty
    start = np.full(N, -np.inf)
    start[first] = l_init
    end = np.full(N, -np.inf)
    end[last] = log_move[last] + l_final
    paths = np.array(list(itertools.product(range(N), repeat=T)))
    with np.errstate(invalid="ignore"):
        score = start[paths[:, 0]] + end[paths[:, -1]] + E[np.arange(T), paths].sum(axis=1)
        for t in range(1, T):
            score = score + A[paths[:, t - 1], paths[:, t]]
    best = paths[int(np.argmax(score))]
    if not np.isfinite(score.max()):
        return None
    events = []
    for t, s in enumerate(best):
        entered = t == 0 or (s == first[cls[s]] and best[t - 1] != s)
        if entered:
            events.append([int(cls[s]), t, t + 1])
        else:
            events[-1][2] = t + 1
    return [tuple(e) for e in events], float(np.sort(score)[-1]), float(np.sort(score)[-2]) if len(score) > 1 else -np.inf
