"""Event bigram language model and class priors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..corpus import CLASS_INDEX, CLASSES, FrameLabels, LabelTrack, fill_silence

N_CLASSES = len(CLASSES)


@dataclass(frozen=True)
class BigramLm:
    """Add-``alpha`` smoothed event bigram over the merged classes.

    ``trans[i, j]`` is P(next event j | previous event i); ``initial`` and
    ``final`` give the first and last event of a recording.
    """

    initial: np.ndarray
    trans: np.ndarray
    final: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        for name in ("initial", "trans", "final"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(arr <= 0):
                raise ValueError(f"{name}: every probability must be positive")
            sums = arr.sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > 1e-9):
                raise ValueError(f"{name}: rows must sum to 1")
            object.__setattr__(self, name, arr)

    def log_initial(self):
        return np.log(self.initial)

    def log_trans(self):
        return np.log(self.trans)

    def log_final(self):
        return np.log(self.final)


def track_events(track: LabelTrack) -> list[str]:
    """Event label sequence of a merged track, gaps counted as silence."""
    return [s.label for s in fill_silence(track).segments]


def train_bigram(tracks, alpha: float = 1.0) -> BigramLm:
    """Count event bigrams in merged tracks (or label sequences) and smooth."""
    tracks = list(tracks)
    if not tracks:
        raise ValueError("train_bigram needs at least one track")
    init = np.zeros(N_CLASSES)
    final = np.zeros(N_CLASSES)
    pairs = np.zeros((N_CLASSES, N_CLASSES))
    for tr in tracks:
        seq = track_events(tr) if isinstance(tr, LabelTrack) else list(tr)
        idx = [CLASS_INDEX[c] for c in seq]
        if not idx:
            continue
        init[idx[0]] += 1
        final[idx[-1]] += 1
        for a, b in zip(idx, idx[1:]):
            pairs[a, b] += 1
    trans = (pairs + alpha) / (pairs.sum(axis=1, keepdims=True) + N_CLASSES * alpha)
    initial = (init + alpha) / (init.sum() + N_CLASSES * alpha)
    fin = (final + alpha) / (final.sum() + N_CLASSES * alpha)
    return BigramLm(initial, trans, fin, alpha)


@dataclass(frozen=True)
class ClassPriors:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (N_CLASSES,) or np.any(p <= 0) or abs(p.sum() - 1) > 1e-9:
            raise ValueError("priors must be a positive distribution over the classes")
        object.__setattr__(self, "probs", p)


def estimate_priors(frame_labels) -> ClassPriors:
    """Relative class frequencies of training frames, add-one smoothed."""
    counts = np.ones(N_CLASSES)
    for f in frame_labels:
        labels = f.labels if isinstance(f, FrameLabels) else np.asarray(f)
        counts += np.bincount(labels, minlength=N_CLASSES)
    return ClassPriors(counts / counts.sum())
