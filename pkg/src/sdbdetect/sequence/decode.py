"""Viterbi decoding over the connected event network, and decoder tuning.

Class models are joined in a loop: leaving the last state of one class
enters the first state of any *other* class, paying the scaled bigram
log-probability plus the insertion penalty. Two consecutive events never
share a label, so decoded events are maximal label runs.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..corpus import CLASSES, Event, EventSequence, FrameLabels, events_to_frames, frames_to_events
from ..metrics import confusion_matrix, event_error_rate, pooled_event_error, report_from_confusion
from .lm import BigramLm, ClassPriors

logger = logging.getLogger(__name__)

NEG_INF = -np.inf
MODES = ("tandem", "hybrid")


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class DecodeConfig:
    lm_scale: float = 1.0
    insertion_penalty: float = 0.0
    mode: str = "tandem"

    def __post_init__(self):
        if not np.isfinite(self.lm_scale) or self.lm_scale < 0:
            raise ValueError("lm_scale must be finite and non-negative")
        if np.isnan(self.insertion_penalty):
            raise ValueError("insertion_penalty must not be NaN")
        if self.mode not in MODES:
            raise ValueError(f"unknown decode mode {self.mode!r}")


@dataclass(frozen=True)
class Network:
    """Flattened decoding network: per-state class, position and transitions."""

    n_states: tuple  # states per class
    log_stay: np.ndarray  # (N,)
    log_move: np.ndarray  # (N,); exit cost on each class's last state

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.n_states)[:-1]]).astype(int)

    @property
    def size(self) -> int:
        return int(sum(self.n_states))


def tandem_network(models: dict) -> Network:
    ms = [models[c] for c in CLASSES]
    return Network(
        tuple(m.n_states for m in ms),
        np.concatenate([m.log_stay() for m in ms]),
        np.concatenate([m.log_move() for m in ms]),
    )


def hybrid_network(n_classes: int = len(CLASSES)) -> Network:
    return Network((1,) * n_classes, np.zeros(n_classes), np.zeros(n_classes))


def tandem_emissions(models: dict, X: np.ndarray) -> np.ndarray:
    return np.hstack([models[c].state_loglik(X) for c in CLASSES])


def hybrid_emissions(post: np.ndarray, priors: ClassPriors) -> np.ndarray:
    """Scaled log-likelihoods ``log p(c|x) - log p(c)``."""
    post = np.asarray(post, dtype=np.float64)
    if post.ndim != 2 or post.shape[1] != len(priors.probs):
        raise DecodeError(f"posteriors must be T x {len(priors.probs)}")
    with np.errstate(divide="ignore"):
        return np.log(post) - np.log(priors.probs)


def _lm_terms(lm: BigramLm | None, cfg: DecodeConfig, C: int):
    if lm is None:
        return np.zeros(C), np.zeros((C, C)), np.zeros(C)
    s = cfg.lm_scale
    return s * lm.log_initial(), s * lm.log_trans(), s * lm.log_final()


def viterbi(emissions: np.ndarray, net: Network, lm: BigramLm | None, cfg: DecodeConfig) -> EventSequence:
    """Best event sequence for a ``(T, N)`` matrix of state log-likelihoods.

    Ties go to the lower class index (snore, breath, other, silence); within
    a class, staying in a state beats advancing, which beats a new event.
    """
    E = np.asarray(emissions, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] == 0:
        raise DecodeError("empty observation sequence")
    if E.shape[1] != net.size:
        raise DecodeError(f"{E.shape[1]} emission columns for a {net.size}-state network")
    if np.any(np.isnan(E)) or np.any(E == np.inf):
        raise DecodeError("non-finite emission scores")
    T, N = E.shape
    C = len(net.n_states)
    first = net.offsets
    last = first + np.array(net.n_states) - 1
    l_init, l_trans, l_final = _lm_terms(lm, cfg, C)
    # entering class j from class i; same-class re-entry is not allowed
    enter = l_trans + cfg.insertion_penalty
    enter[np.arange(C), np.arange(C)] = NEG_INF
    is_first = np.zeros(N, dtype=bool)
    is_first[first] = True
    cls_of = np.repeat(np.arange(C), net.n_states)

    delta = np.full(N, NEG_INF)
    delta[first] = l_init + E[0, first]
    # backpointer codes: 0 stay, 1 advance, 2 + i entered from class i
    back = np.zeros((T, N), dtype=np.int16)
    stay, move = net.log_stay, net.log_move
    for t in range(1, T):
        cand_stay = delta + stay
        cand_move = np.full(N, NEG_INF)
        cand_move[1:] = delta[:-1] + move[:-1]
        cand_move[is_first] = NEG_INF
        exit_score = delta[last] + move[last]  # (C,)
        entry = exit_score[:, None] + enter  # (from, to)
        src = np.argmax(entry, axis=0)
        entry_best = entry[src, np.arange(C)]
        cand_enter = np.full(N, NEG_INF)
        cand_enter[first] = entry_best
        best = cand_stay
        code = np.zeros(N, dtype=np.int16)
        m = cand_move > best
        best = np.where(m, cand_move, best)
        code[m] = 1
        m = cand_enter > best
        best = np.where(m, cand_enter, best)
        code[m] = 2 + src[cls_of[m]]
        delta = best + E[t]
        back[t] = code

    final = delta[last] + move[last] + l_final
    c_end = int(np.argmax(final))
    if not np.isfinite(final[c_end]):
        raise DecodeError("no complete path through the network")

    events = []
    s = int(last[c_end])
    end = T
    for t in range(T - 1, 0, -1):
        code = back[t, s]
        if code == 1:
            s -= 1
        elif code >= 2:
            events.append(Event(CLASSES[cls_of[s]], t, end))
            end = t
            s = int(last[code - 2])
    events.append(Event(CLASSES[cls_of[s]], 0, end))
    return EventSequence(tuple(reversed(events)))


# --------------------------------------------------------------------------
# recognisers


@dataclass(frozen=True)
class Recognizer:
    """Everything needed to turn observations into events."""

    mode: str
    lm: BigramLm | None
    models: dict | None = None  # tandem: class -> HmmClassModel
    priors: ClassPriors | None = None  # hybrid

    def network(self) -> Network:
        return tandem_network(self.models) if self.mode == "tandem" else hybrid_network()

    def emissions(self, obs: np.ndarray) -> np.ndarray:
        """``obs`` are features (tandem) or class posteriors (hybrid)."""
        if self.mode == "tandem":
            return tandem_emissions(self.models, obs)
        return hybrid_emissions(obs, self.priors)

    def decode(self, obs, cfg: DecodeConfig, use_lm: bool = True) -> EventSequence:
        return viterbi(self.emissions(obs), self.network(), self.lm if use_lm else None, cfg)


def viterbi_decode(obs, models, lm: BigramLm | None, cfg: DecodeConfig,
                   priors: ClassPriors | None = None) -> EventSequence:
    """Decode features (tandem) or posteriors (hybrid) into events."""
    rec = Recognizer(cfg.mode, lm, models if cfg.mode == "tandem" else None, priors)
    if cfg.mode == "hybrid" and priors is None:
        raise DecodeError("hybrid decoding needs class priors")
    return rec.decode(obs, cfg)


# --------------------------------------------------------------------------
# tuning


@dataclass
class TuneResult:
    lm_scale: float
    insertion_penalty: float
    eer: float
    f_measure: float
    table: list  # (lm_scale, penalty, eer, f)


def score_decodes(refs: Sequence[FrameLabels], hyps: Sequence[EventSequence]) -> tuple[float, float]:
    """Pooled event error rate and snore F-measure over several recordings."""
    events = [event_error_rate(frames_to_events(ref), hyp) for ref, hyp in zip(refs, hyps)]
    conf = sum(confusion_matrix(ref, events_to_frames(hyp, len(ref))) for ref, hyp in zip(refs, hyps))
    return pooled_event_error(events).eer, report_from_confusion(conf, 0).f_measure


def tune_decode(rec: Recognizer, dev: Sequence[tuple], grid) -> TuneResult:
    """Grid-search LM scale and insertion penalty on ``(obs, FrameLabels)`` pairs.

    ``grid`` is a sequence of ``(lm_scale, penalty)`` points (see
    :func:`make_grid`). The lowest pooled EER wins; ties go to the higher snore F-measure, then to
    the smaller absolute penalty, then to grid order.
    """
    if not dev:
        raise ValueError("tuning needs a non-empty dev set")
    points = [(float(a), float(b)) for a, b in grid]
    if not points:
        raise ValueError("empty tuning grid")
    net = rec.network()
    cache = [(rec.emissions(obs), ref) for obs, ref in dev]
    table = []
    best = None
    for scale, pen in points:
        cfg = DecodeConfig(scale, pen, rec.mode)
        hyps = [viterbi(E, net, rec.lm, cfg) for E, _ in cache]
        eer, f = score_decodes([ref for _, ref in cache], hyps)
        table.append((scale, pen, eer, f))
        key = (eer, -f, abs(pen))
        if best is None or key < best[0]:
            best = (key, scale, pen, eer, f)
        logger.debug("lm_scale %.3g penalty %.3g: eer %.4f f %.4f", scale, pen, eer, f)
    _, scale, pen, eer, f = best
    return TuneResult(scale, pen, eer, f, table)


def make_grid(scales, penalties) -> list[tuple[float, float]]:
    return [(float(a), float(b)) for a, b in itertools.product(scales, penalties)]
