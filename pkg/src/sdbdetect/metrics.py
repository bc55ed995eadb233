"""Event error rate, frame-level F-measure and Cohen's kappa."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .corpus import CLASS_INDEX, CLASSES, EventSequence, FrameLabels


@dataclass(frozen=True)
class EventErrorReport:
    N: int
    S: int
    D: int
    I: int

    @property
    def errors(self) -> int:
        return self.S + self.D + self.I

    @property
    def eer(self) -> float:
        return self.errors / self.N


@dataclass(frozen=True)
class FrameEvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_measure: float
    confusion: np.ndarray  # (ref, hyp) counts
    undefined_precision: bool = False
    undefined_recall: bool = False


@dataclass(frozen=True)
class KappaReport:
    kappa: float
    observed: float
    expected: float


def _labels(seq) -> list:
    if isinstance(seq, EventSequence):
        return seq.labels
    return list(seq)


def align(ref: Sequence, hyp: Sequence) -> tuple[int, int, int, list]:
    """Minimum-edit alignment of two label sequences.

    Among alignments with the fewest edits, the one with the fewest
    substitutions and then the fewest insertions is chosen. Returns
    ``(S, D, I, ops)`` with ops drawn from ``match/sub/del/ins``.
    """
    n, m = len(ref), len(hyp)
    # cost[i][j] = (edits, subs, ins) for ref[:i] vs hyp[:j]
    cost = [[None] * (m + 1) for _ in range(n + 1)]
    cost[0][0] = (0, 0, 0)
    for i in range(1, n + 1):
        cost[i][0] = (i, 0, 0)
    for j in range(1, m + 1):
        cost[0][j] = (j, 0, j)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            e, s, k = cost[i - 1][j - 1]
            if ref[i - 1] == hyp[j - 1]:
                diag = (e, s, k)
            else:
                diag = (e + 1, s + 1, k)
            e, s, k = cost[i - 1][j]
            dele = (e + 1, s, k)
            e, s, k = cost[i][j - 1]
            ins = (e + 1, s, k + 1)
            cost[i][j] = min(diag, dele, ins)
    ops = []
    i, j = n, m
    while i or j:
        here = cost[i][j]
        if i and j:
            e, s, k = cost[i - 1][j - 1]
            if ref[i - 1] == hyp[j - 1] and here == (e, s, k):
                ops.append("match")
                i, j = i - 1, j - 1
                continue
            if ref[i - 1] != hyp[j - 1] and here == (e + 1, s + 1, k):
                ops.append("sub")
                i, j = i - 1, j - 1
                continue
        if i:
            e, s, k = cost[i - 1][j]
            if here == (e + 1, s, k):
                ops.append("del")
                i -= 1
                continue
        ops.append("ins")
        j -= 1
    ops.reverse()
    return ops.count("sub"), ops.count("del"), ops.count("ins"), ops


def event_error_rate(ref, hyp) -> EventErrorReport:
    """(S + D + I) / N over event labels; timing is ignored."""
    r, h = _labels(ref), _labels(hyp)
    if not r:
        raise ValueError("event error rate is undefined for an empty reference")
    S, D, I, _ = align(r, h)
    return EventErrorReport(len(r), S, D, I)


def pooled_event_error(reports: Sequence[EventErrorReport]) -> EventErrorReport:
    return EventErrorReport(
        sum(r.N for r in reports), sum(r.S for r in reports),
        sum(r.D for r in reports), sum(r.I for r in reports),
    )


def f_measure(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _as_array(x) -> np.ndarray:
    return x.labels if isinstance(x, FrameLabels) else np.asarray(x, dtype=np.int64)


def confusion_matrix(ref, hyp, n_classes: int = len(CLASSES)) -> np.ndarray:
    r, h = _as_array(ref), _as_array(hyp)
    if len(r) != len(h):
        raise ValueError(f"length mismatch: {len(r)} reference vs {len(h)} hypothesis frames")
    return np.bincount(r * n_classes + h, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def report_from_confusion(conf: np.ndarray, target: int) -> FrameEvalReport:
    tp = int(conf[target, target])
    fp = int(conf[:, target].sum() - tp)
    fn = int(conf[target, :].sum() - tp)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return FrameEvalReport(tp, fp, fn, p, r, f_measure(p, r), conf,
                           undefined_precision=tp + fp == 0, undefined_recall=tp + fn == 0)


def frame_f_measure(ref, hyp, target: str | int = "snore") -> FrameEvalReport:
    """Precision, recall and F-measure of one class over aligned frames."""
    t = CLASS_INDEX[target] if isinstance(target, str) else int(target)
    return report_from_confusion(confusion_matrix(ref, hyp), t)


def cohens_kappa(a, b) -> KappaReport:
    """Chance-corrected agreement between two frame labelings.

    Labels may be any hashable values (e.g. the raw six-class scheme).
    When both raters use one and the same label throughout, kappa is 1.
    """
    a, b = list(_labels_any(a)), list(_labels_any(b))
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)} frames")
    if not a:
        raise ValueError("kappa needs at least one frame")
    cats = sorted(set(a) | set(b), key=str)
    idx = {c: i for i, c in enumerate(cats)}
    K, N = len(cats), len(a)
    conf = np.zeros((K, K), dtype=np.int64)
    for x, y in zip(a, b):
        conf[idx[x], idx[y]] += 1
    agree = int(np.trace(conf))
    # integer numerators keep exact cases exact
    chance = int(conf.sum(axis=1) @ conf.sum(axis=0))
    observed = agree / N
    expected = chance / (N * N)
    if chance == N * N:
        if agree == N:
            return KappaReport(1.0, observed, expected)
        raise ValueError("kappa undefined: expected agreement is 1")
    return KappaReport((N * agree - chance) / (N * N - chance), observed, expected)


def _labels_any(x):
    if isinstance(x, FrameLabels):
        return x.labels.tolist()
    return np.asarray(x).tolist()


# --------------------------------------------------------------------------
# serialisation


def report_dict(event: EventErrorReport | None = None, frame: FrameEvalReport | None = None) -> dict:
    out = {}
    if event is not None:
        out.update(asdict(event))
        out["eer"] = event.eer
    if frame is not None:
        out.update(
            precision=frame.precision, recall=frame.recall, f_measure=frame.f_measure,
            tp=frame.tp, fp=frame.fp, fn=frame.fn,
            undefined_precision=frame.undefined_precision,
            undefined_recall=frame.undefined_recall,
            confusion=frame.confusion.tolist(),
        )
    return out


def format_report(d: dict) -> str:
    """UTF-8 ``key = value`` lines, keys in insertion order."""
    lines = []
    for k, v in d.items():
        if isinstance(v, float):
            v = f"{v:.6f}"
        elif isinstance(v, (list, dict)):
            v = json.dumps(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
