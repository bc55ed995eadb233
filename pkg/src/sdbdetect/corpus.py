"""Audio and label ingestion, frame/event conversion and the synthetic corpus.

Label files are UTF-8 TSV with one ``start_sec<TAB>end_sec<TAB>label`` line
per segment. Manifests are TSV with ``audio_path<TAB>label_path<TAB>split
<TAB>speaker_id`` lines, paths relative to the manifest's directory.
"""

from __future__ import annotations

import logging
import math
import os
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
FRAME_PERIOD = 0.010
WIN_LEN = 0.025

#: merged classes in the fixed decoding order (also the tie-break order)
CLASSES = ("snore", "breath", "other", "silence")
RAW_CLASSES = ("snore", "wheezing", "noisy_in_breath", "breath", "other", "silence")
CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}
SILENCE = CLASS_INDEX["silence"]

_MERGE_MAP = {
    "snore": "snore",
    "wheezing": "snore",
    "noisy_in_breath": "snore",
    "breath": "breath",
    "other": "other",
    "silence": "silence",
}
_SCHEMES = {"raw": RAW_CLASSES, "merged": CLASSES}
SPLITS = ("train", "dev", "test")


class FormatError(ValueError):
    """Raised for audio, label or manifest files that break the format."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip must be mono (1-D samples)")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate={self.sample_rate}, expected {SAMPLE_RATE}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class LabelSegment:
    start: float
    end: float
    label: str


@dataclass(frozen=True)
class LabelTrack:
    segments: tuple[LabelSegment, ...]
    scheme: str = "merged"

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        segs = tuple(sorted(self.segments, key=lambda s: (s.start, s.end)))
        allowed = _SCHEMES[self.scheme]
        for s in segs:
            if s.label not in allowed:
                raise FormatError(f"unknown label {s.label!r} for scheme {self.scheme}")
            if not (0 <= s.start < s.end):
                raise FormatError(f"invalid segment times {s.start}..{s.end}")
        for a, b in zip(segs, segs[1:]):
            if b.start < a.end:
                raise FormatError(
                    f"overlapping segments {a.start}..{a.end} and {b.start}..{b.end}"
                )
        object.__setattr__(self, "segments", segs)

    @property
    def duration(self) -> float:
        return sum(s.end - s.start for s in self.segments)


@dataclass(frozen=True)
class FrameLabels:
    labels: np.ndarray
    frame_period: float = FRAME_PERIOD

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("frame labels must be 1-D")
        if labels.size and (labels.min() < 0 or labels.max() >= len(CLASSES)):
            raise ValueError("frame label out of range")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class Event:
    label: str
    start_frame: int
    end_frame: int


@dataclass(frozen=True)
class EventSequence:
    events: tuple[Event, ...] = ()

    def __post_init__(self):
        events = tuple(Event(*e) if not isinstance(e, Event) else e for e in self.events)
        for e in events:
            if e.end_frame <= e.start_frame:
                raise ValueError(f"empty event {e}")
            if e.label not in CLASSES:
                raise ValueError(f"unknown event label {e.label!r}")
        object.__setattr__(self, "events", events)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.events]

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: Path
    label_path: Path
    split: str
    speaker_id: str

    @property
    def key(self) -> str:
        return self.audio_path.stem


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    root: Path = Path(".")

    def split(self, *names: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split in names]

    def speakers(self, split: str) -> set[str]:
        return {e.speaker_id for e in self.entries if e.split == split}


# --------------------------------------------------------------------------
# audio


def load_audio(path) -> AudioClip:
    """Read a 16 kHz mono 16-bit PCM WAV file, scaled by 1/32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            comptype = w.getcomptype()
            raw = w.readframes(w.getnframes())
    except (OSError, EOFError, wave.Error) as exc:
        raise FormatError(f"{path}: unreadable audio ({exc})") from exc
    if comptype != "NONE":
        raise FormatError(f"{path}: compression={comptype}, expected PCM")
    if channels != 1:
        raise FormatError(f"{path}: channels={channels}, expected mono")
    if width != 2:
        raise FormatError(f"{path}: bit-depth={8 * width}, expected 16")
    if rate != SAMPLE_RATE:
        raise FormatError(f"{path}: sample-rate={rate}, expected {SAMPLE_RATE}")
    ints = np.frombuffer(raw, dtype="<i2")
    return AudioClip(ints.astype(np.float64) / 32768.0)


def write_audio(path, clip: AudioClip | np.ndarray) -> None:
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    ints = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(ints.tobytes())


# --------------------------------------------------------------------------
# labels


def parse_labels(path, scheme: str = "raw") -> LabelTrack:
    """Parse a TSV label file into a sorted, validated track."""
    path = Path(path)
    segments = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                start, end = float(parts[0]), float(parts[1])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad time value") from exc
            label = parts[2].strip()
            if label not in _SCHEMES.get(scheme, ()):
                raise FormatError(f"{path}:{lineno}: unknown label {label!r} for scheme {scheme}")
            if end <= start:
                raise FormatError(f"{path}:{lineno}: end <= start")
            segments.append(LabelSegment(start, end, label))
    return LabelTrack(tuple(segments), scheme)


def format_labels(track: LabelTrack) -> str:
    return "".join(f"{s.start:.6f}\t{s.end:.6f}\t{s.label}\n" for s in track.segments)


def write_labels(path, track: LabelTrack) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_labels(track))


def merge_classes(track: LabelTrack) -> LabelTrack:
    """Fold wheezing and noisy in-breath into snore and coalesce neighbours.

    Only segments that touch exactly (``a.end == b.start``) are coalesced, so
    the total labelled duration is preserved.
    """
    if track.scheme != "raw":
        raise ValueError("track is already merged")
    out: list[LabelSegment] = []
    for s in track.segments:
        label = _MERGE_MAP[s.label]
        if out and out[-1].label == label and out[-1].end == s.start:
            out[-1] = LabelSegment(out[-1].start, s.end, label)
        else:
            out.append(LabelSegment(s.start, s.end, label))
    return LabelTrack(tuple(out), "merged")


def labels_to_frames(
    track: LabelTrack,
    n_frames: int,
    frame_period: float = FRAME_PERIOD,
    win_len: float = WIN_LEN,
) -> FrameLabels:
    """Label frame ``t`` by the segment containing its centre.

    Frames whose centre is not covered by any segment are silence.
    """
    if n_frames <= 0:
        raise ValueError("n_frames must be positive")
    if track.scheme != "merged":
        raise ValueError("labels_to_frames needs a merged track")
    centres = np.arange(n_frames) * frame_period + win_len / 2
    labels = np.full(n_frames, SILENCE, dtype=np.int64)
    for s in track.segments:
        lo = np.searchsorted(centres, s.start, side="left")
        hi = np.searchsorted(centres, s.end, side="left")
        labels[lo:hi] = CLASS_INDEX[s.label]
    return FrameLabels(labels, frame_period)


def frames_to_events(frames: FrameLabels | np.ndarray) -> EventSequence:
    labels = frames.labels if isinstance(frames, FrameLabels) else np.asarray(frames)
    if len(labels) == 0:
        return EventSequence(())
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(labels)]])
    return EventSequence(
        tuple(Event(CLASSES[labels[s]], int(s), int(e)) for s, e in zip(starts, ends))
    )


def events_to_frames(events: EventSequence, n_frames: int | None = None) -> FrameLabels:
    if n_frames is None:
        n_frames = events.events[-1].end_frame if len(events) else 0
    labels = np.full(n_frames, SILENCE, dtype=np.int64)
    for e in events:
        labels[e.start_frame : e.end_frame] = CLASS_INDEX[e.label]
    return FrameLabels(labels)


def events_to_track(
    events: EventSequence,
    frame_period: float = FRAME_PERIOD,
    win_len: float = WIN_LEN,
) -> LabelTrack:
    """Convert frame-indexed events to a merged track in seconds.

    Boundaries sit midway between neighbouring frame centres, so that
    ``labels_to_frames`` recovers the same frames.
    """
    offset = win_len / 2 - frame_period / 2
    segs = []
    for i, e in enumerate(events):
        start = 0.0 if i == 0 else e.start_frame * frame_period + offset
        end = e.end_frame * frame_period + offset
        segs.append(LabelSegment(round(start, 6), round(end, 6), e.label))
    return LabelTrack(tuple(segs), "merged")


def fill_silence(track: LabelTrack, duration: float | None = None) -> LabelTrack:
    """Return a merged track with uncovered spans explicitly labelled silence."""
    segs: list[LabelSegment] = []
    t = 0.0
    for s in track.segments:
        if s.start > t:
            segs.append(LabelSegment(t, s.start, "silence"))
        segs.append(s)
        t = s.end
    if duration is not None and duration > t:
        segs.append(LabelSegment(t, duration, "silence"))
    out: list[LabelSegment] = []
    for s in segs:
        if out and out[-1].label == s.label and out[-1].end == s.start:
            out[-1] = LabelSegment(out[-1].start, s.end, s.label)
        else:
            out.append(s)
    return LabelTrack(tuple(out), track.scheme)


def read_track(path) -> LabelTrack:
    """Read either a raw annotation or a decoded file as a merged track."""
    track = parse_labels(path, "raw")
    return merge_classes(track)


# --------------------------------------------------------------------------
# manifest


def read_manifest(path) -> CorpusManifest:
    path = Path(path)
    root = path.parent
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
            audio, label, split, speaker = parts
            if split not in SPLITS:
                raise FormatError(f"{path}:{lineno}: unknown split {split!r}")
            entries.append(ManifestEntry(root / audio, root / label, split, speaker))
    return CorpusManifest(tuple(entries), root)


def write_manifest(path, manifest: CorpusManifest) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in manifest.entries:
            audio = os.path.relpath(e.audio_path, path.parent)
            label = os.path.relpath(e.label_path, path.parent)
            fh.write(f"{audio}\t{label}\t{e.split}\t{e.speaker_id}\n")


# --------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SynthConfig:
    """Event mix for :func:`synth_corpus`.

    ``counts`` is the number of events of each non-silence class per
    recording; silence fills the gaps between events.
    """

    n_train_speakers: int = 4
    n_test_speakers: int = 2
    recordings_per_speaker: int = 5
    dev_per_speaker: int = 1
    counts: dict = field(default_factory=lambda: {"snore": 16, "breath": 14, "other": 3})
    snore_dur: tuple = (0.6, 1.6)
    breath_dur: tuple = (0.5, 1.2)
    other_dur: tuple = (0.3, 1.5)
    gap_dur: tuple = (0.3, 1.0)
    snr_db: tuple = (10.0, 25.0)
    noise_floor_db: float = -50.0
    f0_range: tuple = (60.0, 250.0)
    pair_prob: float = 0.7
    raw_subtype_fraction: float = 0.1
    silence_only_duration: float = 10.0

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self):
        for name in ("snore_dur", "breath_dur", "other_dur", "gap_dur", "snr_db", "f0_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        for name in ("snore_dur", "breath_dur", "other_dur", "gap_dur"):
            if getattr(self, name)[0] <= 0:
                raise ValueError(f"{name}: durations must be positive")
        lo, hi = self.f0_range
        if lo < 50 or hi > 400:
            raise ValueError("f0_range must lie within [50, 400] Hz")
        for c, n in self.counts.items():
            if c not in ("snore", "breath", "other"):
                raise ValueError(f"counts: unknown class {c!r}")
            if int(n) != n or n < 0:
                raise ValueError(f"counts[{c}] must be a non-negative integer")
        if self.n_train_speakers < 0 or self.n_test_speakers < 0:
            raise ValueError("speaker counts must be non-negative")
        if self.recordings_per_speaker < 1:
            raise ValueError("recordings_per_speaker must be >= 1")
        if not 0 <= self.dev_per_speaker <= self.recordings_per_speaker:
            raise ValueError("dev_per_speaker must be within [0, recordings_per_speaker]")
        if not 0 <= self.pair_prob <= 1 or not 0 <= self.raw_subtype_fraction <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.silence_only_duration < WIN_LEN:
            raise ValueError("silence_only_duration too short")


@dataclass(frozen=True)
class _Speaker:
    f0: float
    formants: tuple
    breath_band: tuple
    am_rate: float


def _draw_speaker(rng: np.random.Generator, cfg: SynthConfig) -> _Speaker:
    lo, hi = cfg.f0_range
    # keep a margin so per-event jitter stays in range
    f0 = float(np.exp(rng.uniform(np.log(lo * 1.1), np.log(hi / 1.1))))
    f1 = float(rng.uniform(300, 800))
    f2 = float(rng.uniform(1000, 2200))
    centre = float(rng.uniform(1500, 4000))
    width = float(rng.uniform(0.5, 0.9)) * centre
    return _Speaker(f0, (f1, f2), (centre - width / 2, centre + width / 2), float(rng.uniform(3, 8)))


def _ramp_envelope(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    r = min(ramp, n // 2)
    if r > 0:
        up = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = up
        env[n - r :] = up[::-1]
    return env


def _resonator(x: np.ndarray, freq: float, bw: float) -> np.ndarray:
    r = np.exp(-np.pi * bw / SAMPLE_RATE)
    theta = 2 * np.pi * freq / SAMPLE_RATE
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return sps.lfilter([1 - r], a, x)


def _snore(rng, spk: _Speaker, n: int, cfg: SynthConfig) -> np.ndarray:
    lo, hi = cfg.f0_range
    f0 = float(np.clip(spk.f0 * rng.uniform(0.9, 1.1), lo, hi))
    t = np.arange(n) / SAMPLE_RATE
    drift = 1 + 0.02 * np.sin(2 * np.pi * rng.uniform(0.5, 2) * t)
    phase = np.cumsum(f0 * drift) / SAMPLE_RATE
    saw = 2 * (phase - np.floor(phase + 0.5))
    voiced = sum(_resonator(saw, f, 80 + 0.1 * f) for f in spk.formants)
    am = 1 + 0.3 * np.sin(2 * np.pi * spk.am_rate * t + rng.uniform(0, 2 * np.pi))
    return voiced * am * _ramp_envelope(n, int(0.03 * SAMPLE_RATE))


def _breath(rng, spk: _Speaker, n: int) -> np.ndarray:
    lo, hi = spk.breath_band
    sos = sps.butter(4, [lo, min(hi, 7800)], btype="bandpass", fs=SAMPLE_RATE, output="sos")
    noise = sps.sosfilt(sos, rng.standard_normal(n + 512))[512:]
    return noise * _ramp_envelope(n, int(0.05 * SAMPLE_RATE))


def _other(rng, n: int) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    if rng.random() < 0.5:
        f = rng.uniform(400, 3000)
        x = np.sin(2 * np.pi * f * t) + 0.3 * np.sin(2 * np.pi * 2 * f * t)
    else:
        fa, fb = rng.uniform(400, 3500, size=2)
        x = sps.chirp(t, fa, t[-1] if n > 1 else 1.0, fb)
    return x * _ramp_envelope(n, int(0.01 * SAMPLE_RATE))


def _event_plan(rng, cfg: SynthConfig) -> list[str]:
    n_snore = int(cfg.counts.get("snore", 0))
    n_breath = int(cfg.counts.get("breath", 0))
    n_other = int(cfg.counts.get("other", 0))
    cycles: list[list[str]] = []
    for _ in range(n_snore):
        # inspiration snore, pause, expiration
        if n_breath > 0 and rng.random() < cfg.pair_prob:
            cycles.append(["snore", "breath"])
            n_breath -= 1
        else:
            cycles.append(["snore"])
    cycles += [["breath"]] * n_breath + [["other"]] * n_other
    order = rng.permutation(len(cycles))
    return [c for i in order for c in cycles[i]]


def _synth_recording(rng, spk: _Speaker, cfg: SynthConfig):
    plan = _event_plan(rng, cfg)
    dur_ranges = {"snore": cfg.snore_dur, "breath": cfg.breath_dur, "other": cfg.other_dur}
    pieces = []  # (label, n_samples)

    def draw(rng_range):
        return max(1, int(round(rng.uniform(*rng_range) * SAMPLE_RATE)))

    if not plan:
        pieces.append(("silence", int(round(cfg.silence_only_duration * SAMPLE_RATE))))
    else:
        pieces.append(("silence", draw(cfg.gap_dur)))
        for label in plan:
            pieces.append((label, draw(dur_ranges[label])))
            pieces.append(("silence", draw(cfg.gap_dur)))
    total = sum(n for _, n in pieces)
    noise_rms = 10 ** (cfg.noise_floor_db / 20)
    b, a = sps.butter(1, 4000, fs=SAMPLE_RATE)
    floor = sps.lfilter(b, a, rng.standard_normal(total))
    x = floor * noise_rms / np.sqrt(np.mean(floor**2))

    segments = []
    pos = 0
    for label, n in pieces:
        if label != "silence":
            if label == "snore":
                ev = _snore(rng, spk, n, cfg)
            elif label == "breath":
                ev = _breath(rng, spk, n)
            else:
                ev = _other(rng, n)
            rms = np.sqrt(np.mean(ev**2)) + 1e-12
            snr = rng.uniform(*cfg.snr_db)
            x[pos : pos + n] += ev * (noise_rms * 10 ** (snr / 20) / rms)
            if label == "snore" and rng.random() < cfg.raw_subtype_fraction:
                label = str(rng.choice(["wheezing", "noisy_in_breath"]))
        segments.append(LabelSegment(pos / SAMPLE_RATE, (pos + n) / SAMPLE_RATE, label))
        pos += n
    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak
    return x, LabelTrack(tuple(segments), "raw")


def synth_corpus(cfg: SynthConfig, seed: int, out_dir) -> CorpusManifest:
    """Write a seeded synthetic SDB corpus and its manifest to ``out_dir``.

    Each speaker is an independent draw of pitch, formant, breath-band and
    modulation parameters; train/dev recordings come from the first
    ``n_train_speakers`` speakers and test recordings from the rest, so the
    train and test splits never share a speaker.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    n_spk = cfg.n_train_speakers + cfg.n_test_speakers
    spk_seeds = root.spawn(n_spk)
    entries = []
    for s in range(n_spk):
        spk_rng = np.random.default_rng(spk_seeds[s])
        spk = _draw_speaker(spk_rng, cfg)
        spk_id = f"spk{s:02d}"
        is_train = s < cfg.n_train_speakers
        dev_idx = set()
        if is_train and cfg.dev_per_speaker:
            dev_idx = set(
                spk_rng.choice(cfg.recordings_per_speaker, cfg.dev_per_speaker, replace=False).tolist()
            )
        rec_seeds = spk_seeds[s].spawn(cfg.recordings_per_speaker)
        for r in range(cfg.recordings_per_speaker):
            x, track = _synth_recording(np.random.default_rng(rec_seeds[r]), spk, cfg)
            name = f"{spk_id}_{r:02d}"
            audio_path = out_dir / "audio" / f"{name}.wav"
            label_path = out_dir / "labels" / f"{name}.tsv"
            write_audio(audio_path, x)
            write_labels(label_path, track)
            split = "test" if not is_train else ("dev" if r in dev_idx else "train")
            entries.append(ManifestEntry(audio_path, label_path, split, spk_id))
    manifest = CorpusManifest(tuple(entries), out_dir)
    write_manifest(out_dir / "manifest.tsv", manifest)
    logger.info("wrote %d recordings to %s", len(entries), out_dir)
    return read_manifest(out_dir / "manifest.tsv")


# --------------------------------------------------------------------------
# segment screening


@dataclass(frozen=True)
class Screener:
    """Snore / non-snore GMM pair over static MFCC frames."""

    snore: "object"
    non_snore: "object"


def screen_segments(
    clip: AudioClip,
    screener: Screener,
    threshold: float = 0.20,
    segment_len: float = 120.0,
) -> list[tuple[float, float]]:
    """Return the full-length segments with at least ``threshold`` snore frames.

    A frame counts as snore when the snore GMM scores it higher than the
    non-snore GMM. Frames are assigned to the segment containing their
    centre. A trailing partial segment is never returned.
    """
    from .frontend import mfcc
    from .sequence.gmm import gmm_loglik

    n_seg = int(math.floor(clip.duration / segment_len + 1e-9))
    if n_seg == 0:
        return []
    feats = mfcc(clip).data
    is_snore = gmm_loglik(screener.snore, feats) > gmm_loglik(screener.non_snore, feats)
    centres = np.arange(len(feats)) * FRAME_PERIOD + WIN_LEN / 2
    out = []
    for k in range(n_seg):
        lo, hi = k * segment_len, (k + 1) * segment_len
        mask = (centres >= lo) & (centres < hi)
        frac = float(is_snore[mask].mean()) if mask.any() else 0.0
        if frac >= threshold:
            out.append((lo, hi))
    return out


def train_screener(features: Sequence[np.ndarray], frames: Sequence[FrameLabels], n_mix: int = 4, seed: int = 0) -> Screener:
    """Fit the screening GMM pair on labelled static MFCC frames."""
    from .sequence.gmm import fit_gmm

    X = np.concatenate([np.asarray(f) for f in features])
    y = np.concatenate([f.labels for f in frames])
    snore = X[y == CLASS_INDEX["snore"]]
    rest = X[y != CLASS_INDEX["snore"]]
    if len(snore) == 0 or len(rest) == 0:
        raise ValueError("screener training needs both snore and non-snore frames")
    k_s = max(1, min(n_mix, len(snore) // 10))
    k_r = max(1, min(n_mix, len(rest) // 10))
    return Screener(fit_gmm(snore, k_s, seed=seed), fit_gmm(rest, k_r, seed=seed + 1))

