"""End-to-end pipeline: configuration, artifact layout and stages.

Every stage reads its inputs from, and writes its outputs to, a single
work directory::

    work/features/{mfcc,rm,acf}/<key>.sdbf   front-end features
    work/models/                             networks, norms, bundles
    work/logs/<stage>.jsonl                  per-epoch / per-iteration objectives
    work/decode/<system>_<features>/<split>/<key>.tsv
    work/reports/<system>_<features>_<split>.{txt,json}

Stages never run their prerequisites implicitly; a missing input raises
:class:`PrerequisiteError` naming the file.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bundle as bd
from .corpus import (
    CLASSES,
    CorpusManifest,
    FrameLabels,
    SynthConfig,
    events_to_track,
    frames_to_events,
    labels_to_frames,
    load_audio,
    read_manifest,
    read_track,
    screen_segments,
    synth_corpus,
    train_screener,
    write_labels,
)
from .frontend import (
    FeatureMatrix,
    acf_frames,
    add_deltas,
    apply_norm,
    fit_norm,
    load_features,
    mfcc,
    rate_map,
    save_features,
)
from .metrics import (
    confusion_matrix,
    event_error_rate,
    format_report,
    pooled_event_error,
    report_dict,
    report_from_confusion,
)
from .neural import (
    ACF_ENCODER,
    RM_ENCODER,
    TrainConfig,
    encode_bottleneck,
    extractor_from_autoencoder,
    init_autoencoder,
    init_classifier,
    load_model,
    posteriors,
    save_model,
    train_autoencoder,
    train_classifier,
)
from .sequence.decode import DecodeConfig, Recognizer, make_grid, tune_decode
from .sequence.hmm import train_tandem
from .sequence.lm import estimate_priors, train_bigram

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

FEATURE_SETS = ("mfcc", "rm", "acf", "rm+acf")
SYSTEMS = ("tandem", "hybrid")
BASE_FEATURES = {"mfcc": mfcc, "rm": rate_map, "acf": acf_frames}
ENCODERS = {"rm": RM_ENCODER, "acf": ACF_ENCODER}
#: autoencoders see a random subset of the training frames by default
AE_MAX_FRAMES = 40000


class ConfigError(ValueError):
    """Invalid or unreadable configuration (a usage error)."""


class PrerequisiteError(RuntimeError):
    """A stage input that an earlier stage should have produced is missing."""


# --------------------------------------------------------------------------
# configuration


@dataclass
class NetSettings:
    learning_rate: float = 0.001
    epochs: int = 60
    batch_size: int = 256
    momentum: float = 0.0
    l2: float = 0.0
    max_frames: int = 0  # 0 keeps every training frame

    def train_config(self, objective: str, seed: int) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.batch_size, objective, seed,
                           self.momentum, self.l2)


@dataclass
class TandemSettings:
    n_mix: int = 7
    max_iter: int = 20
    tol: float = 1e-5


@dataclass
class DecodeSettings:
    lm_scale: float | None = None
    insertion_penalty: float | None = None
    use_lm: bool = True
    scales: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 4.0, 8.0])
    penalties: list = field(default_factory=lambda: [-20.0, -10.0, -5.0, 0.0, 5.0])


@dataclass
class ScreenSettings:
    threshold: float = 0.20
    segment_len: float = 120.0
    n_mix: int = 4


@dataclass
class PipelineConfig:
    """Everything a pipeline run depends on. Paths are absolute once loaded."""

    manifest: Path
    work_dir: Path
    corpus_dir: Path
    features: str = "rm+acf"
    system: str = "tandem"
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    ae: NetSettings = field(default_factory=lambda: NetSettings(max_frames=AE_MAX_FRAMES))
    hybrid: NetSettings = field(default_factory=NetSettings)
    tandem: TandemSettings = field(default_factory=TandemSettings)
    decode: DecodeSettings = field(default_factory=DecodeSettings)
    screen: ScreenSettings = field(default_factory=ScreenSettings)

    def validate(self) -> None:
        if self.features not in FEATURE_SETS:
            raise ConfigError(f"features must be one of {FEATURE_SETS}, got {self.features!r}")
        if self.system not in SYSTEMS:
            raise ConfigError(f"system must be one of {SYSTEMS}, got {self.system!r}")
        try:
            self.synth.validate()
            for net in (self.ae, self.hybrid):
                net.train_config("mse", 0)
            if self.decode.lm_scale is not None or self.decode.insertion_penalty is not None:
                DecodeConfig(self.decode.lm_scale or 0.0, self.decode.insertion_penalty or 0.0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.tandem.n_mix < 1 or self.tandem.max_iter < 1:
            raise ConfigError("tandem.n_mix and tandem.max_iter must be positive")
        if not 0.0 <= self.screen.threshold <= 1.0:
            raise ConfigError("screen.threshold must lie in [0, 1]")


def _section(cls, d: dict, name: str):
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"[{name}]: unknown keys {sorted(extra)}")
    return cls(**d)


def load_config(path) -> PipelineConfig:
    """Read a TOML pipeline config; relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, path.parent.resolve())


def config_from_dict(raw: dict, base: Path) -> PipelineConfig:
    raw = dict(raw)
    paths = raw.pop("paths", {})
    unknown = set(paths) - {"corpus", "manifest", "work"}
    if unknown:
        raise ConfigError(f"[paths]: unknown keys {sorted(unknown)}")
    corpus = base / paths.get("corpus", "corpus")
    manifest = base / paths["manifest"] if "manifest" in paths else corpus / "manifest.tsv"
    work = base / paths.get("work", "work")
    sections = {
        "synth": SynthConfig, "ae": NetSettings, "hybrid": NetSettings,
        "tandem": TandemSettings, "decode": DecodeSettings, "screen": ScreenSettings,
    }
    kwargs = {}
    for name, cls in sections.items():
        d = raw.pop(name, {})
        if not isinstance(d, dict):
            raise ConfigError(f"[{name}] must be a table")
        if name == "ae":
            d = {"max_frames": AE_MAX_FRAMES, **d}
        try:
            kwargs[name] = SynthConfig.from_dict(d) if cls is SynthConfig else _section(cls, d, name)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    top = {k: raw.pop(k) for k in ("features", "system", "seed") if k in raw}
    if raw:
        raise ConfigError(f"unknown top-level keys {sorted(raw)}")
    if "seed" in top and not isinstance(top["seed"], int):
        raise ConfigError("seed must be an integer")
    cfg = PipelineConfig(manifest.resolve(), work.resolve(), corpus.resolve(), **top, **kwargs)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# artifact layout


class Layout:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.work = cfg.work_dir

    def feature(self, base: str, key: str) -> Path:
        return self.work / "features" / base / f"{key}.sdbf"

    @property
    def models(self) -> Path:
        return self.work / "models"

    def ae(self, base: str) -> Path:
        return self.models / f"ae_{base}.sdbm"

    def norm(self, base: str) -> Path:
        return self.models / f"norm_{base}.json"

    @property
    def lm(self) -> Path:
        return self.models / "lm.json"

    @property
    def screener(self) -> Path:
        return self.models / "screener.json"

    @property
    def tag(self) -> str:
        return f"{self.cfg.system}_{self.cfg.features.replace('+', '_')}"

    def classifier(self) -> Path:
        return self.models / f"classifier_{self.cfg.features.replace('+', '_')}.sdbm"

    def system(self) -> Path:
        return self.models / f"{self.tag}.bundle"

    def tuning(self) -> Path:
        return self.models / f"{self.tag}.tuning.json"

    def log(self, stage: str) -> Path:
        return self.work / "logs" / f"{stage}.jsonl"

    def decode_dir(self, split: str) -> Path:
        return self.work / "decode" / self.tag / split

    def report(self, split: str) -> Path:
        return self.work / "reports" / f"{self.tag}_{split}"


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise PrerequisiteError(f"missing {what}: {path}")
    return path


def _write_log(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def manifest_of(cfg: PipelineConfig) -> CorpusManifest:
    return read_manifest(_require(cfg.manifest, "corpus manifest (run `sdb synth`)"))


def entries(cfg: PipelineConfig, *splits: str):
    out = manifest_of(cfg).split(*splits)
    if not out:
        raise PrerequisiteError(f"split {'+'.join(splits)} has no recordings")
    return out


def base_features(features: str) -> tuple[str, ...]:
    return ("mfcc",) if features == "mfcc" else tuple(features.split("+"))


# --------------------------------------------------------------------------
# stages


def run_synth(cfg: PipelineConfig) -> Path:
    synth_corpus(cfg.synth, cfg.seed, cfg.corpus_dir)
    return cfg.corpus_dir / "manifest.tsv"


def run_extract(cfg: PipelineConfig, bases: tuple[str, ...] | None = None) -> int:
    """Compute and cache front-end features for every recording."""
    lay = Layout(cfg)
    bases = bases or base_features(cfg.features)
    n = 0
    for e in manifest_of(cfg).entries:
        clip = load_audio(e.audio_path)
        for b in bases:
            out = lay.feature(b, e.key)
            out.parent.mkdir(parents=True, exist_ok=True)
            save_features(out, BASE_FEATURES[b](clip))
            n += 1
    return n


def _load_base(lay: Layout, base: str, key: str) -> FeatureMatrix:
    return load_features(_require(lay.feature(base, key), f"{base} features (run `sdb extract`)"))


def frame_labels(entry, n_frames: int) -> FrameLabels:
    return labels_to_frames(read_track(entry.label_path), n_frames)


def _subsample(X: np.ndarray, max_frames: int, seed: int) -> np.ndarray:
    if max_frames and len(X) > max_frames:
        idx = np.sort(np.random.default_rng(seed).choice(len(X), max_frames, replace=False))
        return X[idx]
    return X


def run_train_ae(cfg: PipelineConfig, base: str) -> list[float]:
    """Train the bottleneck autoencoder of one front-end on train+dev audio."""
    if base not in ENCODERS:
        raise ConfigError(f"autoencoders exist for rm and acf, not {base!r}")
    lay = Layout(cfg)
    feats = [_load_base(lay, base, e.key) for e in entries(cfg, "train", "dev")]
    norm = fit_norm(feats)
    X = np.concatenate([apply_norm(f, norm).data for f in feats])
    X = _subsample(X, cfg.ae.max_frames, cfg.seed)
    model = init_autoencoder(X.shape[1], ENCODERS[base], seed=cfg.seed)
    model, hist = train_autoencoder(model, X, cfg.ae.train_config("mse", cfg.seed + 1))
    lay.models.mkdir(parents=True, exist_ok=True)
    save_model(lay.ae(base), model)
    bd.save(lay.norm(base), "norm", bd.norm_to_dict(norm))
    _write_log(lay.log(f"ae_{base}"), [{"epoch": i + 1, "loss": v} for i, v in enumerate(hist.loss)])
    logger.info("ae %s: %d frames, loss %.5g -> %.5g", base, len(X), hist.loss[0], hist.loss[-1])
    return hist.loss


class FeaturePipeline:
    """Maps a recording to its observation matrix for the configured feature set."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.lay = Layout(cfg)
        self.bases = base_features(cfg.features)
        self.parts = {}
        if cfg.features != "mfcc":
            for b in self.bases:
                ae = load_model(_require(self.lay.ae(b), f"{b} autoencoder (run `sdb train ae --features {b}`)"))
                norm = bd.norm_from_dict(bd.load(_require(self.lay.norm(b), f"{b} norm stats"), "norm"))
                self.parts[b] = (extractor_from_autoencoder(ae), norm)

    def refs(self) -> dict:
        out = {}
        for b in self.parts:
            for role, p in ((f"ae_{b}", self.lay.ae(b)), (f"norm_{b}", self.lay.norm(b))):
                out[role] = (p.name, bd.file_digest(p))
        return out

    def observations(self, key: str) -> np.ndarray:
        if self.cfg.features == "mfcc":
            return add_deltas(_load_base(self.lay, "mfcc", key)).data
        cols = []
        for b in self.bases:
            ext, norm = self.parts[b]
            f = apply_norm(_load_base(self.lay, b, key), norm)
            cols.append(add_deltas(encode_bottleneck(ext, f)).data)
        return np.hstack(cols)


def _labelled(cfg: PipelineConfig, fp: FeaturePipeline, *splits: str):
    out = []
    for e in entries(cfg, *splits):
        X = fp.observations(e.key)
        out.append((e, X, frame_labels(e, len(X))))
    return out


def run_train_lm(cfg: PipelineConfig):
    lay = Layout(cfg)
    tracks = [read_track(e.label_path) for e in entries(cfg, "train", "dev")]
    lm = train_bigram(tracks)
    lay.models.mkdir(parents=True, exist_ok=True)
    bd.save(lay.lm, "lm", bd.lm_to_dict(lm))
    return lm


def _load_lm(lay: Layout):
    return bd.lm_from_dict(bd.load(_require(lay.lm, "language model (run `sdb train lm`)"), "lm"))


def class_segments(data) -> dict:
    """Cut labelled recordings into per-class runs of observation frames."""
    segs = {c: [] for c in CLASSES}
    for _, X, labels in data:
        for ev in frames_to_events(labels):
            segs[ev.label].append(X[ev.start_frame : ev.end_frame])
    return segs


def run_train_tandem(cfg: PipelineConfig) -> bd.SystemBundle:
    lay = Layout(cfg)
    lm = _load_lm(lay)
    fp = FeaturePipeline(cfg)
    data = _labelled(cfg, fp, "train", "dev")
    ts = cfg.tandem
    models, hist = train_tandem(class_segments(data), n_mix=ts.n_mix, max_iter=ts.max_iter,
                                tol=ts.tol, seed=cfg.seed)
    _write_log(lay.log(f"tandem_{cfg.features.replace('+', '_')}"),
               [{"class": c, "iteration": i, "loglik": v} for c in CLASSES for i, v in enumerate(hist[c])])
    priors = estimate_priors([lab for _, _, lab in data])
    b = bd.SystemBundle("tandem", cfg.features, data[0][1].shape[1], lm, priors, models=models,
                        refs=fp.refs())
    bd.save_system(lay.system(), b)
    return b


def run_train_hybrid(cfg: PipelineConfig) -> bd.SystemBundle:
    lay = Layout(cfg)
    lm = _load_lm(lay)
    fp = FeaturePipeline(cfg)
    data = _labelled(cfg, fp, "train", "dev")
    X = np.concatenate([x for _, x, _ in data])
    y = np.concatenate([lab.labels for _, _, lab in data])
    norm = fit_norm(X)
    Xn = apply_norm(FeatureMatrix(X), norm).data
    model = init_classifier(X.shape[1], seed=cfg.seed)
    model, hist = train_classifier(model, Xn, y, cfg.hybrid.train_config("cross_entropy", cfg.seed + 1))
    lay.models.mkdir(parents=True, exist_ok=True)
    save_model(lay.classifier(), model)
    _write_log(lay.log(f"hybrid_{cfg.features.replace('+', '_')}"),
               [{"epoch": i + 1, "loss": l, "accuracy": a}
                for i, (l, a) in enumerate(zip(hist.loss, hist.accuracy))])
    refs = fp.refs()
    refs["classifier"] = (lay.classifier().name, bd.file_digest(lay.classifier()))
    priors = estimate_priors([lab for _, _, lab in data])
    b = bd.SystemBundle("hybrid", cfg.features, X.shape[1], lm, priors, input_norm=norm, refs=refs)
    bd.save_system(lay.system(), b)
    logger.info("hybrid: final loss %.4f accuracy %.3f", hist.loss[-1], hist.accuracy[-1])
    return b


def run_train_screener(cfg: PipelineConfig) -> None:
    lay = Layout(cfg)
    feats, labels = [], []
    for e in entries(cfg, "train", "dev"):
        f = _load_base(lay, "mfcc", e.key).data
        feats.append(f)
        labels.append(frame_labels(e, len(f)))
    scr = train_screener(feats, labels, n_mix=cfg.screen.n_mix, seed=cfg.seed)
    lay.models.mkdir(parents=True, exist_ok=True)
    bd.save(lay.screener, "screener",
            {"snore": bd.gmm_to_dict(scr.snore), "non_snore": bd.gmm_to_dict(scr.non_snore)})


def run_screen(cfg: PipelineConfig, split: str) -> dict:
    from .corpus import Screener

    lay = Layout(cfg)
    d = bd.load(_require(lay.screener, "screener (run `sdb train screener`)"), "screener")
    scr = Screener(bd.gmm_from_dict(d["snore"]), bd.gmm_from_dict(d["non_snore"]))
    return {
        e.key: screen_segments(load_audio(e.audio_path), scr, cfg.screen.threshold, cfg.screen.segment_len)
        for e in entries(cfg, split)
    }


# --------------------------------------------------------------------------
# decoding


class System:
    """A loaded recogniser ready to decode recordings of the manifest."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.lay = Layout(cfg)
        path = _require(self.lay.system(), f"{cfg.system} model bundle (run `sdb train {cfg.system}`)")
        try:
            self.bundle = bd.load_system(path)
            self.bundle.check_refs(self.lay.models)
        except bd.BundleError as exc:
            raise PrerequisiteError(str(exc)) from None
        if (self.bundle.system, self.bundle.features) != (cfg.system, cfg.features):
            raise ConfigError(
                f"bundle is {self.bundle.system}/{self.bundle.features}, "
                f"config asks for {cfg.system}/{cfg.features}"
            )
        self.fp = FeaturePipeline(cfg)
        self.classifier = load_model(self.lay.classifier()) if cfg.system == "hybrid" else None
        self.rec = Recognizer(cfg.system, self.bundle.lm, self.bundle.models, self.bundle.priors)

    def obs(self, key: str) -> np.ndarray:
        X = self.fp.observations(key)
        if X.shape[1] != self.bundle.feature_dim:
            raise ConfigError(f"feature width {X.shape[1]} != model width {self.bundle.feature_dim}")
        if self.classifier is None:
            return X
        return posteriors(self.classifier, apply_norm(FeatureMatrix(X), self.bundle.input_norm))

    def decode_params(self, lm_scale=None, insertion_penalty=None) -> DecodeConfig:
        """Flags win over the config file, which wins over tuned values."""
        tuned = {}
        if self.lay.tuning().exists():
            tuned = json.loads(self.lay.tuning().read_text(encoding="utf-8"))
        ds = self.cfg.decode

        def pick(flag, conf, key, default):
            for v in (flag, conf, tuned.get(key)):
                if v is not None:
                    return float(v)
            return default

        return DecodeConfig(pick(lm_scale, ds.lm_scale, "lm_scale", 1.0),
                            pick(insertion_penalty, ds.insertion_penalty, "insertion_penalty", 0.0),
                            self.cfg.system)


def run_tune(cfg: PipelineConfig):
    sysm = System(cfg)
    dev = []
    for e in entries(cfg, "dev"):
        O = sysm.obs(e.key)
        dev.append((O, frame_labels(e, len(O))))
    grid = make_grid(cfg.decode.scales, cfg.decode.penalties)
    res = tune_decode(sysm.rec, dev, grid)
    _write_json(sysm.lay.tuning(), {"lm_scale": res.lm_scale, "insertion_penalty": res.insertion_penalty,
                                    "dev_eer": res.eer, "dev_f_measure": res.f_measure})
    _write_log(sysm.lay.log(f"tune_{sysm.lay.tag}"),
               [{"lm_scale": a, "insertion_penalty": b, "eer": c, "f_measure": d} for a, b, c, d in res.table])
    return res


def run_decode(cfg: PipelineConfig, split: str, lm_scale=None, insertion_penalty=None,
               use_lm: bool | None = None, out_dir: Path | None = None) -> Path:
    """Decode every recording of ``split`` into label TSV files."""
    sysm = System(cfg)
    dcfg = sysm.decode_params(lm_scale, insertion_penalty)
    use_lm = cfg.decode.use_lm if use_lm is None else use_lm
    out = out_dir or sysm.lay.decode_dir(split)
    out.mkdir(parents=True, exist_ok=True)
    for e in entries(cfg, split):
        events = sysm.rec.decode(sysm.obs(e.key), dcfg, use_lm=use_lm)
        write_labels(out / f"{e.key}.tsv", events_to_track(events))
    _write_json(out / "decode.json", {"lm_scale": dcfg.lm_scale, "insertion_penalty": dcfg.insertion_penalty,
                                      "use_lm": use_lm, "system": cfg.system, "features": cfg.features})
    return out


def evaluate_dir(cfg: PipelineConfig, split: str, hyp_dir: Path) -> dict:
    """Score decoded TSVs in ``hyp_dir`` against the reference labels of ``split``."""
    lay = Layout(cfg)
    reports, conf = [], np.zeros((len(CLASSES), len(CLASSES)), dtype=np.int64)
    for e in entries(cfg, split):
        T = len(_load_base(lay, base_features(cfg.features)[0], e.key))
        ref = frame_labels(e, T)
        hyp_path = _require(hyp_dir / f"{e.key}.tsv", "decoded events (run `sdb decode`)")
        hyp = labels_to_frames(read_track(hyp_path), T)
        reports.append(event_error_rate(frames_to_events(ref), frames_to_events(hyp)))
        conf += confusion_matrix(ref, hyp)
    return report_dict(pooled_event_error(reports), report_from_confusion(conf, 0))


def run_evaluate(cfg: PipelineConfig, split: str, hyp_dir: Path | None = None) -> dict:
    lay = Layout(cfg)
    rep = evaluate_dir(cfg, split, hyp_dir or lay.decode_dir(split))
    out = lay.report(split)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".txt").write_text(format_report(rep), encoding="utf-8")
    _write_json(out.with_suffix(".json"), rep)
    return rep


def config_summary(cfg: PipelineConfig) -> dict:
    d = asdict(cfg)
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in d.items()}
