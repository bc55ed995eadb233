"""Versioned, checksummed JSON containers for trained systems.

A bundle holds everything the decoder needs apart from the feature
front-end networks, which it references by file name and digest.
Serialisation is canonical (sorted keys, shortest round-trip floats), so
identical models always produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frontend import NormStats
from .sequence.gmm import Gmm
from .sequence.hmm import HmmClassModel
from .sequence.lm import BigramLm, ClassPriors

BUNDLE_FORMAT = "sdb-bundle"
BUNDLE_VERSION = 1


class BundleError(ValueError):
    pass


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _arr(x) -> list:
    return np.asarray(x, dtype=np.float64).tolist()


def gmm_to_dict(g: Gmm) -> dict:
    return {"weights": _arr(g.weights), "means": _arr(g.means), "variances": _arr(g.variances)}


def gmm_from_dict(d: dict) -> Gmm:
    return Gmm(np.array(d["weights"]), np.array(d["means"]), np.array(d["variances"]))


def hmm_to_dict(m: HmmClassModel) -> dict:
    return {"label": m.label, "stay": _arr(m.stay), "states": [gmm_to_dict(g) for g in m.states]}


def hmm_from_dict(d: dict) -> HmmClassModel:
    return HmmClassModel(d["label"], np.array(d["stay"]), tuple(gmm_from_dict(g) for g in d["states"]))


def lm_to_dict(lm: BigramLm) -> dict:
    return {"initial": _arr(lm.initial), "trans": _arr(lm.trans), "final": _arr(lm.final), "alpha": lm.alpha}


def lm_from_dict(d: dict) -> BigramLm:
    return BigramLm(np.array(d["initial"]), np.array(d["trans"]), np.array(d["final"]), d["alpha"])


def norm_to_dict(n: NormStats) -> dict:
    return {"lo": _arr(n.lo), "hi": _arr(n.hi)}


def norm_from_dict(d: dict) -> NormStats:
    return NormStats(np.array(d["lo"]), np.array(d["hi"]))


# --------------------------------------------------------------------------
# checksummed container


def dumps(kind: str, payload: dict) -> bytes:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    doc = {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION, "kind": kind, "sha256": digest}
    head = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return (head + "\n" + body + "\n").encode("utf-8")


def loads(raw: bytes, kind: str | None = None) -> dict:
    try:
        head, body = raw.decode("utf-8").split("\n", 1)
        doc = json.loads(head)
    except (UnicodeDecodeError, ValueError) as exc:
        raise BundleError(f"not a model bundle: {exc}") from None
    if doc.get("format") != BUNDLE_FORMAT:
        raise BundleError("not a model bundle")
    if doc.get("version", 0) > BUNDLE_VERSION:
        raise BundleError(f"bundle version {doc['version']} is newer than supported {BUNDLE_VERSION}")
    body = body.rstrip("\n")
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != doc.get("sha256"):
        raise BundleError("bundle checksum mismatch (file corrupt or truncated)")
    if kind is not None and doc.get("kind") != kind:
        raise BundleError(f"expected a {kind!r} bundle, found {doc.get('kind')!r}")
    return json.loads(body)


def save(path, kind: str, payload: dict) -> None:
    Path(path).write_bytes(dumps(kind, payload))


def load(path, kind: str | None = None) -> dict:
    path = Path(path)
    try:
        return loads(path.read_bytes(), kind)
    except BundleError as exc:
        raise BundleError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# system bundle


@dataclass
class SystemBundle:
    """A trained recogniser: tandem HMMs or a hybrid classifier reference.

    ``refs`` maps artifact roles (e.g. ``"ae_rm"``, ``"classifier"``) to
    ``(file name, sha256)`` pairs resolved relative to the bundle.
    """

    system: str
    features: str
    feature_dim: int
    lm: BigramLm
    priors: ClassPriors
    models: dict | None = None
    input_norm: NormStats | None = None
    refs: dict = field(default_factory=dict)

    def to_payload(self) -> dict:
        d = {
            "system": self.system,
            "features": self.features,
            "feature_dim": self.feature_dim,
            "lm": lm_to_dict(self.lm),
            "priors": _arr(self.priors.probs),
            "refs": {k: list(v) for k, v in self.refs.items()},
        }
        if self.models is not None:
            d["models"] = {c: hmm_to_dict(m) for c, m in self.models.items()}
        if self.input_norm is not None:
            d["input_norm"] = norm_to_dict(self.input_norm)
        return d

    @classmethod
    def from_payload(cls, d: dict) -> "SystemBundle":
        return cls(
            system=d["system"],
            features=d["features"],
            feature_dim=int(d["feature_dim"]),
            lm=lm_from_dict(d["lm"]),
            priors=ClassPriors(np.array(d["priors"])),
            models={c: hmm_from_dict(m) for c, m in d["models"].items()} if "models" in d else None,
            input_norm=norm_from_dict(d["input_norm"]) if "input_norm" in d else None,
            refs={k: tuple(v) for k, v in d.get("refs", {}).items()},
        )

    def check_refs(self, base: Path) -> None:
        for role, (name, digest) in self.refs.items():
            p = Path(base) / name
            if not p.exists():
                raise BundleError(f"bundle references missing {role} file {p}")
            if file_digest(p) != digest:
                raise BundleError(f"{role} file {p} changed since the bundle was written")


def save_system(path, b: SystemBundle) -> None:
    save(path, "system", b.to_payload())


def load_system(path) -> SystemBundle:
    return SystemBundle.from_payload(load(path, "system"))
