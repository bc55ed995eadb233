import json

import numpy as np
import pytest

from sdbdetect import bundle as bd
from sdbdetect.frontend import NormStats
from sdbdetect.sequence import ClassPriors, Gmm, HmmClassModel, train_bigram


def _hmm(label, S, rng):
    states = tuple(Gmm(np.array([0.25, 0.75]), rng.normal(size=(2, 3)), rng.uniform(0.1, 2, (2, 3))) for _ in range(S))
    return HmmClassModel(label, rng.uniform(0.1, 0.9, S), states)


@pytest.fixture
def system(rng):
    models = {c: _hmm(c, s, rng) for c, s in (("snore", 7), ("breath", 5), ("other", 3), ("silence", 3))}
    lm = train_bigram([["snore", "silence", "breath", "silence"]])
    return bd.SystemBundle("tandem", "rm", 3, lm, ClassPriors(np.array([0.1, 0.2, 0.3, 0.4])), models=models,
                           input_norm=NormStats(np.zeros(3), np.ones(3)), refs={"ae_rm": ("ae_rm.sdbm", "0" * 64)})


def test_roundtrip_is_exact(system):
    raw = bd.dumps("system", system.to_payload())
    back = bd.SystemBundle.from_payload(bd.loads(raw, "system"))
    assert bd.dumps("system", back.to_payload()) == raw
    for c, m in system.models.items():
        np.testing.assert_array_equal(back.models[c].stay, m.stay)
        for g, h in zip(back.models[c].states, m.states):
            np.testing.assert_array_equal(g.means, h.means)
            np.testing.assert_array_equal(g.variances, h.variances)
    np.testing.assert_array_equal(back.lm.trans, system.lm.trans)
    assert back.refs == system.refs


def test_canonical_bytes(system):
    p = system.to_payload()
    shuffled = json.loads(json.dumps(p))
    shuffled = dict(reversed(list(shuffled.items())))
    assert bd.dumps("system", p) == bd.dumps("system", shuffled)


def test_container_errors(system, tmp_path):
    raw = bd.dumps("system", system.to_payload())
    with pytest.raises(bd.BundleError, match="checksum"):
        bd.loads(raw[:-20], "system")
    with pytest.raises(bd.BundleError, match="checksum"):
        bd.loads(raw.replace(b"0.1", b"0.2", 1), "system")
    head, body = raw.split(b"\n", 1)
    doc = json.loads(head)
    doc["version"] = bd.BUNDLE_VERSION + 1
    with pytest.raises(bd.BundleError, match="newer"):
        bd.loads(json.dumps(doc).encode() + b"\n" + body)
    with pytest.raises(bd.BundleError, match="expected a 'lm'"):
        bd.loads(raw, "lm")
    with pytest.raises(bd.BundleError, match="not a model bundle"):
        bd.loads(b"\x00\xff garbage")
    (tmp_path / "b.json").write_bytes(raw[:-20])
    with pytest.raises(bd.BundleError, match="b.json"):
        bd.load(tmp_path / "b.json")


def test_check_refs(system, tmp_path):
    (tmp_path / "ae_rm.sdbm").write_bytes(b"model")
    system.refs = {"ae_rm": ("ae_rm.sdbm", bd.file_digest(tmp_path / "ae_rm.sdbm"))}
    system.check_refs(tmp_path)
    (tmp_path / "ae_rm.sdbm").write_bytes(b"other model")
    with pytest.raises(bd.BundleError, match="changed"):
        system.check_refs(tmp_path)
    (tmp_path / "ae_rm.sdbm").unlink()
    with pytest.raises(bd.BundleError, match="missing"):
        system.check_refs(tmp_path)


def test_save_load_system(system, tmp_path):
    bd.save_system(tmp_path / "s.bundle", system)
    back = bd.load_system(tmp_path / "s.bundle")
    assert (back.system, back.features, back.feature_dim) == ("tandem", "rm", 3)
    np.testing.assert_array_equal(back.priors.probs, system.priors.probs)
    np.testing.assert_array_equal(back.input_norm.hi, np.ones(3))
