"""Shared test utilities: CLI runner, fast pipeline configs, result registry."""

from __future__ import annotations

import hashlib
from pathlib import Path

from click.testing import CliRunner

from sdbdetect.cli import cli

#: one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def record(n: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {name}: {detail}"


TINY_SYNTH = dict(
    n_train_speakers=2,
    n_test_speakers=1,
    recordings_per_speaker=2,
    dev_per_speaker=1,
    counts={"snore": 6, "breath": 5, "other": 2},
)

FAST_CONFIG = """\
seed = {seed}
features = "{features}"
system = "{system}"

[paths]
corpus = "corpus"
work = "work"

[synth]
n_train_speakers = 2
n_test_speakers = 1
recordings_per_speaker = 2
dev_per_speaker = 1
counts = {{ snore = 6, breath = 5, other = 2 }}

[ae]
learning_rate = 0.05
epochs = {ae_epochs}
max_frames = 4000

[tandem]
n_mix = 2
max_iter = 4

[decode]
scales = [0.0, 1.0, 4.0]
penalties = [-5.0, 0.0]
{extra}"""


def write_config(directory: Path, seed: int = 3, features: str = "rm", system: str = "tandem",
                 ae_epochs: int = 3, extra: str = "") -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "pipeline.toml"
    path.write_text(FAST_CONFIG.format(seed=seed, features=features, system=system,
                                       ae_epochs=ae_epochs, extra=extra))
    return path


def run_cli(*args, env=None):
    return CliRunner().invoke(cli, [str(a) for a in args], env=env, catch_exceptions=False)


def run_pipeline(config: Path, features: str = "rm") -> list:
    """synth -> extract -> train -> tune -> decode -> evaluate; returns every result."""
    c = ["--config", config, "--features", features]
    steps = [
        ["synth", *c],
        ["extract", *c],
        ["train", "lm", *c],
        ["train", "ae", *c],
        ["train", "tandem", *c],
        ["tune", *c],
        ["decode", *c, "--split", "test"],
        ["evaluate", *c, "--split", "test"],
    ]
    if features == "mfcc":
        steps.remove(["train", "ae", *c])
    results = []
    for s in steps:
        r = run_cli(*s)
        assert r.exit_code == 0, f"{s[0]} failed: {r.output}"
        results.append(r)
    return results


def tree_digest(root: Path) -> dict:
    """sha256 of every file under ``root``, keyed by relative path."""
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }
