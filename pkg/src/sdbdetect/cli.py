"""``sdb`` command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The log level comes from ``SDB_LOG_LEVEL`` (default ``WARNING``).
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline as pl

logger = logging.getLogger("sdbdetect")

FEATURE_CHOICE = click.Choice(pl.FEATURE_SETS)
SPLIT_CHOICE = click.Choice(["train", "dev", "test"])


def _setup_logging() -> None:
    level = os.environ.get("SDB_LOG_LEVEL", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise click.UsageError(f"SDB_LOG_LEVEL={level!r} is not a logging level")
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _guard(fn):
    """Map library failures onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except pl.ConfigError as exc:
            raise click.UsageError(str(exc)) from None
        except Exception as exc:  # noqa: BLE001 - reported, exit 1
            logger.debug("failure", exc_info=True)
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from None

    return wrapper


def config_option(fn):
    fn = click.option("--system", type=click.Choice(pl.SYSTEMS), help="Recogniser architecture.")(fn)
    fn = click.option("--features", type=FEATURE_CHOICE, help="Feature set.")(fn)
    fn = click.option("--seed", type=int, help="Override the config seed.")(fn)
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False), help="TOML pipeline config.")(fn)
    return fn


def _load(config_path, seed=None, features=None, system=None) -> pl.PipelineConfig:
    cfg = pl.load_config(config_path)
    if seed is not None:
        cfg.seed = seed
    if features is not None:
        cfg.features = features
    if system is not None:
        cfg.system = system
    cfg.validate()
    return cfg


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Detect snore, breath and other breathing events in 16 kHz audio."""
    _setup_logging()


@cli.command()
@config_option
@_guard
def synth(config_path, seed, features, system):
    """Generate the synthetic corpus and print its manifest path."""
    cfg = _load(config_path, seed, features, system)
    click.echo(pl.run_synth(cfg))


@cli.command()
@config_option
@click.option("--all", "all_bases", is_flag=True, help="Extract mfcc, rm and acf regardless of --features.")
@_guard
def extract(config_path, seed, features, system, all_bases):
    """Compute and cache front-end features for every recording."""
    cfg = _load(config_path, seed, features, system)
    bases = tuple(pl.BASE_FEATURES) if all_bases else None
    n = pl.run_extract(cfg, bases)
    click.echo(f"wrote {n} feature files to {cfg.work_dir / 'features'}")


@cli.command()
@click.argument("stage", type=click.Choice(["ae", "tandem", "hybrid", "lm", "screener"]))
@config_option
@_guard
def train(stage, config_path, seed, features, system):
    """Train one pipeline stage: ae, tandem, hybrid, lm or screener."""
    cfg = _load(config_path, seed, features, system)
    lay = pl.Layout(cfg)
    if stage == "ae":
        if cfg.features == "mfcc":
            raise click.UsageError("autoencoders need --features rm, acf or rm+acf")
        for b in pl.base_features(cfg.features):
            loss = pl.run_train_ae(cfg, b)
            click.echo(f"{lay.ae(b)}  loss {loss[0]:.6g} -> {loss[-1]:.6g}")
    elif stage == "lm":
        pl.run_train_lm(cfg)
        click.echo(lay.lm)
    elif stage == "screener":
        pl.run_train_screener(cfg)
        click.echo(lay.screener)
    else:
        cfg.system = stage
        lay = pl.Layout(cfg)
        (pl.run_train_tandem if stage == "tandem" else pl.run_train_hybrid)(cfg)
        click.echo(lay.system())


@cli.command()
@config_option
@_guard
def tune(config_path, seed, features, system):
    """Grid-search LM scale and insertion penalty on the dev split."""
    cfg = _load(config_path, seed, features, system)
    res = pl.run_tune(cfg)
    click.echo(f"lm_scale = {res.lm_scale}\ninsertion_penalty = {res.insertion_penalty}\n"
               f"dev_eer = {res.eer:.6f}\ndev_f_measure = {res.f_measure:.6f}")


@cli.command()
@config_option
@click.option("--split", type=SPLIT_CHOICE, default="test", show_default=True)
@click.option("--lm-scale", type=float, help="Override the LM scale.")
@click.option("--insertion-penalty", type=float, help="Override the insertion penalty.")
@click.option("--no-lm", is_flag=True, help="Decode without the language model.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Output directory for event files.")
@_guard
def decode(config_path, seed, features, system, split, lm_scale, insertion_penalty, no_lm, out_dir):
    """Decode a split into per-recording event files (label TSV format)."""
    cfg = _load(config_path, seed, features, system)
    out = pl.run_decode(cfg, split, lm_scale, insertion_penalty, use_lm=False if no_lm else None,
                        out_dir=Path(out_dir) if out_dir else None)
    click.echo(out)


@cli.command()
@config_option
@click.option("--split", type=SPLIT_CHOICE, default="test", show_default=True)
@click.option("--hyp", "hyp_dir", type=click.Path(exists=True, file_okay=False),
              help="Directory of decoded event files (default: the decode output for this system).")
@_guard
def evaluate(config_path, seed, features, system, split, hyp_dir):
    """Score decoded events: event error rate and snore frame P/R/F."""
    from .metrics import format_report

    cfg = _load(config_path, seed, features, system)
    rep = pl.run_evaluate(cfg, split, Path(hyp_dir) if hyp_dir else None)
    click.echo(format_report(rep), nl=False)
    click.echo(json.dumps(rep, sort_keys=True))


@cli.command()
@config_option
@click.option("--split", type=SPLIT_CHOICE, default="test", show_default=True)
@click.option("--threshold", type=float, help="Minimum snore fraction per segment.")
@_guard
def screen(config_path, seed, features, system, split, threshold):
    """List full-length segments whose snore fraction reaches the threshold."""
    cfg = _load(config_path, seed, features, system)
    if threshold is not None:
        cfg.screen = dataclasses.replace(cfg.screen, threshold=threshold)
        cfg.validate()
    for key, segs in pl.run_screen(cfg, split).items():
        for start, end in segs:
            click.echo(f"{key}\t{start:.3f}\t{end:.3f}")


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--batch", type=int, default=2, show_default=True, help="Frames per check.")
@_guard
def gradcheck(seed, batch):
    """Compare backprop with finite differences on the network topologies."""
    from .neural import (
        ACF_ENCODER,
        RM_ENCODER,
        gradient_check,
        init_autoencoder,
        init_classifier,
    )

    rng = np.random.default_rng(seed)
    cases = [
        ("rm autoencoder", init_autoencoder(64, RM_ENCODER, seed), "mse"),
        ("acf autoencoder", init_autoencoder(320, ACF_ENCODER, seed), "mse"),
        ("classifier", init_classifier(48, seed=seed), "cross_entropy"),
    ]
    worst = 0.0
    for name, model, obj in cases:
        x = rng.uniform(0, 1, (batch, model.input_dim))
        target = x if obj == "mse" else rng.integers(0, model.output_dim, batch)
        err = gradient_check(model, x, target, obj)
        worst = max(worst, err)
        click.echo(f"{name:16s} {'-'.join(map(str, model.dims))}  max relative error {err:.3e}")
    if worst >= 1e-4:
        raise click.ClickException(f"gradient check failed: {worst:.3e} >= 1e-4")


def main(argv=None):
    cli.main(args=argv, prog_name="sdb")


if __name__ == "__main__":
    main()
