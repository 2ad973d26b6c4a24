"""Command-line driver for the respiratory-pattern pipeline.

Every subcommand runs one pipeline stage against a shared output
directory; ``run`` executes them all.  A single JSON config controls the
run; the most common knobs are also exposed as flags.  Exit codes: 2 for
config problems, 1 for stage failures.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import extract as ext
from .pipeline import (
    ConfigError,
    StageError,
    emit_report,
    load_config,
    run_pipeline,
)
from .records import Record, write_record
from .types import ObservationMatrix

_FLAG_MAP = {
    "seed": ("seed",),
    "window_s": ("extract", "window_s"),
    "keep_channels": ("extract", "keep_channels"),
    "motion_threshold": ("extract", "motion_threshold"),
    "svm_c": ("classify", "svm_c"),
    "folds": ("classify", "folds"),
    "per_class": ("augment", "per_class"),
    "noise_sd": ("synth", "noise_sd"),
    "subjects": ("synth", "subjects"),
}


def _overrides(**kwargs) -> dict:
    out: dict = {}
    for key, value in kwargs.items():
        if value is None:
            continue
        cursor = out
        *parents, leaf = _FLAG_MAP[key]
        for parent in parents:
            cursor = cursor.setdefault(parent, {})
        cursor[leaf] = value
    return out


def _stage_options(func):
    decorators = [
        click.option("--config", "config_path", type=click.Path(), default=None,
                     help="Pipeline config (JSON). Defaults apply when omitted."),
        click.option("--out", "out_dir", type=click.Path(), required=True,
                     help="Output directory shared by all stages."),
        click.option("--no-cache", is_flag=True, help="Ignore cached stage outputs."),
        click.option("--seed", type=int, default=None),
        click.option("--window-s", "window_s", type=float, default=None),
        click.option("--keep-channels", "keep_channels", type=int, default=None),
        click.option("--motion-threshold", "motion_threshold", type=float, default=None),
        click.option("--svm-c", "svm_c", type=float, default=None),
        click.option("--folds", type=int, default=None),
        click.option("--per-class", "per_class", type=int, default=None),
        click.option("--noise-sd", "noise_sd", type=float, default=None),
        click.option("--subjects", type=int, default=None),
    ]
    for decorator in reversed(decorators):
        func = decorator(func)
    return func


def _execute(stage: str | None, config_path, out_dir, no_cache, **flags):
    try:
        config = load_config(config_path, _overrides(**flags))
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    try:
        stages = None if stage is None else [stage]
        run_pipeline(config, out_dir, use_cache=not no_cache, stages=stages)
    except StageError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@click.group()
@click.version_option(package_name="respfuse")
def main():
    """Respiratory-pattern synthesis, extraction and classification."""


def _register(stage: str, help_text: str):
    @main.command(name=stage, help=help_text)
    @_stage_options
    def command(config_path, out_dir, no_cache, **flags):
        _execute(stage, config_path, out_dir, no_cache, **flags)

    return command


_register("synth", "Synthesize subject recordings (and observation matrices).")
_register("prep", "Normalize extracted signals to normalized units.")
_register("augment", "Expand labeled segments to a balanced dataset.")
_register("features", "Extract fused feature series and per-segment vectors.")
_register("train", "Train the pairwise-vote SVM on the feature table.")
_register("eval", "Cross-validate and compute the metric tables.")
_register("report", "Emit report tables as CSV/JSON.")


@main.command(name="extract", help="Fuse observation matrices into 1-D signals.")
@_stage_options
@click.option("--observations", type=click.Path(exists=True), default=None,
              help="Single observation CSV (rows=time) to extract outside a run.")
@click.option("--sidecar", type=click.Path(exists=True), default=None,
              help="JSON sidecar with fs/channel names for --observations.")
@click.option("--record", "record_path", type=click.Path(), default=None,
              help="Where to write the extracted record for --observations.")
def extract_command(config_path, out_dir, no_cache, observations, sidecar,
                    record_path, **flags):
    if observations is not None:
        import json as _json

        if sidecar is None or record_path is None:
            click.echo("error: --observations needs --sidecar and --record", err=True)
            sys.exit(2)
        meta = _json.loads(Path(sidecar).read_text())
        data = np.loadtxt(observations, delimiter=",", ndmin=2)
        try:
            config = load_config(config_path, _overrides(**flags))
            cfg = config["extract"]
            signal = ext.extract_signal(
                ObservationMatrix(data, float(meta["fs"])),
                threshold=float(cfg["motion_threshold"]),
                reinit_delay_s=float(cfg["reinit_delay_s"]),
                keep=int(cfg["keep_channels"]), window_s=float(cfg["window_s"]))
        except ConfigError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except Exception as exc:
            click.echo(f"error: stage 'extract' failed: {exc}", err=True)
            sys.exit(1)
        write_record(record_path, Record(signal, subject=Path(observations).stem))
        return
    _execute("extract", config_path, out_dir, no_cache, **flags)


@main.command(name="run", help="Run every stage in order.")
@_stage_options
def run_command(config_path, out_dir, no_cache, **flags):
    _execute(None, config_path, out_dir, no_cache, **flags)


if __name__ == "__main__":
    main()
