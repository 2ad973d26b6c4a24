"""Plain-text record format: one JSON header line plus CSV sample lines.

Layout of a ``.resp`` file (UTF-8, LF endings)::

    {"fs":10.0,"label":1,"subject":"s01","target_rr":[12.0,18.0],...}
    0.000000000,1
    0.587785252,1
    ...

Each sample line is ``value,flag`` where ``flag`` is 1 for valid samples.
Floats are printed with 9 significant digits, which round-trips exactly:
re-writing a parsed record reproduces the file byte for byte.  A directory
of ``.resp`` files is a dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .types import LabeledSegment, PatternLabel, RecordError, RespiratorySignal, validate_record

__all__ = ["Record", "read_record", "write_record", "read_dataset", "record_from_segment"]


@dataclass(frozen=True, eq=False)
class Record:
    """A stored signal plus the optional header metadata."""

    signal: RespiratorySignal
    label: PatternLabel | None = None
    subject: str | None = None
    target_rr_range: tuple[float, float] | None = None
    provenance: Mapping | None = None

    def to_segment(self, start: int | None = None) -> LabeledSegment:
        if self.label is None or self.target_rr_range is None:
            raise RecordError("record lacks label or target range; cannot form a segment")
        return LabeledSegment(self.signal, self.label, self.target_rr_range,
                              start=start, provenance=self.provenance)


def record_from_segment(segment: LabeledSegment, subject: str | None = None) -> Record:
    return Record(segment.signal, segment.label, subject,
                  segment.target_rr_range, segment.provenance)


def write_record(path, record: Record) -> None:
    path = Path(path)
    header: dict = {"fs": record.signal.fs}
    if record.label is not None:
        header["label"] = int(record.label)
    if record.subject is not None:
        header["subject"] = record.subject
    if record.target_rr_range is not None:
        header["target_rr"] = [float(v) for v in record.target_rr_range]
    if record.provenance:
        header["provenance"] = dict(record.provenance)
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    flags = record.signal.valid.astype(int)
    lines.extend(f"{v:.9g},{f}" for v, f in zip(record.signal.samples, flags))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_record(path) -> Record:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="\n") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise RecordError(f"{path}: malformed header: {exc}") from exc
        samples: list[float] = []
        flags: list[bool] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                value_s, flag_s = line.split(",")
                samples.append(float(value_s))
                flags.append(flag_s == "1")
            except ValueError as exc:
                raise RecordError(f"{path}:{lineno}: malformed sample line {line!r}") from exc
    if "fs" not in header:
        raise RecordError(f"{path}: header lacks fs")
    signal = validate_record({"fs": header["fs"], "samples": samples, "valid": flags})
    label = header.get("label")
    if label is not None:
        label = PatternLabel(int(label))
    target = header.get("target_rr")
    if target is not None:
        target = (float(target[0]), float(target[1]))
    return Record(signal, label, header.get("subject"), target, header.get("provenance"))


def read_dataset(directory, pattern: str = "*.resp") -> list[tuple[str, Record]]:
    """Read every record in a directory, sorted by filename for determinism."""
    directory = Path(directory)
    out = []
    for path in sorted(directory.glob(pattern)):
        out.append((path.stem, read_record(path)))
    if not out:
        raise RecordError(f"no {pattern} records found in {directory}")
    return out
