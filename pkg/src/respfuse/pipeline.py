"""Pipeline stages, on-disk artifacts and stage caching.

``run_pipeline`` executes synth → extract → prep → augment → features →
train → eval → report against a single JSON config.  Every stage writes
its outputs under the chosen directory plus a fingerprint in ``.cache/``,
so a rerun with an unchanged config resumes from the cached prefix and
reproduces identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Mapping, Sequence

import jsonschema
import numpy as np

from . import augment as aug
from . import classify as cls
from . import extract as ext
from . import features as feat
from . import prep
from . import refine
from . import synth
from .records import Record, read_dataset, read_record, write_record
from .types import FeatureSeries, FeatureVector, LabeledSegment, PatternLabel, RespiratorySignal

__all__ = [
    "DEFAULT_CONFIG",
    "CONFIG_SCHEMA",
    "ConfigError",
    "StageError",
    "STAGES",
    "load_config",
    "run_pipeline",
    "featurize",
    "featurize_segment",
    "save_model",
    "load_model",
    "emit_report",
]

STAGES = ("synth", "extract", "prep", "augment", "features", "train", "eval", "report")

DEFAULT_CONFIG: dict = {
    "seed": 1234,
    "fs": 10.0,
    "synth": {
        "subjects": 6,
        "noise_sd": 0.05,
        "pause_s": 5.0,
        "duration_s": 60.0,
        "effort_jitter": 0.12,
        "phase_jitter": 0.3,
        "latency_jitter_s": 2.0,
        "depth_jitter": 0.08,
        "protocol": None,
        "observations": None,
    },
    "extract": {
        "motion_threshold": 5.0,
        "reinit_delay_s": 2.0,
        "keep_channels": 5,
        "window_s": 30.0,
    },
    "prep": {"normalize": True},
    "augment": {"per_class": 1000},
    "features": {"variance_window_s": 30.0},
    "classify": {"svm_c": 1.0, "folds": 10, "kernel": "linear", "gamma": 1.0, "tol": 1e-6},
    "report": {"formats": ["json", "csv"]},
}

_PROTOCOL_ROW = {
    "type": "object",
    "required": ["pattern", "frequency_bpm", "effort_nu", "target_range_bpm"],
    "properties": {
        "pattern": {"type": "string"},
        "frequency_bpm": {"type": "number"},
        "effort_nu": {"type": "number"},
        "duration_s": {"type": "number"},
        "target_range_bpm": {
            "type": "array", "items": {"type": "number"},
            "minItems": 2, "maxItems": 2,
        },
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA: dict = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer"},
        "fs": {"type": "number", "exclusiveMinimum": 0},
        "synth": {
            "type": "object",
            "properties": {
                "subjects": {"type": "integer", "minimum": 2},
                "noise_sd": {"type": "number", "minimum": 0},
                "pause_s": {"type": "number", "minimum": 0},
                "duration_s": {"type": "number", "exclusiveMinimum": 0},
                "effort_jitter": {"type": "number", "minimum": 0, "maximum": 0.5},
                "phase_jitter": {"type": "number", "minimum": 0},
                "latency_jitter_s": {"type": "number", "minimum": 0},
                "depth_jitter": {"type": "number", "minimum": 0, "maximum": 0.5},
                "protocol": {
                    "oneOf": [{"type": "null"}, {"type": "string"},
                              {"type": "array", "items": _PROTOCOL_ROW}],
                },
                "observations": {
                    "oneOf": [{"type": "null"}, {
                        "type": "object",
                        "required": ["channels", "respiratory_fraction"],
                        "properties": {
                            "channels": {"type": "array", "items": {"type": "object"}},
                            "respiratory_fraction": {
                                "type": "array", "items": {"type": "number"}},
                        },
                        "additionalProperties": False,
                    }],
                },
            },
            "additionalProperties": False,
        },
        "extract": {
            "type": "object",
            "properties": {
                "motion_threshold": {"type": "number", "exclusiveMinimum": 0},
                "reinit_delay_s": {"type": "number", "minimum": 0},
                "keep_channels": {"type": "integer", "minimum": 1},
                "window_s": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "prep": {
            "type": "object",
            "properties": {"normalize": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "augment": {
            "type": "object",
            "properties": {"per_class": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "features": {
            "type": "object",
            "properties": {"variance_window_s": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
        },
        "classify": {
            "type": "object",
            "properties": {
                "svm_c": {"type": "number", "exclusiveMinimum": 0},
                "folds": {"type": "integer", "minimum": 2},
                "kernel": {"enum": ["linear", "rbf"]},
                "gamma": {"type": "number", "exclusiveMinimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "report": {
            "type": "object",
            "properties": {
                "formats": {"type": "array", "items": {"enum": ["json", "csv"]}},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """The config file violates the schema."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _deep_merge(base: dict, override: Mapping) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: Mapping | None = None) -> dict:
    """Load, merge with defaults and schema-check a pipeline config."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}") from exc
    config = _deep_merge(DEFAULT_CONFIG, raw)
    if overrides:
        config = _deep_merge(config, overrides)
        jsonschema.validate({k: v for k, v in config.items()}, CONFIG_SCHEMA)
    return config


# ---------------------------------------------------------------------------
# feature composition

def featurize(signal: RespiratorySignal, variance_window_s: float = 30.0):
    """Run the full per-record feature chain.

    Returns the fused feature series and its moving variances.  Records too
    short for the spectral band fall back to the peak path alone.
    """
    smoothed = feat.sgolay_smooth(signal)
    peaks = feat.detect_peaks(smoothed)
    series_p = feat.peak_features(peaks, signal.n, signal.fs)
    try:
        spectrogram = feat.cwt_spectrogram(smoothed)
        series_s = feat.ridge_features(spectrogram)
    except ValueError:
        zeros = np.zeros(signal.n)
        series_s = FeatureSeries(zeros, zeros.copy(),
                                 np.zeros(signal.n, dtype=bool), signal.fs)
    fused = refine.fuse_features(refine.artifact_correct(series_p),
                                 refine.artifact_correct(series_s))
    window_s = min(variance_window_s, signal.n / signal.fs)
    variances = refine.moving_variance(fused, window_s)
    return fused, variances


def featurize_segment(signal: RespiratorySignal,
                      variance_window_s: float = 30.0) -> FeatureVector:
    fused, variances = featurize(signal, variance_window_s)
    return refine.segment_features(fused, variances, (0, signal.n))


# ---------------------------------------------------------------------------
# stage plumbing

def _fingerprint(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _cache_path(out: Path, stage: str) -> Path:
    return out / ".cache" / f"{stage}.json"


def _cache_valid(out: Path, stage: str, fingerprint: str) -> bool:
    path = _cache_path(out, stage)
    if not path.exists():
        return False
    try:
        entry = json.loads(path.read_text())
    except json.JSONDecodeError:
        return False
    if entry.get("fingerprint") != fingerprint:
        return False
    return all((out / rel).exists() for rel in entry.get("outputs", []))


def _cache_store(out: Path, stage: str, fingerprint: str, outputs: Sequence[Path]):
    path = _cache_path(out, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    rel = [str(p.relative_to(out)) for p in outputs]
    path.write_text(json.dumps({"fingerprint": fingerprint, "outputs": sorted(rel)},
                               indent=2, sort_keys=True))


def _protocol_from_config(cfg: dict) -> tuple[synth.PatternSpec, ...]:
    spec = cfg["synth"]["protocol"]
    duration = float(cfg["synth"]["duration_s"])
    if spec is None:
        return tuple(dataclasses.replace(row, duration=duration)
                     for row in synth.DEFAULT_PROTOCOL)
    if isinstance(spec, str):
        return synth.load_protocol(spec)
    rows = []
    for row in spec:
        rows.append(synth.PatternSpec(
            PatternLabel.from_name(row["pattern"]),
            float(row["frequency_bpm"]),
            float(row["effort_nu"]),
            float(row.get("duration_s", duration)),
            tuple(float(v) for v in row["target_range_bpm"]),
        ))
    return tuple(rows)


def _subject_ids(count: int) -> list[str]:
    return [f"s{k + 1:02d}" for k in range(count)]


def _write_truth(path: Path, truth: FeatureSeries):
    lines = ["rr_bpm,amp_nu"]
    lines.extend(f"{r:.9g},{a:.9g}" for r, a in zip(truth.rr, truth.amp))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _read_truth(path: Path, fs: float) -> FeatureSeries:
    rows = path.read_text(encoding="utf-8").strip().splitlines()[1:]
    rr, amp = zip(*(tuple(float(v) for v in line.split(",")) for line in rows))
    rr = np.asarray(rr)
    amp = np.asarray(amp)
    return FeatureSeries(rr, amp, np.ones(rr.size, dtype=bool), fs)


def stage_synth(config: dict, out: Path) -> list[Path]:
    cfg = config["synth"]
    fs = float(config["fs"])
    seed = int(config["seed"])
    protocol = _protocol_from_config(config)
    records_dir = out / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    segments_index: dict = {"fs": fs, "subjects": {}}
    root = np.random.SeedSequence([seed, 0x5E_ED])
    protocol_seed = int(root.generate_state(1)[0])
    subject_seeds = root.spawn(int(cfg["subjects"]))
    obs_cfg = cfg["observations"]
    for subject, sub_seed in zip(_subject_ids(int(cfg["subjects"])), subject_seeds):
        rng = np.random.default_rng(sub_seed)
        specs = []
        for row in protocol:
            effort = row.effort
            if effort > 0:
                effort *= 1.0 + rng.uniform(-cfg["effort_jitter"], cfg["effort_jitter"])
            phase = float(rng.uniform(-cfg["phase_jitter"], cfg["phase_jitter"]))
            latency = 0.0
            if row.label in (PatternLabel.CHEYNE_STOKES, PatternLabel.BIOTS):
                latency = float(rng.uniform(0.0, cfg["latency_jitter_s"]))
            specs.append(dataclasses.replace(row, effort=effort, phase=phase,
                                             latency=latency))
        clean, segments, truth = synth._render_protocol(specs, float(cfg["pause_s"]),
                                                        fs, protocol_seed)
        noisy = clean.samples + rng.normal(0.0, float(cfg["noise_sd"]), clean.n) \
            if cfg["noise_sd"] > 0 else np.asarray(clean.samples)
        record_path = records_dir / f"{subject}.resp"
        write_record(record_path, Record(RespiratorySignal(noisy, fs), subject=subject))
        truth_path = records_dir / f"{subject}.truth.csv"
        _write_truth(truth_path, truth)
        outputs.extend([record_path, truth_path])
        segments_index["subjects"][subject] = [
            {"label": int(seg.label), "start": int(seg.start),
             "length": seg.signal.n, "target_rr": list(seg.target_rr_range)}
            for seg in segments
        ]
        if obs_cfg is not None:
            obs_dir = out / "observations"
            obs_dir.mkdir(parents=True, exist_ok=True)
            channels = [synth.ChannelModel(**row) for row in obs_cfg["channels"]]
            matrix = synth.synthesize_observations(
                RespiratorySignal(noisy, fs), channels,
                obs_cfg["respiratory_fraction"],
                seed=int(rng.integers(2 ** 31)))
            obs_path = obs_dir / f"{subject}.csv"
            np.savetxt(obs_path, matrix.data, delimiter=",", fmt="%.9g")
            sidecar = obs_dir / f"{subject}.json"
            sidecar.write_text(json.dumps(
                {"fs": fs, "channels": [f"ch{c}" for c in range(matrix.n_channels)]},
                sort_keys=True))
            outputs.extend([obs_path, sidecar])
    index_path = records_dir / "segments.json"
    index_path.write_text(json.dumps(segments_index, sort_keys=True, indent=2))
    outputs.append(index_path)
    return outputs


def stage_extract(config: dict, out: Path) -> list[Path]:
    cfg = config["extract"]
    extracted_dir = out / "extracted"
    extracted_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    if config["synth"]["observations"] is None:
        # single-signal mode: the synthesized record is the extracted signal
        for name, record in read_dataset(out / "records"):
            path = extracted_dir / f"{name}.resp"
            write_record(path, record)
            outputs.append(path)
        return outputs
    for obs_path in sorted((out / "observations").glob("*.csv")):
        sidecar = json.loads(obs_path.with_suffix(".json").read_text())
        data = np.loadtxt(obs_path, delimiter=",", ndmin=2)
        matrix = synth.ObservationMatrix(data, float(sidecar["fs"]))
        signal = ext.extract_signal(
            matrix, threshold=float(cfg["motion_threshold"]),
            reinit_delay_s=float(cfg["reinit_delay_s"]),
            keep=int(cfg["keep_channels"]), window_s=float(cfg["window_s"]))
        path = extracted_dir / f"{obs_path.stem}.resp"
        write_record(path, Record(signal, subject=obs_path.stem))
        outputs.append(path)
    return outputs


def stage_prep(config: dict, out: Path) -> list[Path]:
    index = json.loads((out / "records" / "segments.json").read_text())
    prepped_dir = out / "prepped"
    prepped_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, record in read_dataset(out / "extracted"):
        signal = record.signal
        provenance = dict(record.provenance or {})
        if config["prep"]["normalize"]:
            segments = index["subjects"][name]
            calib = next((s for s in segments if s["label"] == int(PatternLabel.EUPNEA)),
                         None)
            if calib is None:
                raise ValueError(f"{name}: no normal-breathing segment to calibrate on")
            scale = 1.0 / prep.dominant_amplitude(
                signal.samples[calib["start"]:calib["start"] + calib["length"]])
            signal = signal.scaled(scale)
            provenance["norm_scale"] = float(scale)
        path = prepped_dir / f"{name}.resp"
        write_record(path, Record(signal, record.label, record.subject or name,
                                  record.target_rr_range, provenance or None))
        outputs.append(path)
    return outputs


def stage_augment(config: dict, out: Path) -> list[Path]:
    index = json.loads((out / "records" / "segments.json").read_text())
    per_class = int(config["augment"]["per_class"])
    subjects: dict[str, list[LabeledSegment]] = {}
    for name, record in read_dataset(out / "prepped"):
        segs = []
        for row in index["subjects"][name]:
            segs.append(LabeledSegment(
                record.signal.slice(row["start"], row["start"] + row["length"]),
                PatternLabel(row["label"]),
                tuple(row["target_rr"]),
                start=row["start"]))
        subjects[name] = segs
    dataset = aug.build_dataset(subjects, per_class=per_class, seed=int(config["seed"]))
    dataset_dir = out / "dataset"
    dataset_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    counters: dict[PatternLabel, int] = {}
    for segment in dataset:
        k = counters.get(segment.label, 0)
        counters[segment.label] = k + 1
        path = dataset_dir / f"{segment.label.name.lower()}_{k:04d}.resp"
        write_record(path, Record(segment.signal, segment.label, None,
                                  segment.target_rr_range, segment.provenance))
        outputs.append(path)
    return outputs


def _vector_row(args) -> tuple[str, int, float, float, float, float]:
    path_str, variance_window_s = args
    record = read_record(path_str)
    vector = featurize_segment(record.signal, variance_window_s)
    return (Path(path_str).stem, int(record.label), vector.rr_med, vector.a_med,
            vector.rr_var_med, vector.a_var_med)


def _worker_count() -> int:
    value = os.environ.get("RESPFUSE_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def stage_features(config: dict, out: Path) -> list[Path]:
    variance_window_s = float(config["features"]["variance_window_s"])
    features_dir = out / "features"
    (features_dir / "series").mkdir(parents=True, exist_ok=True)
    outputs = []

    dataset_paths = sorted((out / "dataset").glob("*.resp"))
    if not dataset_paths:
        raise ValueError("no dataset records; run the augment stage first")
    jobs = [(str(p), variance_window_s) for p in dataset_paths]
    workers = _worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_vector_row, jobs, chunksize=32))
    else:
        rows = [_vector_row(job) for job in jobs]
    vectors_path = features_dir / "vectors.csv"
    with vectors_path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("record,label,rr_med,a_med,rr_var_med,a_var_med\n")
        for name, label, *values in rows:
            fh.write(f"{name},{label}," + ",".join(f"{v:.9g}" for v in values) + "\n")
    outputs.append(vectors_path)

    # per-subject fused series, for agreement evaluation and plotting
    for name, record in read_dataset(out / "prepped"):
        fused, variances = featurize(record.signal, variance_window_s)
        series_path = features_dir / "series" / f"{name}.csv"
        with series_path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write("rr_bpm,amp_nu,valid,rr_var,a_var,var_valid\n")
            for k in range(fused.n):
                fh.write(f"{fused.rr[k]:.9g},{fused.amp[k]:.9g},{int(fused.valid[k])},"
                         f"{variances.rr_var[k]:.9g},{variances.a_var[k]:.9g},"
                         f"{int(variances.valid[k])}\n")
        outputs.append(series_path)
    return outputs


def load_vectors(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read a feature-vector table; returns (X, labels, record names)."""
    names: list[str] = []
    labels: list[int] = []
    rows: list[list[float]] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            names.append(row["record"])
            labels.append(int(row["label"]))
            rows.append([float(row[c]) for c in
                         ("rr_med", "a_med", "rr_var_med", "a_var_med")])
    return np.asarray(rows), np.asarray(labels, dtype=int), names


def save_model(path, model: cls.SvmModel) -> None:
    if model.kernel != "linear":
        raise NotImplementedError("only linear models are persisted")
    np.savez(path,
             mean=model.mean, scale=model.scale, class_codes=model.class_codes,
             pair_a=np.array([a for a, _ in model.pairs]),
             pair_b=np.array([b for _, b in model.pairs]),
             weights=model.weights, biases=model.biases)


def load_model(path) -> cls.SvmModel:
    data = np.load(path)
    pairs = tuple((int(a), int(b)) for a, b in zip(data["pair_a"], data["pair_b"]))
    return cls.SvmModel(data["mean"], data["scale"], data["class_codes"],
                        pairs, data["weights"], data["biases"])


def stage_train(config: dict, out: Path) -> list[Path]:
    cfg = config["classify"]
    x, y, _ = load_vectors(out / "features" / "vectors.csv")
    model = cls.train_ovo(x, y, c=float(cfg["svm_c"]), kernel=cfg["kernel"],
                          gamma=float(cfg["gamma"]), tol=float(cfg["tol"]))
    model_path = out / "model.bin"
    save_model(model_path, model)
    return [model_path]


def _read_series(path, fs: float):
    data = np.genfromtxt(path, delimiter=",", names=True)
    fused = FeatureSeries(data["rr_bpm"], data["amp_nu"],
                          data["valid"].astype(bool), fs)
    return fused


def stage_eval(config: dict, out: Path) -> list[Path]:
    cfg = config["classify"]
    x, y, _ = load_vectors(out / "features" / "vectors.csv")
    report = cls.cross_validate(x, y, k=int(cfg["folds"]), c=float(cfg["svm_c"]),
                                seed=int(config["seed"]), kernel=cfg["kernel"],
                                gamma=float(cfg["gamma"]), tol=float(cfg["tol"]))

    # feature agreement of the per-subject fused series against the truth
    index = json.loads((out / "records" / "segments.json").read_text())
    fs = float(index["fs"])
    extracted_parts, truth_parts, segments = [], [], []
    offset = 0
    for name in sorted(index["subjects"]):
        fused = _read_series(out / "features" / "series" / f"{name}.csv", fs)
        truth = _read_truth(out / "records" / f"{name}.truth.csv", fs)
        extracted_parts.append(fused)
        truth_parts.append(truth)
        for row in index["subjects"][name]:
            segments.append((offset + row["start"], offset + row["start"] + row["length"],
                             PatternLabel(row["label"])))
        offset += fused.n
    extracted = FeatureSeries(
        np.concatenate([p.rr for p in extracted_parts]),
        np.concatenate([p.amp for p in extracted_parts]),
        np.concatenate([p.valid for p in extracted_parts]), fs)
    reference = FeatureSeries(
        np.concatenate([p.rr for p in truth_parts]),
        np.concatenate([p.amp for p in truth_parts]),
        np.concatenate([p.valid for p in truth_parts]), fs)
    report.agreement = cls.evaluate_features(extracted, reference, segments,
                                             include_invalid=True)

    report_path = out / "report.json"
    report_path.write_text(report.to_json() + "\n", encoding="utf-8", newline="\n")
    eval_dir = out / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    cloud_path = eval_dir / "bland_altman_cloud.csv"
    with cloud_path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("mean_bpm,diff_bpm\n")
        for m, d in zip(report.agreement.cloud_mean, report.agreement.cloud_diff):
            fh.write(f"{m:.9g},{d:.9g}\n")
    return [report_path, cloud_path]


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    def fmt(value) -> str:
        if value is None:
            return ""
        if isinstance(value, float):
            return f"{value:.9g}"
        return str(value)

    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def emit_report(report: dict, out_dir, formats: Sequence[str] = ("csv",),
                cloud_csv=None) -> list[Path]:
    """Write the report tables: one CSV per table plus the point cloud."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n",
                        encoding="utf-8", newline="\n")
        outputs.append(path)
    if "csv" not in formats:
        return outputs
    pattern_names = [label.display_name for label in PatternLabel]
    agreement = report.get("feature_agreement")
    if agreement:
        for key, filename, unit in (("rr_rmse", "rmse_rr.csv", "breaths_per_min"),
                                    ("amp_rmse", "rmse_amplitude.csv", "nu")):
            table = agreement[key]
            rows = [[name, table.get(name)] for name in pattern_names]
            rows.append(["Mean", table.get("Mean")])
            rows.append(["Median", table.get("Median")])
            path = out_dir / filename
            _write_csv(path, ["pattern", f"rmse_{unit}"], rows)
            outputs.append(path)
        outliers = agreement["outliers"]
        rows = [[name, outliers.get(name, 0)] for name in pattern_names
                if name != PatternLabel.APNEA.display_name]
        rows.append(["Sum", agreement["outlier_total"]])
        rows.append(["Ratio", agreement["outlier_ratio"]])
        path = out_dir / "outliers.csv"
        _write_csv(path, ["pattern", "outliers_gt_2sd"], rows)
        outputs.append(path)
        ba = agreement["bland_altman"]
        path = out_dir / "bland_altman_stats.csv"
        _write_csv(path, ["bias", "sd", "loa_low", "loa_high"],
                   [[ba["bias"], ba["sd"], ba["loa_low"], ba["loa_high"]]])
        outputs.append(path)
    classification = report.get("classification")
    if classification:
        names = classification["class_names"]
        confusion = classification["confusion"]
        rows = [[name, *row] for name, row in zip(names, confusion)]
        path = out_dir / "confusion.csv"
        _write_csv(path, ["true\\predicted", *names], rows)
        outputs.append(path)
        path = out_dir / "accuracy.csv"
        _write_csv(path, ["metric", "value"],
                   [["accuracy", classification["accuracy"]],
                    *[[f"fold_{k}", v] for k, v in
                      enumerate(classification["fold_accuracies"])]])
        outputs.append(path)
    if cloud_csv is not None and Path(cloud_csv).exists():
        target = out_dir / "bland_altman.csv"
        target.write_bytes(Path(cloud_csv).read_bytes())
        outputs.append(target)
    return outputs


def stage_report(config: dict, out: Path) -> list[Path]:
    report = json.loads((out / "report.json").read_text())
    return emit_report(report, out / "report", config["report"]["formats"],
                       cloud_csv=out / "eval" / "bland_altman_cloud.csv")


_STAGE_FUNCS = {
    "synth": stage_synth,
    "extract": stage_extract,
    "prep": stage_prep,
    "augment": stage_augment,
    "features": stage_features,
    "train": stage_train,
    "eval": stage_eval,
    "report": stage_report,
}

_STAGE_CONFIG_KEYS = {
    "synth": ("seed", "fs", "synth"),
    "extract": ("extract",),
    "prep": ("prep",),
    "augment": ("seed", "augment"),
    "features": ("features",),
    "train": ("classify",),
    "eval": ("seed", "classify"),
    "report": ("report",),
}


def run_pipeline(config: dict, out, use_cache: bool = True,
                 stages: Sequence[str] | None = None) -> dict[str, list[Path]]:
    """Execute the requested stages (all by default) with caching.

    A stage reruns when its config slice, or any upstream fingerprint,
    changed or its outputs are missing; otherwise the cached artifacts are
    kept as is.  Raises :class:`StageError` naming the failing stage.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    todo = STAGES if stages is None else tuple(stages)
    unknown = set(todo) - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stages: {sorted(unknown)}")
    produced: dict[str, list[Path]] = {}
    parent_fp = ""
    for stage in STAGES:
        slice_payload = {key: config[key] for key in _STAGE_CONFIG_KEYS[stage]}
        fingerprint = _fingerprint({"stage": stage, "config": slice_payload,
                                    "parent": parent_fp})
        parent_fp = fingerprint
        if stage not in todo:
            continue
        if use_cache and _cache_valid(out, stage, fingerprint):
            entry = json.loads(_cache_path(out, stage).read_text())
            produced[stage] = [out / rel for rel in entry["outputs"]]
            continue
        try:
            outputs = _STAGE_FUNCS[stage](config, out)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        _cache_store(out, stage, fingerprint, outputs)
        produced[stage] = outputs
    return produced
