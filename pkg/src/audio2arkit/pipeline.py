"""File-based pipeline stages behind the CLI subcommands.

Layout under ``paths.output``::

    units/<rec>/<idx>/{audio.wav, phonemes.json, coefficients.json}
    units/<rec>/units.jsonl       per-recording manifest fragment
    manifest.jsonl                all fragments, recording order
    predictions/<unit_id>.json    generator output per unit
    smoothed/<rec>.json           concatenated + smoothed per recording
    reports/<rec>.json, reports/summary.json

Corpus layout: ``<corpus>/<rec>/{transcript.json, segments.json?, phonemes.json,
coefficients.csv, audio.wav}``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import alignment as al
from .blendshape import (
    BlendshapeSequence,
    ChannelSchema,
    SchemaError,
    load_schema,
    parse_sequence,
    read_csv,
    serialize_sequence,
)
from .config import PipelineConfig
from .generator import (
    GenerationRequest,
    LengthMismatch,
    RemoteConfig,
    fit_frame_count,
    generate_for_span,
    generate_many,
    generate_remote,
)
from .metrics import MetricReport, evaluate
from .phoneme import PhonemeSequence, load_prior_table, read_phoneme_annotations, render_guidance_text
from .smoothing import concat_segments, smooth_pipeline

log = logging.getLogger(__name__)

EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 1, 2
SMOOTHED_DECIMALS = 6


class StageError(RuntimeError):
    """Invalid stage input; maps to exit code 2."""


@dataclass
class StageResult:
    exit_code: int = EXIT_OK
    lines: list[str] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def fail(self, message: str, code: int = EXIT_PARTIAL):
        self.failures.append(message)
        self.lines.append(f"FAILED {message}")
        self.exit_code = max(self.exit_code, code)


def atomic_write(path: Path, data: str | bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if isinstance(data, bytes) else {"encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _map(fn: Callable, items: Sequence, jobs: int | None) -> list:
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def schema_of(config: PipelineConfig) -> ChannelSchema:
    return load_schema(config.schema)


def list_recordings(corpus: Path) -> list[str]:
    if not corpus.is_dir():
        raise StageError(f"corpus directory not found: {corpus}")
    return sorted(p.name for p in corpus.iterdir() if p.is_dir() and not p.name.startswith("."))


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _stage_guard(directory: Path, stamp: dict, force: bool):
    """Clear ``directory`` on --force; refuse to mix outputs from a different upstream input."""
    marker = directory / "_stage.json"
    if force and directory.exists():
        shutil.rmtree(directory)
    if marker.exists():
        old = json.loads(marker.read_text("utf-8"))
        if old != stamp:
            raise StageError(f"{directory} holds outputs from different inputs; rerun with --force")
    atomic_write(marker, json.dumps(stamp, sort_keys=True) + "\n")


# --------------------------------------------------------------------- build-units

def load_recording(config: PipelineConfig, rec_dir: Path, schema: ChannelSchema):
    rec = rec_dir.name
    try:
        transcript = al.TimedTranscript.from_json((rec_dir / "transcript.json").read_text("utf-8"))
    except FileNotFoundError:
        raise StageError(f"{rec}: missing transcript.json") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise StageError(f"{rec}: corrupt transcript.json: {exc}") from exc
    language = config.language or transcript.language
    seg_path = rec_dir / "segments.json"
    if seg_path.exists():
        try:
            segments = json.loads(seg_path.read_text("utf-8"))
        except ValueError as exc:
            raise StageError(f"{rec}: corrupt segments.json: {exc}") from exc
        if not isinstance(segments, list) or not all(isinstance(s, str) for s in segments):
            raise StageError(f"{rec}: segments.json must be an array of strings")
    elif config.naive_split:
        segments = al.naive_semantic_split(transcript, config.alignment.max_tokens) if len(transcript) else []
    else:
        raise StageError(f"{rec}: no segments.json and naive_split is off")
    try:
        phonemes = read_phoneme_annotations((rec_dir / "phonemes.json").read_text("utf-8"), language)
        coeffs = read_csv((rec_dir / "coefficients.csv").read_text("utf-8"), schema, config.fps)
    except FileNotFoundError as exc:
        raise StageError(f"{rec}: missing input {Path(exc.filename).name}") from None
    except (ValueError, KeyError) as exc:
        raise StageError(f"{rec}: {exc}") from exc
    audio = rec_dir / "audio.wav"
    if not audio.exists():
        raise StageError(f"{rec}: missing audio.wav")
    return transcript, segments, phonemes, coeffs, audio


def _unit_record(unit: al.AlignedUnit, rel: str, language: str) -> dict:
    return {
        "unit_id": unit.unit_id,
        "source_id": unit.source_id,
        "index": unit.index,
        "language": language,
        "text": unit.segment.text,
        "token_range": list(unit.segment.token_range),
        "segment_span": list(unit.segment.span),
        "audio_span": list(unit.audio_span),
        "frame_range": list(unit.frame_range),
        "fps": unit.coefficients.fps,
        "audio": f"{rel}/audio.wav",
        "phonemes": f"{rel}/phonemes.json",
        "coefficients": f"{rel}/coefficients.json",
    }


def build_recording(config: PipelineConfig, rec: str, force: bool = False) -> tuple[int, list, bool]:
    """Returns (unit count, drop reasons, skipped)."""
    out = config.paths.output
    rec_out = out / "units" / rec
    fragment = rec_out / "units.jsonl"
    if fragment.exists() and not force:
        n = sum(1 for line in fragment.read_text("utf-8").splitlines() if line.strip())
        return n, [], True
    if rec_out.exists():
        shutil.rmtree(rec_out)
    schema = schema_of(config)
    transcript, segments, phonemes, coeffs, audio = load_recording(config, config.paths.corpus / rec, schema)
    dropped: list = []
    units = al.build_units(transcript, segments, phonemes, coeffs, audio, config.alignment, rec, dropped)
    lines = []
    for unit in units:
        rel = f"units/{rec}/{unit.index:03d}"
        d = out / rel
        atomic_write(d / "audio.wav", unit.audio)
        atomic_write(d / "phonemes.json", json.dumps(unit.phonemes.to_json(), ensure_ascii=False) + "\n")
        atomic_write(d / "coefficients.json",
                     serialize_sequence(unit.coefficients, config.generator.decimals) + "\n")
        lines.append(json.dumps(_unit_record(unit, rel, transcript.language), ensure_ascii=False, sort_keys=True))
    atomic_write(fragment, "".join(line + "\n" for line in lines))
    return len(units), dropped, False


def cmd_build_units(config: PipelineConfig, recording_ids: Iterable[str] | None = None,
                    force: bool = False, jobs: int | None = None) -> StageResult:
    result = StageResult()
    corpus_recs = list_recordings(config.paths.corpus)
    recs = list(recording_ids) if recording_ids else corpus_recs
    unknown = [r for r in recs if r not in corpus_recs]
    if unknown:
        raise StageError(f"unknown recording(s): {', '.join(unknown)}")

    def run(rec):
        try:
            return rec, build_recording(config, rec, force), None
        except (StageError, al.AlignmentFailure) as exc:
            return rec, None, exc

    for rec, outcome, err in _map(run, recs, jobs):
        if err is not None:
            result.fail(str(err) if str(err).startswith(rec) else f"{rec}: {err}")
            continue
        n, dropped, skipped = outcome
        note = " (existing, skipped)" if skipped else ""
        result.lines.append(f"{rec}: {n} units{note}")
        for idx, text, reason in dropped:
            result.lines.append(f"  dropped segment {idx} {text!r}: {reason}")

    out = config.paths.output
    manifest_lines = []
    for rec in corpus_recs:
        fragment = out / "units" / rec / "units.jsonl"
        if fragment.exists():
            manifest_lines.append(fragment.read_text("utf-8"))
    atomic_write(out / "manifest.jsonl", "".join(manifest_lines))
    result.lines.append(f"manifest: {out / 'manifest.jsonl'}")
    return result


# --------------------------------------------------------------------- generate

def read_manifest(path: Path) -> list[dict]:
    if not path.exists():
        raise StageError(f"manifest not found: {path}")
    units = []
    for lineno, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            units.append(json.loads(line))
        except ValueError as exc:
            raise StageError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    return units


def _unit_request(config: PipelineConfig, unit: dict, root: Path, schema: ChannelSchema) -> GenerationRequest:
    audio = root / unit["audio"]
    if not audio.exists():
        raise FileNotFoundError(f"missing audio {unit['audio']}")
    phonemes = read_phoneme_annotations((root / unit["phonemes"]).read_text("utf-8"), unit["language"])
    a, b = unit["frame_range"]
    return GenerationRequest(
        transcript=unit["text"],
        phonemes=phonemes,
        guidance=render_guidance_text(phonemes) if phonemes.items else "",
        audio_ref=audio,
        schema=schema,
        fps=unit["fps"],
        expected_frames=b - a,
        decimals=config.generator.decimals,
    )


def cmd_generate(config: PipelineConfig, manifest: Path | None = None, force: bool = False,
                 jobs: int | None = None) -> StageResult:
    out = config.paths.output
    manifest = manifest or out / "manifest.jsonl"
    units = read_manifest(manifest)
    root = manifest.parent
    pred_dir = out / "predictions"
    gen = config.generator
    _stage_guard(pred_dir, {"manifest": _file_hash(manifest), "mode": gen.mode}, force)
    schema = schema_of(config)
    table = load_prior_table(gen.priors, schema)
    remote = RemoteConfig(endpoint=gen.endpoint or "", token=gen.token, timeout=gen.timeout,
                          retries=gen.retries, max_tokens=gen.max_tokens,
                          frame_tolerance=gen.frame_tolerance)

    def run(unit: dict) -> dict:
        uid = unit["unit_id"]
        target = pred_dir / f"{uid}.json"
        if target.exists():
            return {"unit_id": uid, "status": "skipped"}
        request = _unit_request(config, unit, root, schema)
        entry = {"unit_id": uid, "status": "ok", "warnings": []}
        if gen.mode == "rule":
            seq = generate_for_span(request.phonemes, tuple(unit["audio_span"]),
                                    tuple(unit["frame_range"]), request.fps, table)
            entry["latency"] = 0.0
        else:
            response = generate_remote(request, remote)
            atomic_write(pred_dir / f"{uid}.raw.txt", response.raw_text)
            entry["latency"] = round(response.latency, 6)
            entry["warnings"] = list(response.parsed.warnings)
            seq = fit_frame_count(response.parsed.sequence, request.expected_frames, gen.frame_tolerance)
        atomic_write(target, serialize_sequence(seq, gen.decimals) + "\n")
        return entry

    limit = gen.concurrency if gen.mode == "remote" else (jobs or os.cpu_count() or 1)
    outcomes = generate_many(units, run, limit)
    result = StageResult()
    log_entries = []
    for unit, outcome in zip(units, outcomes):
        if isinstance(outcome, BaseException):
            msg = f"{unit['unit_id']}: {type(outcome).__name__}: {outcome}"
            result.fail(msg)
            log_entries.append({"unit_id": unit["unit_id"], "status": "failed", "error": msg})
        else:
            log_entries.append(outcome)
    n_ok = sum(e["status"] == "ok" for e in log_entries)
    n_skip = sum(e["status"] == "skipped" for e in log_entries)
    recovered = sum(bool(e.get("warnings")) for e in log_entries)
    summary = {"units": len(units), "ok": n_ok, "skipped": n_skip, "failed": len(result.failures),
               "with_recovery_warnings": recovered, "mode": gen.mode}
    atomic_write(pred_dir / "run_log.json",
                 json.dumps({"summary": summary, "units": log_entries}, indent=1, ensure_ascii=False) + "\n")
    result.lines.insert(0, f"generate ({gen.mode}): {n_ok} ok, {n_skip} skipped, "
                           f"{len(result.failures)} failed of {len(units)} units")
    return result


# --------------------------------------------------------------------- smooth

def group_units(units: Sequence[dict]) -> dict[str, list[dict]]:
    groups: dict[str, list[dict]] = {}
    for u in units:
        groups.setdefault(u["source_id"], []).append(u)
    for rec, us in groups.items():
        us.sort(key=lambda u: (u["frame_range"][0], u["index"]))
    return groups


def junction_overlaps(units: Sequence[dict]) -> list[int]:
    return [max(0, a["frame_range"][1] - b["frame_range"][0]) for a, b in zip(units, units[1:])]


def cmd_smooth(config: PipelineConfig, predictions: Path | None = None, manifest: Path | None = None,
               force: bool = False, jobs: int | None = None) -> StageResult:
    out = config.paths.output
    manifest = manifest or out / "manifest.jsonl"
    predictions = predictions or out / "predictions"
    units = read_manifest(manifest)
    smoothed_dir = out / "smoothed"
    stamp = {"manifest": _file_hash(manifest), "smoothing": config.smoothing.__dict__.copy()}
    _stage_guard(smoothed_dir, stamp, force)
    schema = schema_of(config)
    result = StageResult()

    def run(item):
        rec, us = item
        target = smoothed_dir / f"{rec}.json"
        if target.exists():
            return rec, "skipped", None
        missing = [u["unit_id"] for u in us if not (predictions / f"{u['unit_id']}.json").exists()]
        if missing:
            return rec, None, f"{rec}: missing predictions for {', '.join(missing)}; recording skipped"
        segs = []
        for u in us:
            text = (predictions / f"{u['unit_id']}.json").read_text("utf-8")
            try:
                segs.append(parse_sequence(text, schema, "strict", u["fps"]).sequence)
            except SchemaError as exc:
                return rec, None, f"{rec}: prediction {u['unit_id']} invalid: {exc}"
        cat = concat_segments(segs, config.smoothing.crossfade_frames, junction_overlaps(us))
        final = smooth_pipeline(cat, config.smoothing)
        atomic_write(target, serialize_sequence(final, SMOOTHED_DECIMALS) + "\n")
        return rec, f"{final.n_frames} frames", None

    for rec, status, err in _map(run, sorted(group_units(units).items()), jobs):
        if err:
            result.fail(err)
        else:
            result.lines.append(f"{rec}: {status}")
    return result


# --------------------------------------------------------------------- eval

def load_coefficients(path: Path, schema: ChannelSchema, fps: float | None) -> BlendshapeSequence:
    text = path.read_text("utf-8")
    if path.suffix == ".csv":
        return read_csv(text, schema, fps)
    return parse_sequence(text, schema, "strict", fps or 30.0).sequence


def speaking_frames(seq: BlendshapeSequence, units: Sequence[dict]) -> BlendshapeSequence:
    """Frames covered by the units, concatenated in order with shared frames kept once."""
    pieces = []
    for u in units:
        a, b = u["frame_range"]
        if b > seq.n_frames:
            raise StageError(f"{u['unit_id']}: frame range {a}:{b} exceeds {seq.n_frames} frames")
        pieces.append(seq.replace(seq.values[a:b]))
    return concat_segments(pieces, 0, junction_overlaps(units))


def _find(directory: Path, rec: str) -> Path | None:
    for name in (f"{rec}.json", f"{rec}.csv", f"{rec}/coefficients.csv", f"{rec}/coefficients.json"):
        if (directory / name).exists():
            return directory / name
    return None


def evaluate_recording(config: PipelineConfig, rec: str, units: Sequence[dict],
                       pred_path: Path, gt_path: Path, schema: ChannelSchema) -> MetricReport:
    gt_full = load_coefficients(gt_path, schema, None if gt_path.suffix == ".csv" else config.fps)
    pred = load_coefficients(pred_path, schema, None if pred_path.suffix == ".csv" else config.fps)
    if pred.fps != gt_full.fps and abs(pred.fps - gt_full.fps) > 0.01 * gt_full.fps:
        raise StageError(f"{rec}: fps mismatch: prediction {pred.fps:g}, ground truth {gt_full.fps:g}")
    pred = BlendshapeSequence(pred.values, gt_full.fps, schema)
    speak_len = sum(u["frame_range"][1] - u["frame_range"][0] for u in units) - sum(junction_overlaps(units))
    if gt_full.n_frames == speak_len and units[-1]["frame_range"][1] > gt_full.n_frames:
        gt = gt_full  # already reduced to speaking frames, e.g. a smoothed pipeline output
    else:
        gt = speaking_frames(gt_full, units)
    if pred.n_frames == gt_full.n_frames and pred.n_frames != gt.n_frames:
        pred = speaking_frames(pred, units)
    if pred.n_frames != gt.n_frames:
        raise StageError(f"{rec}: length mismatch after speaking-span extraction: "
                         f"prediction {pred.n_frames}, ground truth {gt.n_frames}")
    report = evaluate(pred, gt, config.metrics)
    report.config = {"metrics": report.config, "pipeline": config.snapshot()}
    return report


def cmd_eval(config: PipelineConfig, pred_dir: Path | None = None, gt_dir: Path | None = None,
             manifest: Path | None = None, force: bool = False, jobs: int | None = None) -> StageResult:
    out = config.paths.output
    manifest = manifest or out / "manifest.jsonl"
    pred_dir = pred_dir or out / "smoothed"
    gt_dir = gt_dir or config.paths.corpus
    units = read_manifest(manifest)
    reports_dir = out / "reports"
    if force and reports_dir.exists():
        shutil.rmtree(reports_dir)
    schema = schema_of(config)
    groups = group_units(units)
    result = StageResult()
    reports: dict[str, MetricReport] = {}

    def run(rec):
        target = reports_dir / f"{rec}.json"
        if target.exists():
            return rec, MetricReport.from_json(target.read_text("utf-8")), None
        pred_path, gt_path = _find(pred_dir, rec), _find(gt_dir, rec)
        if pred_path is None or gt_path is None:
            side = "prediction" if pred_path is None else "ground truth"
            return rec, None, f"{rec}: unpaired recording, no {side} file"
        try:
            report = evaluate_recording(config, rec, groups[rec], pred_path, gt_path, schema)
        except (StageError, ValueError) as exc:
            msg = str(exc)
            return rec, None, msg if msg.startswith(rec) else f"{rec}: {msg}"
        atomic_write(target, report.to_json())
        return rec, report, None

    for rec, report, err in _map(run, sorted(groups), jobs):
        if err:
            result.fail(err)
        else:
            reports[rec] = report

    keys = ["mse", "mae", "fd", "wind_mean", "wind_std"]
    header = f"{'recording':<16}" + "".join(f"{k:>12}" for k in keys) + f"{'frames':>8}"
    result.lines.append(header)
    for rec, rep in reports.items():
        result.lines.append(f"{rec:<16}" + "".join(f"{getattr(rep, k):>12.6f}" for k in keys)
                            + f"{rep.n_frames:>8d}")
    if reports:
        mean = {k: float(np.mean([getattr(r, k) for r in reports.values()])) for k in keys}
        result.lines.append(f"{'mean':<16}" + "".join(f"{mean[k]:>12.6f}" for k in keys))
        summary = {"recordings": {rec: json.loads(r.to_json()) for rec, r in reports.items()},
                   "mean": mean, "failed": result.failures}
        atomic_write(reports_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return result


# --------------------------------------------------------------------- inspect

def _describe_sequence(seq: BlendshapeSequence, lines: list[str], problems: list[str]):
    v = seq.values
    lines.append(f"frames: {seq.n_frames}  channels: {seq.schema.count}  fps: {seq.fps:g}")
    if seq.n_frames:
        lines.append(f"value range: [{v.min():.4f}, {v.max():.4f}]  mean: {v.mean():.4f}")
    bad = seq.out_of_range()
    if bad:
        cols = [seq.schema.names[k] for k in np.unique(np.nonzero((v < 0) | (v > 1))[1])]
        problems.append(f"{bad} value(s) outside [0, 1] in {', '.join(cols)}")


def inspect_path(path: Path, schema: ChannelSchema, fps: float = 30.0) -> tuple[str, list[str], list[str]]:
    """Returns (kind, summary lines, invariant violations); raises StageError for unknown types."""
    lines: list[str] = []
    problems: list[str] = []
    if not path.exists():
        raise StageError(f"no such file: {path}")
    if path.suffix == ".jsonl":
        units = read_manifest(path)
        lines.append(f"manifest: {len(units)} units")
        required = {"unit_id", "source_id", "frame_range", "audio_span", "token_range",
                    "audio", "phonemes", "coefficients", "fps"}
        for rec, us in group_units(units).items():
            lines.append(f"  {rec}: {len(us)} units, frames {us[0]['frame_range'][0]}..{us[-1]['frame_range'][1]}")
        last: dict[str, float] = {}
        for u in units:
            uid = u.get("unit_id", "?")
            missing = required - set(u)
            if missing:
                problems.append(f"{uid}: missing fields {sorted(missing)}")
                continue
            a, b = u["frame_range"]
            if not 0 <= a <= b:
                problems.append(f"{uid}: bad frame range {a}:{b}")
            start = u["audio_span"][0]
            if start < last.get(u["source_id"], 0.0):
                problems.append(f"{uid}: audio span starts before the previous unit")
            last[u["source_id"]] = start
            for key in ("audio", "phonemes", "coefficients"):
                if not (path.parent / u[key]).exists():
                    problems.append(f"{uid}: dangling {key} path {u[key]}")
        return "manifest", lines, problems
    if path.suffix == ".csv":
        try:
            seq = read_csv(path.read_text("utf-8"), schema, None)
        except SchemaError as exc:
            if "fps unknown" not in str(exc):
                return "coefficients", lines, [str(exc)]
            seq = read_csv(path.read_text("utf-8"), schema, fps)
        _describe_sequence(seq, lines, problems)
        return "coefficients", lines, problems
    if path.suffix == ".json":
        try:
            doc = json.loads(path.read_text("utf-8"))
        except ValueError as exc:
            return "json", lines, [f"invalid JSON: {exc}"]
        if isinstance(doc, dict) and {"mse", "mae", "fd", "wind_mean", "wind_std"} <= set(doc):
            for k in ("mse", "mae", "fd", "wind_mean", "wind_std"):
                val = doc[k]
                lines.append(f"{k}: {val}")
                if not isinstance(val, (int, float)) or not np.isfinite(val) or val < 0:
                    problems.append(f"{k} is not a finite non-negative number")
            return "report", lines, problems
        if isinstance(doc, dict) and doc and all(isinstance(v, list) for v in doc.values()):
            missing = [k for k in schema.names if k not in doc]
            extra = [k for k in doc if k not in schema]
            lengths = {len(v) for v in doc.values()}
            if missing:
                problems.append(f"missing channels: {', '.join(missing)}")
            if extra:
                problems.append(f"unknown channels: {', '.join(extra)}")
            if len(lengths) > 1:
                problems.append(f"ragged channels: lengths {sorted(lengths)}")
            if not problems:
                try:
                    vals = np.array([doc[k] for k in schema.names], dtype=float).T.reshape(-1, schema.count)
                    _describe_sequence(BlendshapeSequence(vals, fps, schema), lines, problems)
                except (TypeError, ValueError) as exc:
                    problems.append(f"non-numeric values: {exc}")
            return "coefficients", lines, problems
    raise StageError(f"unknown file type: {path}")
