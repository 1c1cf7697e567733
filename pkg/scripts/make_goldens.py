"""Regenerate tests/golden/ from the bundled corpus.

Every golden value is produced (or cross-checked) by an independent route in
tests/oracles.py: exact-rational frame arithmetic for the manifest, a
per-frame loop for the rule blend, loop convolutions for smoothing, and
loops + a dense LP + non-symmetric eigenvalues for the metrics. The script
aborts if the package disagrees with an oracle beyond tolerance.

    python scripts/make_goldens.py
"""

import json
import math
import shutil
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402
from audio2arkit import pipeline  # noqa: E402
from audio2arkit.alignment import TimedTranscript, normalize_text  # noqa: E402
from audio2arkit.blendshape import (  # noqa: E402
    BlendshapeSequence, ChannelSchema, default_schema, parse_sequence, read_csv, serialize_sequence,
)
from audio2arkit.config import config_from_dict  # noqa: E402
from audio2arkit.metrics import MetricReport, MetricsConfig, evaluate  # noqa: E402
from audio2arkit.phoneme import load_prior_table, read_phoneme_annotations  # noqa: E402

GOLDEN = ROOT / "tests" / "golden"
CORPUS = ROOT / "corpus"


def check(cond, msg):
    if not cond:
        raise SystemExit(f"oracle disagreement: {msg}")


def expected_units(rec_dir: Path, fps: int, n_frames: int):
    """(token_range, frame_range) per locatable segment, by string search on the joined token text."""
    tr = TimedTranscript.from_json((rec_dir / "transcript.json").read_text("utf-8"))
    seg_path = rec_dir / "segments.json"
    segments = json.loads(seg_path.read_text("utf-8")) if seg_path.exists() else None
    if segments is None:
        return None
    norms = [normalize_text(t.text) for t in tr.tokens]
    starts, pos = [], 0
    for n in norms:
        starts.append(pos)
        pos += len(n)
    stream = "".join(norms)
    out, cursor = [], 0
    for text in segments:
        target = normalize_text(text)
        at = stream.find(target, starts[cursor] if cursor < len(starts) else len(stream))
        hit = None
        while at >= 0 and hit is None:
            i = next((k for k in range(cursor, len(norms)) if starts[k] == at and norms[k]), None)
            j = next((k + 1 for k in range(len(norms)) if starts[k] + len(norms[k]) == at + len(target)
                      and norms[k]), None)
            if i is not None and j is not None:
                hit = (i, j)
            else:
                at = stream.find(target, at + 1)
        if hit is None:
            continue
        i, j = hit
        cursor = j
        a = math.floor(Fraction(str(tr.tokens[i].start)) * fps)
        b = min(math.ceil(Fraction(str(tr.tokens[j - 1].end)) * fps), n_frames)
        out.append((hit, (a, b)))
    return out


def main():
    schema = default_schema()
    work = Path(tempfile.mkdtemp(prefix="goldens-"))
    config = config_from_dict({"paths": {"corpus": str(CORPUS), "output": str(work)}}, ROOT)
    for cmd in (pipeline.cmd_build_units, pipeline.cmd_generate, pipeline.cmd_smooth, pipeline.cmd_eval):
        r = cmd(config, jobs=1)
        check(r.exit_code == 0, f"{cmd.__name__}: {r.failures}")
    units = pipeline.read_manifest(work / "manifest.jsonl")
    groups = pipeline.group_units(units)

    # manifest: token and frame ranges from exact decimal arithmetic
    for rec, us in groups.items():
        n_frames = read_csv((CORPUS / rec / "coefficients.csv").read_text("utf-8"), schema).n_frames
        exp = expected_units(CORPUS / rec, 30, n_frames)
        if exp is None:
            continue
        got = [(tuple(u["token_range"]), tuple(u["frame_range"])) for u in us]
        check(got == exp, f"{rec} units {got} != {exp}")

    # rule predictions: per-frame loop blend
    table = load_prior_table(schema=schema)
    for u in units:
        ph = read_phoneme_annotations((work / u["phonemes"]).read_text("utf-8"), u["language"])
        targets, dominance, _ = table.target_matrix(ph.items)
        centers = [(a + b) / 2 for a, b in ph.timing]
        durations = [max(b - a, 1e-3) for a, b in ph.timing]
        a, b = u["frame_range"]
        times = [k / 30 - u["audio_span"][0] for k in range(a, b)]
        ref = oracles.blend_by_hand(targets.tolist(), dominance.tolist(), centers, durations, times)
        got = parse_sequence((work / "predictions" / f"{u['unit_id']}.json").read_text("utf-8"),
                             schema, "strict").sequence.values
        check(np.abs(got - ref).max() <= 0.005 + 1e-9, f"rule blend {u['unit_id']}")

    # smoothing: loop convolutions on the golden predictions
    smoothed = {}
    for rec, us in groups.items():
        segs = [parse_sequence((work / "predictions" / f"{u['unit_id']}.json").read_text("utf-8"),
                               schema, "strict").sequence.values for u in us]
        cat = oracles.concat_by_hand(segs, pipeline.junction_overlaps(us), config.smoothing.crossfade_frames)
        ref = oracles.smooth_by_hand(cat)
        got = parse_sequence((work / "smoothed" / f"{rec}.json").read_text("utf-8"), schema, "strict").sequence
        check(got.n_frames == len(ref), f"smoothed length {rec}")
        check(np.abs(got.values - ref).max() <= 5e-7 + 1e-12, f"smoothed values {rec}")
        smoothed[rec] = ref

    # reports: loops, dense LP, eigenvalues of the product
    m = config.metrics
    reports = {}
    for rec, us in groups.items():
        gt = read_csv((CORPUS / rec / "coefficients.csv").read_text("utf-8"), schema)
        gt_speak = oracles.concat_by_hand([gt.values[u["frame_range"][0]:u["frame_range"][1]] for u in us],
                                          pipeline.junction_overlaps(us), 0)
        pred = parse_sequence((work / "smoothed" / f"{rec}.json").read_text("utf-8"), schema, "strict").sequence
        ref = oracles.evaluate_by_hand(pred.values, gt_speak, m.window, m.hop, m.subsample, m.repeats, m.seed)
        got = MetricReport.from_json((work / "reports" / f"{rec}.json").read_text("utf-8"))
        for k in ("mse", "mae", "wind_mean", "wind_std"):
            check(abs(getattr(got, k) - ref[k]) <= 1e-9, f"{rec} {k}: {getattr(got, k)} vs {ref[k]}")
        check(abs(got.fd - ref["fd"]) <= 1e-6 * max(1.0, ref["fd"]), f"{rec} fd: {got.fd} vs {ref['fd']}")
        reports[rec] = ref

    # metric fixture pair: small full-rank case, everything to 1e-9
    rng = np.random.default_rng(20240601)
    pair_schema = ChannelSchema(("jawOpen", "mouthClose", "mouthFunnel", "mouthPucker"))
    t = np.arange(40)[:, None]
    gt = np.clip(0.5 + 0.3 * np.sin(t / 4.0 + np.arange(4)) + rng.normal(0, 0.05, (40, 4)), 0, 1)
    pred = np.clip(gt + rng.normal(0, 0.08, (40, 4)), 0, 1)
    pair_cfg = MetricsConfig(window=8, hop=2, subsample=6, repeats=3, seed=42)
    pair_ref = oracles.evaluate_by_hand(pred, gt, 8, 2, 6, 3, 42)
    fp = oracles.features_loops(pred, 8, 2)
    fg = oracles.features_loops(gt, 8, 2)
    ds = []
    for r in range(3):
        ip = np.random.default_rng(42 + r).choice(len(fp), 6, replace=False)
        ig = np.random.default_rng(42 + r).choice(len(fg), 6, replace=False)
        ds.append(oracles.w2_bruteforce(fp[ip], fg[ig]))
    check(abs(np.mean(ds) - pair_ref["wind_mean"]) <= 1e-9, "pair wind brute force vs LP")
    pair_ref["fd"] = oracles.frechet_scipy(fg.mean(0), np.cov(fg, rowvar=False), fp.mean(0), np.cov(fp, rowvar=False))
    got = evaluate(BlendshapeSequence(pred, 30.0, pair_schema), BlendshapeSequence(gt, 30.0, pair_schema), pair_cfg)
    for k in ("mse", "mae", "fd", "wind_mean", "wind_std"):
        check(abs(getattr(got, k) - pair_ref[k]) <= 1e-9, f"pair {k}: {getattr(got, k)} vs {pair_ref[k]}")

    # write
    if GOLDEN.exists():
        shutil.rmtree(GOLDEN)
    (GOLDEN / "predictions").mkdir(parents=True)
    (GOLDEN / "smoothed").mkdir()
    (GOLDEN / "reports").mkdir()
    shutil.copy(work / "manifest.jsonl", GOLDEN / "manifest.jsonl")
    for u in units:
        shutil.copy(work / "predictions" / f"{u['unit_id']}.json", GOLDEN / "predictions")
    for rec, values in smoothed.items():
        shutil.copy(work / "smoothed" / f"{rec}.json", GOLDEN / "smoothed" / f"{rec}.json")
        (GOLDEN / "smoothed" / f"{rec}.full.json").write_text(json.dumps(values.tolist()) + "\n")
    for rec, ref in reports.items():
        (GOLDEN / "reports" / f"{rec}.json").write_text(json.dumps(ref, indent=2, sort_keys=True) + "\n")
    (GOLDEN / "metric_pair.json").write_text(json.dumps({
        "channels": list(pair_schema.names), "fps": 30.0, "config": pair_cfg.__dict__,
        "pred": pred.tolist(), "gt": gt.tolist()}) + "\n")
    (GOLDEN / "metric_report.json").write_text(MetricReport(**pair_ref, config={}).to_json())
    shutil.rmtree(work)
    print(f"wrote {GOLDEN}: {len(units)} units, {len(groups)} recordings")


if __name__ == "__main__":
    main()
