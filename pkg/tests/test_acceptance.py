"""Acceptance criteria AC1 to AC9, one marked test group per criterion.

Run ``pytest tests/test_acceptance.py`` for the per-criterion PASS/FAIL summary.
"""

import itertools
import json
import time

import numpy as np
import pytest

import oracles
from fixtures import PRIOR_SUITE, malformed_suite, staircase
from test_alignment import check_coverage
from audio2arkit import pipeline
from audio2arkit.baselines import BASELINES, write_baseline
from audio2arkit.blendshape import BlendshapeSequence, ParseFailure, default_schema, parse_sequence, serialize_sequence
from audio2arkit.config import config_from_dict
from audio2arkit.generator import generate_for_span
from audio2arkit.metrics import GaussianStats, frechet_distance, matrix_sqrt_psd, wasserstein2_empirical
from audio2arkit.phoneme import PhonemeClass, PhonemeSequence, load_prior_table
from audio2arkit.smoothing import SmoothingConfig, savgol_coefficients, savgol_filter, smooth_pipeline, total_variation
from audio2arkit.alignment import TimedTranscript, Token
from conftest import CORPUS, GOLDEN, ROOT

SCHEMA = default_schema()


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def random_psd(rng, d):
    rank = int(rng.integers(1, d + 1))
    a = rng.normal(size=(d, rank)) * rng.uniform(0.1, 3.0)
    return a @ a.T


# ---------------------------------------------------------------- AC1

@pytest.mark.criterion(1, "metric analytics: FD identities, W2 axioms, 1-D W2")
def test_ac1_metric_analytics():
    rng = np.random.default_rng(1)
    with Timer() as t:
        for _ in range(100):
            d = int(rng.integers(1, 9))
            cov = random_psd(rng, d)
            a = GaussianStats(rng.normal(size=d), cov)
            b = GaussianStats(rng.normal(size=d), cov.copy())
            assert frechet_distance(a, a) == 0.0
            expected = float(np.sum((a.mean - b.mean) ** 2))
            assert abs(frechet_distance(a, b) - expected) <= 1e-8 * max(1.0, expected)

        # every (n, m, n') size combination up to 4 points, several seeded draws each
        sizes = range(1, 5)
        for n, m, k in itertools.product(sizes, sizes, sizes):
            for _ in range(2):
                dim = int(rng.integers(1, 4))
                x, y, z = (rng.normal(size=(s, dim)) for s in (n, m, k))
                wxy = wasserstein2_empirical(x, y)
                assert wxy == pytest.approx(oracles.w2_bruteforce(x, y), abs=1e-9)
                assert wasserstein2_empirical(x, x) == 0.0
                assert wxy > 0.0
                assert wxy == pytest.approx(wasserstein2_empirical(y, x), abs=1e-12)
                assert wasserstein2_empirical(x, z) <= wxy + wasserstein2_empirical(y, z) + 1e-9

        for _ in range(100):
            n = int(rng.integers(1, 40))
            x, y = rng.normal(size=(n, 1)), rng.normal(2.0, 1.5, size=(n, 1))
            assert abs(wasserstein2_empirical(x, y) - oracles.w2_sorted_1d(x, y)) <= 1e-10
    assert t.elapsed < 10.0


# ---------------------------------------------------------------- AC2

@pytest.mark.criterion(2, "matrix square root reconstruction")
def test_ac2_matrix_sqrt():
    rng = np.random.default_rng(2)
    with Timer() as t:
        for _ in range(100):
            a = random_psd(rng, int(rng.integers(1, 17)))
            r = matrix_sqrt_psd(a)
            assert np.linalg.norm(r @ r - a) <= 1e-8 * np.linalg.norm(a)
    assert t.elapsed < 5.0


# ---------------------------------------------------------------- AC3

@pytest.mark.criterion(3, "Savitzky-Golay kernel and polynomial reproduction")
def test_ac3_savgol_kernel():
    expected = np.array([-3, 12, 17, 12, -3]) / 35
    np.testing.assert_allclose(savgol_coefficients(5, 2), expected, rtol=0, atol=1e-12)
    lsq = [float(w) for w in oracles.savgol_weights_exact(5, 2)]
    np.testing.assert_allclose(savgol_coefficients(5, 2), lsq, rtol=0, atol=1e-12)


@pytest.mark.criterion(3, "Savitzky-Golay kernel and polynomial reproduction")
@pytest.mark.parametrize("window,order", [(w, o) for w in range(3, 12, 2) for o in range(1, w)])
def test_ac3_polynomial_reproduction(window, order):
    rng = np.random.default_rng(window * 100 + order)
    n = 40
    t = np.linspace(0.0, 1.0, n)
    cols = []
    for _ in range(SCHEMA.count):
        deg = int(rng.integers(0, order + 1))
        cols.append(np.polynomial.Polynomial(rng.uniform(-1, 1, deg + 1))(t))
    values = np.stack(cols, axis=1)
    out = savgol_filter(BlendshapeSequence(values, 30.0, SCHEMA), window, order).values
    h = window // 2
    np.testing.assert_allclose(out[h:n - h], values[h:n - h], rtol=0, atol=1e-12)


# ---------------------------------------------------------------- AC4

@pytest.mark.criterion(4, "serialization round trip and malformed recovery")
def test_ac4_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(1, 101))
        seq = BlendshapeSequence(rng.uniform(0, 1, (n, SCHEMA.count)), 30.0, SCHEMA)
        back = parse_sequence(serialize_sequence(seq, 2), SCHEMA, "strict").sequence
        assert back.values.shape == seq.values.shape
        assert np.abs(back.values - seq.values).max() <= 0.005


@pytest.mark.criterion(4, "serialization round trip and malformed recovery")
def test_ac4_malformed_suite():
    cases = malformed_suite(SCHEMA)
    assert len(cases) == 50
    for text in cases:
        try:
            out = parse_sequence(text, SCHEMA, "recover").sequence
        except ParseFailure:
            continue
        v = out.values
        assert v.ndim == 2 and v.shape[1] == SCHEMA.count and v.shape[0] >= 1
        assert np.all((v >= 0.0) & (v <= 1.0))


# ---------------------------------------------------------------- AC5

@pytest.mark.criterion(5, "alignment golden manifest and coverage invariant")
def test_ac5_golden_manifest(tmp_path):
    config = config_from_dict({"paths": {"corpus": str(CORPUS), "output": str(tmp_path)}}, ROOT)
    assert pipeline.cmd_build_units(config).exit_code == 0
    got = pipeline.read_manifest(tmp_path / "manifest.jsonl")
    want = pipeline.read_manifest(GOLDEN / "manifest.jsonl")
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert g["unit_id"] == w["unit_id"]
        assert g["token_range"] == w["token_range"]
        assert g["frame_range"] == w["frame_range"]
    assert (tmp_path / "manifest.jsonl").read_bytes() == (GOLDEN / "manifest.jsonl").read_bytes()


@pytest.mark.criterion(5, "alignment golden manifest and coverage invariant")
def test_ac5_coverage_on_synthetic_transcripts():
    rng = np.random.default_rng(5)
    syllables = ["ba", "da", "ka", "ma", "pa", "ta"]
    for case in range(200):
        n = int(rng.integers(1, 31))
        words = [f"{rng.choice(syllables)}{i}" for i in range(n)]
        t, tokens = 0.0, []
        for w in words:
            t += float(rng.uniform(0.0, 0.3))
            d = float(rng.uniform(0.03, 0.6))
            tokens.append(Token(w, round(t, 3), round(t + d, 3)))
            t += d
        cuts = sorted(set(rng.integers(1, n, size=int(rng.integers(0, 6))).tolist())) if n > 1 else []
        bounds = [0] + cuts + [n]
        segments = [" ".join(words[a:b]) for a, b in zip(bounds, bounds[1:])]
        fps = (25.0, 30.0, 60.0)[case % 3]
        check_coverage(TimedTranscript(tuple(tokens)), segments, bounds, fps)


# ---------------------------------------------------------------- AC6

@pytest.mark.criterion(6, "rule-based generator honours articulation priors")
@pytest.mark.parametrize("language,symbols", PRIOR_SUITE)
@pytest.mark.parametrize("fps", [30.0, 60.0])
def test_ac6_priors_at_centres(language, symbols, fps):
    table = load_prior_table()
    seq = PhonemeSequence.from_symbols(symbols, language)
    _, _, nominal = table.target_matrix(seq.items)
    ends = np.cumsum(nominal)
    starts = ends - nominal
    timed = PhonemeSequence(seq.items, tuple(zip(starts.tolist(), ends.tolist())))
    span = (0.0, float(ends[-1]))
    n = int(np.ceil(span[1] * fps))
    out = generate_for_span(timed, span, (0, n), fps, table)
    close, jaw = out.channel("mouthClose"), out.channel("jawOpen")
    checked = 0
    for p, a, b in zip(timed.items, starts, ends):
        k = min(int(round((a + b) / 2 * fps)), n - 1)
        if p.cls is PhonemeClass.BILABIAL:
            assert close[k] > jaw[k], (p.symbol, k, close[k], jaw[k])
            checked += 1
        elif p.cls is PhonemeClass.OPEN_VOWEL:
            assert jaw[k] > close[k], (p.symbol, k, close[k], jaw[k])
            checked += 1
    assert checked >= 2


# ---------------------------------------------------------------- AC7

@pytest.mark.criterion(7, "smoothing chain: TV decrease, range, constant fixed points")
@pytest.mark.parametrize("seed", range(5))
def test_ac7_staircase(seed):
    stairs = staircase(seed=seed)
    out = smooth_pipeline(stairs, SmoothingConfig())
    assert np.all((out.values >= 0.0) & (out.values <= 1.0))
    before, after = total_variation(stairs.values), total_variation(out.values)
    assert np.all(after < before), np.flatnonzero(after >= before)


@pytest.mark.criterion(7, "smoothing chain: TV decrease, range, constant fixed points")
@pytest.mark.parametrize("level", [0.0, 0.02, 0.3, 0.5, 0.97, 1.0])
def test_ac7_constant_fixed_point(level):
    seq = BlendshapeSequence(np.full((60, SCHEMA.count), level), 30.0, SCHEMA)
    out = smooth_pipeline(seq, SmoothingConfig())
    np.testing.assert_allclose(out.values, level, rtol=0, atol=1e-12)


# ---------------------------------------------------------------- AC8 and AC9

def run_pipeline(output, seed=42):
    config = config_from_dict({"paths": {"corpus": str(CORPUS), "output": str(output)},
                               "metrics": {"seed": seed}}, ROOT)
    for cmd in (pipeline.cmd_build_units, pipeline.cmd_generate, pipeline.cmd_smooth, pipeline.cmd_eval):
        res = cmd(config, force=True)
        assert res.exit_code == 0, (cmd.__name__, res.failures)
    return config


def report_bytes(output):
    return {p.name: p.read_bytes() for p in sorted((output / "reports").glob("*.json"))}


@pytest.mark.criterion(8, "end-to-end determinism and self-evaluation")
def test_ac8_determinism(tmp_path):
    out = tmp_path / "out"
    run_pipeline(out)
    first = report_bytes(out)
    run_pipeline(out)
    second = report_bytes(out)
    assert first.keys() == second.keys() and len(first) == 4      # three recordings plus summary
    assert first == second


@pytest.mark.criterion(8, "end-to-end determinism and self-evaluation")
def test_ac8_self_evaluation(tmp_path):
    config = run_pipeline(tmp_path / "out")
    self_cfg = config_from_dict({"paths": {"corpus": str(CORPUS), "output": str(tmp_path / "self")}}, ROOT)
    res = pipeline.cmd_eval(self_cfg, pred_dir=tmp_path / "out" / "smoothed", gt_dir=tmp_path / "out" / "smoothed",
                            manifest=tmp_path / "out" / "manifest.jsonl")
    assert res.exit_code == 0
    summary = json.loads((tmp_path / "self" / "reports" / "summary.json").read_text())
    for rep in summary["recordings"].values():
        assert [rep[k] for k in ("mse", "mae", "fd", "wind_mean", "wind_std")] == [0.0] * 5


@pytest.mark.criterion(9, "rule+smoothing beats zero and white-noise baselines")
def test_ac9_baseline_ordering(tmp_path):
    with Timer() as t:
        config = run_pipeline(tmp_path / "pipeline")
        manifest = tmp_path / "pipeline" / "manifest.jsonl"
        means = {"pipeline": json.loads((tmp_path / "pipeline" / "reports" / "summary.json").read_text())["mean"]}
        for kind in BASELINES:
            write_baseline(kind, tmp_path / "pipeline" / "smoothed", tmp_path / kind / "pred",
                           pipeline.schema_of(config), 42, config.fps)
            cfg = config_from_dict({"paths": {"corpus": str(CORPUS), "output": str(tmp_path / kind)}}, ROOT)
            assert pipeline.cmd_eval(cfg, pred_dir=tmp_path / kind / "pred", manifest=manifest).exit_code == 0
            means[kind] = json.loads((tmp_path / kind / "reports" / "summary.json").read_text())["mean"]
    for kind in BASELINES:
        assert means["pipeline"]["fd"] < means[kind]["fd"], (kind, means)
        assert means["pipeline"]["wind_mean"] < means[kind]["wind_mean"], (kind, means)
    assert t.elapsed < 60.0
