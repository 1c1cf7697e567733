"""Shared deterministic fixtures: staircase signals, malformed JSON, phoneme suites."""

import json

import numpy as np

from audio2arkit.blendshape import BlendshapeSequence, default_schema, serialize_sequence


def staircase(n_frames=150, schema=None, seed=7):
    """Smooth per-channel curves with slight jitter, quantized to 2 decimals.

    Jitter near a rounding boundary makes the quantized value flicker between
    neighbouring levels, which is the artifact the smoothing chain targets.
    """
    schema = schema or default_schema()
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames)[:, None]
    period = rng.uniform(20, 50, schema.count)
    phase = rng.uniform(0, 2 * np.pi, schema.count)
    level = rng.uniform(0.3, 0.6, schema.count)
    amp = rng.uniform(0.1, 0.3, schema.count)
    smooth = level + amp * np.sin(2 * np.pi * t / period + phase)
    smooth = smooth + rng.normal(0, 0.003, smooth.shape)
    return BlendshapeSequence(np.round(smooth, 2), 30.0, schema)


def slow_ramp(n_frames=120, schema=None):
    """Slow ramps whose 2-decimal rounding changes by exactly 0.01 every few frames."""
    schema = schema or default_schema()
    t = np.arange(n_frames)[:, None]
    slopes = np.linspace(0.0013, 0.0029, schema.count)
    return BlendshapeSequence(np.round(0.2 + slopes * t, 2), 30.0, schema)


def malformed_suite(schema=None, seed=11):
    """Fifty damaged model outputs covering the failure shapes seen from LLM decoders."""
    schema = schema or default_schema()
    rng = np.random.default_rng(seed)
    base = BlendshapeSequence(np.round(rng.uniform(0, 1, (12, schema.count)), 2), 30.0, schema)
    text = serialize_sequence(base, 2)
    doc = json.loads(text)
    names = list(schema.names)
    cases = []

    # truncation at arbitrary byte positions
    for frac in np.linspace(0.15, 0.98, 13):
        cases.append(text[: int(len(text) * frac)])
    # ragged lists
    for k in range(6):
        d = dict(doc)
        d[names[(k * 5) % len(names)]] = doc[names[0]][: 3 + k]
        cases.append(json.dumps(d))
    # missing channels
    for k in range(5):
        d = {n: v for i, n in enumerate(names) if i % (k + 2) for v in [doc[n]]}
        cases.append(json.dumps(d))
    # out of range values
    for k, bad in enumerate([1.7, -0.4, 12.0, -3.0, 1.0000001]):
        d = dict(doc)
        d[names[k]] = [bad] + doc[names[k]][1:]
        cases.append(json.dumps(d))
    # unknown channels alongside valid ones
    for k in range(3):
        d = dict(doc)
        d[f"eyeBlink{k}"] = [0.5] * 12
        cases.append(json.dumps(d))
    # prose and fences around the object
    cases.append("Here you go:\n" + text)
    cases.append("```json\n" + text + "\n```")
    cases.append(text + "\nLet me know if you need more.")
    cases.append("```\n" + text[: len(text) // 2])
    # non-numeric and non-finite entries
    for token in ["NaN", "Infinity", '"0.5"', "null", "true", "-Infinity"]:
        head = f'"{names[2]}":['
        start = text.index(head) + len(head)
        cases.append(text[:start] + token + text[text.index(",", start):])
    # wrong shapes
    cases.append("[]")
    cases.append("{}")
    cases.append(json.dumps({names[0]: 0.5, names[1]: [0.1, 0.2]}))
    cases.append(json.dumps({names[0]: [[0.1], [0.2]]}))
    cases.append("")
    # duplicated key
    cases.append(text[:-1] + "," + json.dumps(names[0]) + ":[0.9,0.9]}")
    # stray trailing comma and whitespace noise
    cases.append(text[:-2] + ",]}")
    cases.append(text.replace(",", " ,\n ", 20))
    assert len(cases) == 50, len(cases)
    return cases


# phoneme fixture suite: (language, symbols), each with bilabials and open vowels
PRIOR_SUITE = [
    ("en", ["sil", "B", "AA1", "B", "sil"]),
    ("en", ["M", "AE1", "P", "sil"]),
    ("en", ["sil", "P", "AA0", "M", "AH1", "B", "sil"]),
    ("en", ["HH", "AH0", "M", "AA1", "P", "AE2", "M"]),
    ("en", ["B", "AO1", "B", "AA1", "M"]),
    ("en", ["sil", "M", "AA1", "M", "AA0", "sil"]),
    ("zh", ["sil", "b", "a1", "m", "a3", "sil"]),
    ("zh", ["p", "a4", "b", "ao2", "m", "an4"]),
    ("zh", ["m", "a1", "sil", "b", "a5"]),
]
