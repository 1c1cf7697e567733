"""Synthesize the bundled three-recording corpus (deterministic, seed fixed).

Each recording gets ASR-style timed tokens, splitter output (except en_002,
which exercises the naive splitter), timed phonemes, a 16 kHz PCM WAV and a
30 fps ground-truth coefficient CSV. The ground truth comes from a different
articulation model than the rule-based generator: exponential (not Gaussian)
dominance, jittered per-phoneme targets, an anticipatory lead, rest-pose
drift on non-speech channels and capture noise.

    python scripts/make_corpus.py [--out corpus]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from audio2arkit.alignment import Token, TimedTranscript
from audio2arkit.audio import write_wav
from audio2arkit.blendshape import BlendshapeSequence, default_schema, write_csv
from audio2arkit.phoneme import PhonemeClass, load_lexicon, load_prior_table, Phoneme

FPS = 30
SR = 16000
SEED = 20241016

RECORDINGS = {
    "en_001": {
        "language": "en",
        "tokens": "Hello world. How are you today? I am fine, thank you. We should go to the park "
                  "before the rain comes. My mother made a big apple pie for the whole family.",
        "segments": ["hello  world.", "How are you today?", "I am fine, thank you.",
                     "We should go to the park", "this was never said", "before the rain comes.",
                     "My mother made a big apple pie for the whole family."],
    },
    "en_002": {
        "language": "en",
        "tokens": "Bob bought a big map. Open the papa box, please. Can you bring me the blue book? "
                  "Maybe we can walk home after lunch.",
        "segments": None,
    },
    "zh_001": {
        "language": "zh",
        "tokens": list("你好世界") + ["。"] + list("今天天气很好") + ["！"] + list("我们八点吃饭") + ["。"]
                  + list("妈妈买了一本书") + ["，"] + list("爸爸喝了一杯茶") + ["。"],
        "segments": ["你好世界。", "今天天气很好！", "我们八点吃饭。", "妈妈买了一本书，", "爸爸喝了一杯茶。"],
    },
}

SPEECH_CHANNELS = None  # filled from the prior table


def word_phonemes(word, lexicon, language):
    key = word.strip(".,!?。！？，").lower() if language == "en" else word
    return [Phoneme.parse(s, language) for s in lexicon.lookup(key)]


def timeline(spec, rng):
    """Timed tokens and timed phonemes for one recording."""
    language = spec["language"]
    lexicon = load_lexicon(language)
    words = spec["tokens"].split() if language == "en" else spec["tokens"]
    rate = rng.uniform(0.9, 1.1)
    t = 0.4
    tokens, phones = [], []
    for w in words:
        if w in "。！？，":
            tokens.append(Token(w, round(t, 3), round(t, 3)))
            t += 0.35 if w != "，" else 0.15
            phones.append(("sil", round(t - (0.35 if w != "，" else 0.15), 3), round(t, 3)))
            continue
        ps = word_phonemes(w, lexicon, language)
        durs = [(0.11 if p.cls in (PhonemeClass.OPEN_VOWEL, PhonemeClass.ROUNDED_VOWEL,
                                    PhonemeClass.CLOSE_VOWEL) else 0.065) * rate * rng.uniform(0.85, 1.15)
                for p in ps]
        start = t
        for p, d in zip(ps, durs):
            phones.append((p.symbol, round(t, 3), round(t + d, 3)))
            t += d
        tokens.append(Token(w, round(start, 3), round(t, 3)))
        gap = 0.0
        if language == "en":
            if w[-1] in ".!?":
                gap = rng.uniform(0.3, 0.45)
            elif w[-1] == ",":
                gap = rng.uniform(0.12, 0.2)
            else:
                gap = rng.uniform(0.01, 0.05)
        else:
            gap = rng.uniform(0.0, 0.03)
        if gap >= 0.1:
            phones.append(("sil", round(t, 3), round(t + gap, 3)))
        t += gap
    # snap phoneme boundaries onto the rounded token grid
    phones = [(s, a, max(a, b)) for s, a, b in phones]
    return TimedTranscript(tuple(tokens), language), phones, t + 0.5


def ground_truth(phones, language, n_frames, rng):
    schema = default_schema()
    table = load_prior_table()
    k = schema.count
    items = [Phoneme.parse(s, language) for s, _, _ in phones]
    targets, _, _ = table.target_matrix(items)
    targets = np.clip(targets * rng.uniform(0.75, 1.25, size=targets.shape), 0, 1)
    # capture rig leaks a little lip-corner motion into open vowels
    for i, p in enumerate(items):
        if p.cls is PhonemeClass.OPEN_VOWEL:
            targets[i, schema.index("mouthSmileLeft")] += 0.05
            targets[i, schema.index("mouthSmileRight")] += 0.05
    centers = np.array([(a + b) / 2 for _, a, b in phones]) - 0.03 + rng.normal(0, 0.01, len(phones))
    widths = np.array([max(b - a, 0.03) for _, a, b in phones])
    times = np.arange(n_frames) / FPS
    rest = np.zeros(k)
    rest[schema.index("mouthClose")] = 0.04
    rest[schema.index("jawOpen")] = 0.03
    # exponential dominance with a rest-pose component of constant weight
    dist = np.abs(times[:, None] - centers[None, :]) / widths[None, :]
    w = np.exp(-1.6 * dist ** 1.2)
    w_rest = np.full((n_frames, 1), 0.08)
    values = (w @ targets + w_rest * rest) / (w.sum(1, keepdims=True) + w_rest)
    drift = 0.5 + 0.5 * np.sin(2 * np.pi * times / 3.7 + rng.uniform(0, 6.28))
    for name, amp in (("cheekSquintLeft", 0.06), ("cheekSquintRight", 0.06),
                      ("mouthSmileLeft", 0.05), ("mouthSmileRight", 0.05), ("noseSneerLeft", 0.02)):
        values[:, schema.index(name)] += amp * drift
    noise = rng.normal(0, 0.008, values.shape)
    noise = (noise + np.roll(noise, 1, axis=0) + np.roll(noise, -1, axis=0)) / 3
    values = np.clip(values + noise, 0.0, 1.0)
    return BlendshapeSequence(values, FPS, schema)


def synth_audio(phones, duration, rng):
    n = int(round(duration * SR))
    t = np.arange(n) / SR
    sig = rng.normal(0, 30, n)
    f0 = rng.uniform(110, 170)
    for sym, a, b in phones:
        if sym == "sil":
            continue
        i, j = int(a * SR), int(b * SR)
        seg_t = t[i:j]
        env = np.hanning(max(j - i, 2))[: j - i]
        if sym[-1].isdigit():
            tone = sum(np.sin(2 * np.pi * f0 * h * seg_t) / h for h in (1, 2, 3))
            sig[i:j] += 6000 * env * tone
        else:
            sig[i:j] += 2500 * env * rng.normal(0, 1, j - i)
    return write_wav(np.clip(sig, -32768, 32767).astype(np.int16), SR)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "corpus")
    args = ap.parse_args()
    rng = np.random.default_rng(SEED)
    for rec, spec in RECORDINGS.items():
        transcript, phones, duration = timeline(spec, rng)
        n_frames = int(np.ceil(duration * FPS))
        duration = n_frames / FPS
        d = args.out / rec
        d.mkdir(parents=True, exist_ok=True)
        (d / "transcript.json").write_text(transcript.to_json() + "\n", "utf-8")
        if spec["segments"] is not None:
            (d / "segments.json").write_text(json.dumps(spec["segments"], ensure_ascii=False, indent=1) + "\n",
                                             "utf-8")
        else:
            (d / "segments.json").unlink(missing_ok=True)
        (d / "phonemes.json").write_text(
            json.dumps([{"symbol": s, "start": a, "end": b} for s, a, b in phones], ensure_ascii=False) + "\n",
            "utf-8")
        gt = ground_truth(phones, spec["language"], n_frames, rng)
        (d / "coefficients.csv").write_text(write_csv(gt, 6), "utf-8")
        (d / "audio.wav").write_bytes(synth_audio(phones, duration, rng))
        print(f"{rec}: {len(transcript)} tokens, {len(phones)} phonemes, {n_frames} frames, {duration:.2f} s")


if __name__ == "__main__":
    main()
