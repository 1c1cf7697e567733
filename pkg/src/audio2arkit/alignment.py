"""Audio-linguistic unit construction.

Segment texts from a sentence splitter carry no timing, so each one is matched
back onto the ASR token stream; the matched tokens' timestamps give the span
used to cut audio, phonemes and coefficient frames.
"""

from __future__ import annotations

import json
import logging
import math
import unicodedata
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .audio import slice_audio
from .blendshape import BlendshapeSequence
from .phoneme import Language, Lexicon, PhonemeSequence, phonemize

log = logging.getLogger(__name__)

# float products like 0.1 * 30 land a few ulps off an integer frame boundary
FRAME_EPS = 1e-9

SENTENCE_FINAL = "。！？.!?"
COMMAS = ",，、;；"


class NoMatch(LookupError):
    pass


class AlignmentFailure(RuntimeError):
    """More than half of a recording's segments could not be aligned."""


@dataclass(frozen=True)
class Token:
    text: str
    start: float
    end: float


@dataclass(frozen=True)
class TimedTranscript:
    tokens: tuple[Token, ...]
    language: Language = "en"

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        prev = 0.0
        for i, t in enumerate(tokens):
            if not 0 <= t.start <= t.end:
                raise ValueError(f"token {i} ({t.text!r}) has bad times {t.start}..{t.end}")
            if t.start < prev:
                raise ValueError(f"token {i} ({t.text!r}) starts before its predecessor")
            prev = t.start
        if self.language not in ("en", "zh"):
            raise ValueError(f"unsupported language {self.language!r}")

    @property
    def joiner(self) -> str:
        return " " if self.language == "en" else ""

    @property
    def text(self) -> str:
        return self.joiner.join(t.text for t in self.tokens)

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def from_json(cls, text: str) -> "TimedTranscript":
        doc = json.loads(text)
        if not isinstance(doc, dict) or "tokens" not in doc:
            raise ValueError("transcript must be an object with a 'tokens' array")
        tokens = tuple(Token(str(t["text"]), float(t["start"]), float(t["end"])) for t in doc["tokens"])
        return cls(tokens, doc.get("language", "en"))

    def to_json(self) -> str:
        return json.dumps(
            {"language": self.language,
             "tokens": [{"text": t.text, "start": t.start, "end": t.end} for t in self.tokens]},
            ensure_ascii=False, indent=1,
        )


@dataclass(frozen=True)
class TranscriptSegment:
    text: str
    token_range: tuple[int, int]
    span: tuple[float, float]


@dataclass(frozen=True, eq=False)
class AlignedUnit:
    segment: TranscriptSegment
    audio_span: tuple[float, float]
    phonemes: PhonemeSequence
    coefficients: BlendshapeSequence
    source_id: str
    index: int
    frame_range: tuple[int, int]
    audio: bytes | None = field(default=None, repr=False)

    @property
    def unit_id(self) -> str:
        return f"{self.source_id}_{self.index:03d}"


def normalize_text(text: str) -> str:
    """NFC, lowercase, drop whitespace and punctuation."""
    text = unicodedata.normalize("NFC", text).lower()
    return "".join(
        ch for ch in text
        if not ch.isspace() and not unicodedata.category(ch).startswith("P")
    )


def _split_long(tokens: Sequence[str], lo: int, hi: int, max_tokens: int) -> list[tuple[int, int]]:
    if hi - lo <= max_tokens:
        return [(lo, hi)]
    mid = (lo + hi) / 2
    cuts = [k + 1 for k in range(lo, hi - 1) if tokens[k] and tokens[k][-1] in COMMAS]
    cut = min(cuts, key=lambda c: (abs(c - mid), c)) if cuts else (lo + hi) // 2
    return _split_long(tokens, lo, cut, max_tokens) + _split_long(tokens, cut, hi, max_tokens)


def naive_semantic_split(transcript: TimedTranscript, max_tokens: int = 20) -> list[str]:
    """Fallback splitter: cut after sentence-final punctuation, then halve long runs.

    Runs longer than ``max_tokens`` are cut at the comma nearest their middle,
    or straight through the middle when there is no comma. Joining the result
    with the transcript's joiner gives back the transcript text.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    words = [t.text for t in transcript.tokens]
    runs, start = [], 0
    for k, w in enumerate(words):
        if w and w.rstrip()[-1:] in SENTENCE_FINAL:
            runs.append((start, k + 1))
            start = k + 1
    if start < len(words):
        runs.append((start, len(words)))
    pieces = [p for lo, hi in runs for p in _split_long(words, lo, hi, max_tokens)]
    return [transcript.joiner.join(words[lo:hi]) for lo, hi in pieces]


def locate_token_span(segment_text: str, transcript: TimedTranscript, cursor: int = 0) -> tuple[int, int]:
    """Leftmost ``[i, j)`` with ``i >= cursor`` whose normalized tokens spell the segment.

    The interval starts on a token with visible text and is the shortest one
    that matches, so punctuation-only tokens trailing a sentence are left for
    the next call.
    """
    target = normalize_text(segment_text)
    if not target:
        raise NoMatch(f"segment {segment_text!r} is empty after normalization")
    norm = [normalize_text(t.text) for t in transcript.tokens]
    for i in range(max(cursor, 0), len(norm)):
        if not norm[i] or not target.startswith(norm[i]):
            continue
        built = ""
        for j in range(i, len(norm)):
            built += norm[j]
            if built == target:
                return i, j + 1
            if not target.startswith(built):
                break
    raise NoMatch(f"segment {segment_text!r} not found at or after token {cursor}")


def recover_time_span(token_range: tuple[int, int], transcript: TimedTranscript,
                      pad: float = 0.0) -> tuple[float, float]:
    i, j = token_range
    if not 0 <= i < j <= len(transcript):
        raise ValueError(f"bad token range {token_range}")
    return max(0.0, transcript.tokens[i].start - pad), transcript.tokens[j - 1].end + pad


def frame_range(span: tuple[float, float], fps: float, n_frames: int | None = None) -> tuple[int, int]:
    """``[floor(start*fps), ceil(end*fps))`` clamped to ``[0, n_frames)``."""
    start, end = span
    if end <= start:
        a = b = max(0, math.floor(start * fps + FRAME_EPS))
    else:
        a = math.floor(start * fps + FRAME_EPS)
        b = math.ceil(end * fps - FRAME_EPS)
    a = max(a, 0)
    if n_frames is not None:
        a, b = min(a, n_frames), min(b, n_frames)
    return a, max(a, b)


def slice_coefficients(full: BlendshapeSequence, span: tuple[float, float],
                       fps: float | None = None) -> BlendshapeSequence:
    fps = full.fps if fps is None else fps
    start, end = span
    duration = full.n_frames / fps
    if start < 0 or end < start or end > duration + FRAME_EPS:
        raise ValueError(f"span ({start}, {end}) outside recording of {duration:.6f} s")
    a, b = frame_range(span, fps, full.n_frames)
    return full.replace(full.values[a:b])


def select_phonemes(annotation: PhonemeSequence, span: tuple[float, float]) -> PhonemeSequence:
    """Timed phonemes whose midpoint falls in ``[start, end)``, re-timed relative to ``start``."""
    if annotation.timing is None:
        raise ValueError("phoneme annotation has no timing; pass a lexicon instead")
    start, end = span
    items, timing = [], []
    for p, (a, b) in zip(annotation.items, annotation.timing):
        if start <= (a + b) / 2 < end:
            items.append(p)
            timing.append((max(a, start) - start, min(b, end) - start))
    return PhonemeSequence(tuple(items), tuple(timing))


@dataclass
class AlignmentConfig:
    fps: float = 30.0
    pad: float = 0.0
    max_tokens: int = 20
    max_failure_ratio: float = 0.5


def build_units(
    transcript: TimedTranscript,
    segment_texts: Sequence[str],
    phoneme_source: Lexicon | PhonemeSequence,
    coefficients: BlendshapeSequence,
    audio=None,
    config: AlignmentConfig | None = None,
    source_id: str = "rec",
    dropped: list[tuple[int, str, str]] | None = None,
) -> list[AlignedUnit]:
    """One unit per locatable segment, in temporal order.

    Segments that cannot be located (or carry no phonemes) are dropped and
    logged; ``dropped`` collects ``(segment index, text, reason)``. Raises
    :class:`AlignmentFailure` when more than half of the segments drop.
    """
    config = config or AlignmentConfig()
    fps = config.fps
    recording_end = coefficients.n_frames / fps
    if audio is not None:
        from .audio import wav_info

        recording_end = min(recording_end, wav_info(audio).duration)

    units: list[AlignedUnit] = []
    failures: list[tuple[int, str, str]] = []
    cursor = 0
    for idx, text in enumerate(segment_texts):
        try:
            rng = locate_token_span(text, transcript, cursor)
        except NoMatch as exc:
            failures.append((idx, text, str(exc)))
            log.warning("%s: dropping segment %d: %s", source_id, idx, exc)
            continue
        cursor = rng[1]
        tokens = transcript.tokens
        segment = TranscriptSegment(text, rng, (tokens[rng[0]].start, tokens[rng[1] - 1].end))
        start, end = recover_time_span(rng, transcript, config.pad)
        end = min(end, recording_end)
        if isinstance(phoneme_source, Lexicon):
            phonemes = phonemize(text, transcript.language, phoneme_source)
        else:
            phonemes = select_phonemes(phoneme_source, (start, end))
        if not phonemes.items:
            reason = "no phonemes inside the segment span"
            failures.append((idx, text, reason))
            log.warning("%s: dropping segment %d: %s", source_id, idx, reason)
            continue
        frames = frame_range((start, end), fps, coefficients.n_frames)
        coeffs = coefficients.replace(coefficients.values[frames[0]:frames[1]])
        clip = slice_audio(audio, start, end) if audio is not None else None
        units.append(AlignedUnit(segment, (start, end), phonemes, coeffs, source_id, idx, frames, clip))

    if dropped is not None:
        dropped.extend(failures)
    if segment_texts and len(failures) / len(segment_texts) > config.max_failure_ratio:
        raise AlignmentFailure(
            f"{source_id}: {len(failures)} of {len(segment_texts)} segments failed to align"
        )
    return units


def check_unit(unit: AlignedUnit, tolerance: int = 2) -> list[str]:
    """Invariant violations of one unit (empty list when it is sound)."""
    problems = []
    start, end = unit.audio_span
    expected = round((end - start) * unit.coefficients.fps)
    if abs(unit.coefficients.n_frames - expected) > tolerance:
        problems.append(f"{unit.coefficients.n_frames} frames for a {end - start:.3f} s span")
    if normalize_text(unit.segment.text) and not unit.phonemes.items:
        problems.append("no phonemes for a lexical segment")
    i, j = unit.segment.token_range
    if not i < j:
        problems.append("empty token range")
    return problems


def covered_frames(units: Sequence[AlignedUnit]) -> np.ndarray:
    """Per-frame count of units whose frame range covers it."""
    if not units:
        return np.zeros(0, dtype=int)
    n = max(u.frame_range[1] for u in units)
    counts = np.zeros(n, dtype=int)
    for u in units:
        counts[u.frame_range[0]:u.frame_range[1]] += 1
    return counts
