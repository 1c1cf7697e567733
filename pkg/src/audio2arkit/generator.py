"""Coefficient generators for aligned units.

``generate_rule_based`` is an offline articulatory baseline: phoneme targets
from the prior table are placed at phoneme centres and mixed by Gaussian
dominance weights. ``generate_remote`` sends the structured prompt plus audio
to a model service and parses whatever JSON comes back.
"""

from __future__ import annotations

import base64
import json
import logging
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .blendshape import BlendshapeSequence, ChannelSchema, ParseOutcome, parse_sequence
from .phoneme import PhonemeSequence, PriorTable, load_prior_table, render_guidance_text

log = logging.getLogger(__name__)

FRAME_TOLERANCE = 2


class LengthMismatch(ValueError):
    pass


class TransportError(RuntimeError):
    pass


class GenerationTimeout(TransportError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    transcript: str
    phonemes: PhonemeSequence
    guidance: str
    audio_ref: Path | bytes | str
    schema: ChannelSchema
    fps: float
    expected_frames: int
    decimals: int = 2

    def audio_b64(self) -> str:
        ref = self.audio_ref
        if isinstance(ref, Path):
            return base64.b64encode(ref.read_bytes()).decode("ascii")
        if isinstance(ref, bytes):
            return base64.b64encode(ref).decode("ascii")
        return ref


@dataclass
class GenerationResponse:
    raw_text: str
    parsed: ParseOutcome
    latency: float


def assemble_prompt(request: GenerationRequest) -> str:
    n = request.expected_frames
    names = ", ".join(request.schema.names)
    phonemes = " ".join(request.phonemes.symbols) or "(none)"
    guidance = request.guidance.strip() or "Articulation guidance: none."
    return "\n".join([
        "Task: predict mouth-related ARKit blendshape coefficients for the attached speech audio.",
        "",
        f"Channels ({request.schema.count}, in output order): {names}",
        f"Frame rate: {request.fps:g} fps. Produce exactly {n} values per channel.",
        "",
        "Transcript:",
        request.transcript,
        "",
        "Phonemes:",
        phonemes,
        "",
        guidance,
        "",
        "Output format: one JSON object and nothing else. Use every channel listed above as a key, "
        f"in the listed order. Each value is an ordered list of exactly {n} numbers in [0, 1] "
        f"with {request.decimals} decimals, one number per frame.",
    ])


def phoneme_timeline(phonemes: PhonemeSequence, duration: float, table: PriorTable,
                     min_duration: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Centres and durations (seconds, relative to the span start).

    Uses the sequence's own timing when present; otherwise nominal durations
    are scaled to fill ``duration``.
    """
    if phonemes.timing is not None:
        t = np.asarray(phonemes.timing, dtype=float).reshape(-1, 2)
        return t.mean(axis=1), np.maximum(t[:, 1] - t[:, 0], min_duration)
    _, _, nominal = table.target_matrix(phonemes.items)
    scale = duration / nominal.sum() if nominal.sum() > 0 and duration > 0 else 1.0
    dur = np.maximum(nominal * scale, min_duration)
    ends = np.cumsum(dur)
    return ends - dur / 2, dur


def blend_keyframes(targets: np.ndarray, dominance: np.ndarray, centers: np.ndarray,
                    durations: np.ndarray, frame_times: np.ndarray) -> np.ndarray:
    """Dominance-weighted mix of phoneme targets at each frame time.

    ``w_i(t) = exp(-d_i * ((t - c_i) / s_i)^2)`` with ``s_i = duration_i / 2``;
    each frame is ``sum_i w_i t_i / sum_i w_i``. Weights are normalised in the
    log domain so frames far from every centre do not underflow to 0/0.
    """
    sigma = np.asarray(durations, dtype=float) / 2.0
    z = (np.asarray(frame_times, dtype=float)[:, None] - np.asarray(centers)[None, :]) / sigma[None, :]
    logw = -np.asarray(dominance)[None, :] * z * z
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    return w @ targets


def generate_for_span(
    phonemes: PhonemeSequence,
    span: tuple[float, float],
    frame_range: tuple[int, int],
    fps: float,
    table: PriorTable,
) -> BlendshapeSequence:
    """Rule-based frames ``frame_range`` (absolute indices) for phonemes timed within ``span``."""
    schema = table.schema
    n = frame_range[1] - frame_range[0]
    if not phonemes.items:
        log.warning("empty phoneme sequence; emitting %d rest frames", n)
        return BlendshapeSequence.zeros(n, fps, schema)
    targets, dominance, _ = table.target_matrix(phonemes.items)
    centers, durations = phoneme_timeline(phonemes, span[1] - span[0], table)
    frame_times = np.arange(frame_range[0], frame_range[1]) / fps - span[0]
    values = blend_keyframes(targets, dominance, centers, durations, frame_times)
    return BlendshapeSequence(np.clip(values, 0.0, 1.0).reshape(n, schema.count), fps, schema)


def generate_rule_based(unit, prior_table: PriorTable | None = None, fps: float | None = None) -> BlendshapeSequence:
    """Rule-based prediction covering exactly the unit's coefficient frames."""
    table = prior_table or load_prior_table(schema=unit.coefficients.schema)
    fps = fps or unit.coefficients.fps
    return generate_for_span(unit.phonemes, unit.audio_span, unit.frame_range, fps, table)


def fit_frame_count(seq: BlendshapeSequence, expected_frames: int,
                    tolerance: int = FRAME_TOLERANCE) -> BlendshapeSequence:
    """Linearly resample to ``expected_frames`` when within ``tolerance`` frames."""
    n = seq.n_frames
    if n == 0:
        raise ValueError("cannot resample an empty sequence")
    if abs(n - expected_frames) > tolerance:
        raise LengthMismatch(f"got {n} frames, expected {expected_frames} (tolerance {tolerance})")
    if n == expected_frames:
        return seq
    if expected_frames == 1 or n == 1:
        return seq.replace(np.repeat(seq.values[:1], expected_frames, axis=0))
    src = np.linspace(0.0, 1.0, n)
    dst = np.linspace(0.0, 1.0, expected_frames)
    cols = [np.interp(dst, src, seq.values[:, k]) for k in range(seq.schema.count)]
    values = np.stack(cols, axis=1)
    values[0], values[-1] = seq.values[0], seq.values[-1]
    return seq.replace(values)


@dataclass
class RemoteConfig:
    endpoint: str = "http://127.0.0.1:8000/generate"
    token: str | None = None
    timeout: float = 60.0
    retries: int = 3
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    max_tokens: int = 8192
    frame_tolerance: int = FRAME_TOLERANCE
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)


def _post_json(url: str, body: dict, timeout: float, token: str | None) -> dict:
    data = json.dumps(body).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    req = urllib.request.Request(url, data=data, headers=headers, method="POST")
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return json.loads(resp.read().decode("utf-8"))


def request_body(request: GenerationRequest, max_tokens: int) -> dict:
    return {"prompt": assemble_prompt(request), "audio_b64": request.audio_b64(), "max_tokens": max_tokens}


def generate_remote(request: GenerationRequest, config: RemoteConfig | None = None) -> GenerationResponse:
    """POST the request and parse the reply in recover mode.

    Connection failures, timeouts and 5xx replies are retried with
    exponential backoff; parse failures are never retried.
    """
    config = config or RemoteConfig()
    body = request_body(request, config.max_tokens)
    attempt = 0
    t0 = time.perf_counter()
    while True:
        try:
            reply = _post_json(config.endpoint, body, config.timeout, config.token)
            break
        except urllib.error.HTTPError as exc:
            if exc.code < 500:
                raise TransportError(f"HTTP {exc.code} from {config.endpoint}") from exc
            err: TransportError = TransportError(f"HTTP {exc.code} from {config.endpoint}")
        except (TimeoutError, OSError) as exc:
            reason = getattr(exc, "reason", exc)
            if isinstance(exc, TimeoutError) or isinstance(reason, TimeoutError):
                err = GenerationTimeout(f"timed out after {config.timeout} s: {config.endpoint}")
            else:
                err = TransportError(f"cannot reach {config.endpoint}: {reason}")
        except ValueError as exc:
            raise TransportError(f"malformed reply from {config.endpoint}: {exc}") from exc
        if attempt >= config.retries:
            raise err
        delay = config.backoff_base * config.backoff_factor ** attempt
        log.info("%s; retry %d/%d in %.1f s", err, attempt + 1, config.retries, delay)
        config.sleep(delay)
        attempt += 1
    if not isinstance(reply, dict) or not isinstance(reply.get("text"), str):
        raise TransportError("reply JSON lacks a 'text' string")
    raw = reply["text"]
    parsed = parse_sequence(raw, request.schema, "recover", request.fps)
    n = parsed.sequence.n_frames
    if abs(n - request.expected_frames) > config.frame_tolerance:
        parsed.warnings.append(f"LengthMismatch: {n} frames, expected {request.expected_frames}")
    return GenerationResponse(raw, parsed, time.perf_counter() - t0)


def generate_many(items: Sequence, fn: Callable, max_concurrency: int = 4) -> list:
    """Apply ``fn`` with bounded concurrency; results (or raised exceptions) keep input order."""

    def run(item):
        try:
            return fn(item)
        except Exception as exc:  # surfaced to the caller per item
            return exc

    with ThreadPoolExecutor(max_workers=max(1, max_concurrency)) as pool:
        return list(pool.map(run, items))
