"""PCM WAV slicing on top of the stdlib ``wave`` module."""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# tolerated overshoot when a span end lands a hair past the last sample
_SPAN_SLACK = 1e-6


class UnsupportedEncoding(ValueError):
    pass


class SpanOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class WavInfo:
    sample_rate: int
    channels: int
    sample_width: int
    n_samples: int

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


def _open(source) -> wave.Wave_read:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    elif isinstance(source, Path):
        source = str(source)
    try:
        w = wave.open(source, "rb")
    except (wave.Error, EOFError) as exc:
        raise UnsupportedEncoding(f"not a PCM WAV stream: {exc}") from exc
    if w.getsampwidth() != 2 or w.getnchannels() not in (1, 2) or w.getcomptype() != "NONE":
        w.close()
        raise UnsupportedEncoding(
            f"need 16-bit PCM mono/stereo, got {8 * w.getsampwidth()}-bit, {w.getnchannels()} channel(s)"
        )
    return w


def wav_info(source) -> WavInfo:
    with _open(source) as w:
        return WavInfo(w.getframerate(), w.getnchannels(), w.getsampwidth(), w.getnframes())


def slice_audio(source, start: float, end: float) -> bytes:
    """Cut samples ``[round(start*sr), round(end*sr))`` into a standalone WAV."""
    with _open(source) as w:
        sr, n = w.getframerate(), w.getnframes()
        if start < 0 or end < start or end > n / sr + _SPAN_SLACK:
            raise SpanOutOfRange(f"span ({start}, {end}) outside audio of {n / sr:.6f} s")
        a, b = round(start * sr), min(round(end * sr), n)
        w.setpos(a)
        payload = w.readframes(b - a)
        params = w.getparams()
    buf = io.BytesIO()
    with wave.open(buf, "wb") as out:
        out.setnchannels(params.nchannels)
        out.setsampwidth(params.sampwidth)
        out.setframerate(params.framerate)
        out.writeframes(payload)
    return buf.getvalue()


def read_samples(source) -> tuple[np.ndarray, int]:
    """int16 samples shaped (n, channels) and the sample rate."""
    with _open(source) as w:
        raw = w.readframes(w.getnframes())
        ch, sr = w.getnchannels(), w.getframerate()
    return np.frombuffer(raw, dtype="<i2").reshape(-1, ch), sr


def write_wav(samples: np.ndarray, sample_rate: int) -> bytes:
    samples = np.asarray(samples, dtype="<i2")
    if samples.ndim == 1:
        samples = samples[:, None]
    buf = io.BytesIO()
    with wave.open(buf, "wb") as out:
        out.setnchannels(samples.shape[1])
        out.setsampwidth(2)
        out.setframerate(sample_rate)
        out.writeframes(samples.tobytes())
    return buf.getvalue()
