"""Coefficient data model plus the channel-keyed JSON and CSV formats.

The JSON layout is a single object whose keys are channel names (in schema
order) and whose values are equal-length lists of per-frame coefficients.
It is both the structured-generation target and the generator output format,
so the parser has a lenient ``recover`` mode for truncated or sloppy model
output next to an exact ``strict`` mode.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

Strictness = Literal["strict", "recover"]

DEFAULT_DECIMALS = 2
FPS_TOLERANCE = 0.01


class SchemaError(ValueError):
    """Input does not match the channel schema (strict parsing, CSV headers)."""


class ParseFailure(ValueError):
    """Recover-mode parsing could not salvage a single complete frame."""


@dataclass(frozen=True)
class ChannelSchema:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if any(not isinstance(n, str) or not n for n in names):
            raise ValueError("channel names must be non-empty strings")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate channel names: {dupes}")

    @property
    def count(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.names)


def load_schema(path: str | Path | None = None) -> ChannelSchema:
    """Load a channel schema file; ``None`` selects the bundled 33-channel schema."""
    if path is None:
        text = resources.files("audio2arkit.data").joinpath("schema_v1.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    doc = json.loads(text)
    channels = doc["channels"] if isinstance(doc, dict) else doc
    return ChannelSchema(tuple(channels))


_default_schema: ChannelSchema | None = None


def default_schema() -> ChannelSchema:
    global _default_schema
    if _default_schema is None:
        _default_schema = load_schema()
    return _default_schema


@dataclass(frozen=True, eq=False)
class BlendshapeSequence:
    """A (T, K) frame-major coefficient matrix with its frame rate and schema.

    Values are stored as a read-only float64 array. Construction does not clip;
    use :meth:`out_of_range` / :func:`clip_sequence` for pre-clip data.
    """

    values: np.ndarray
    fps: float
    schema: ChannelSchema = field(default_factory=default_schema)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1 and values.size == 0:
            values = values.reshape(0, self.schema.count)
        if values.ndim != 2 or values.shape[1] != self.schema.count:
            raise ValueError(
                f"values must have shape (T, {self.schema.count}), got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("coefficients must be finite")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def duration(self) -> float:
        return self.n_frames / self.fps

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    def out_of_range(self) -> int:
        """Number of entries outside [0, 1]."""
        return int(np.count_nonzero((self.values < 0.0) | (self.values > 1.0)))

    def replace(self, values: np.ndarray) -> "BlendshapeSequence":
        return BlendshapeSequence(values, self.fps, self.schema)

    def __eq__(self, other):
        if not isinstance(other, BlendshapeSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.schema == other.schema
            and np.array_equal(self.values, other.values)
        )

    @classmethod
    def from_channels(
        cls, channels: dict[str, Sequence[float]], fps: float, schema: ChannelSchema
    ) -> "BlendshapeSequence":
        lengths = {len(v) for v in channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"ragged channels: lengths {sorted(lengths)}")
        n = lengths.pop() if lengths else 0
        values = np.zeros((n, schema.count))
        for name, col in channels.items():
            values[:, schema.index(name)] = col
        return cls(values, fps, schema)

    @classmethod
    def zeros(cls, n_frames: int, fps: float, schema: ChannelSchema | None = None):
        schema = schema or default_schema()
        return cls(np.zeros((n_frames, schema.count)), fps, schema)


def clip_sequence(seq: BlendshapeSequence) -> BlendshapeSequence:
    return seq.replace(np.clip(seq.values, 0.0, 1.0))


def _fmt(x: float, decimals: int) -> str:
    # str.format rounds the exact binary value half-to-even; + 0.0 drops "-0"
    s = f"{x + 0.0:.{decimals}f}"
    return "0." + "0" * decimals if s.startswith("-") and float(s) == 0 else s


def serialize_sequence(seq: BlendshapeSequence, decimals: int = DEFAULT_DECIMALS) -> str:
    if not 1 <= decimals <= 6:
        raise ValueError(f"decimals must be in [1, 6], got {decimals}")
    parts = []
    for k, name in enumerate(seq.schema.names):
        col = ",".join(_fmt(v, decimals) for v in seq.values[:, k].tolist())
        parts.append(f"{json.dumps(name)}:[{col}]")
    return "{" + ",".join(parts) + "}"


@dataclass
class ParseOutcome:
    sequence: BlendshapeSequence
    warnings: list[str]
    strictness: Strictness


def _reject_constant(name):
    raise ValueError(f"non-finite JSON constant {name}")


_KEY_RE = re.compile(r'"((?:[^"\\]|\\.)*)"\s*:\s*')
_NUM_RE = re.compile(r"-?(?:0|[1-9]\d*)(?:\.\d+)?(?:[eE][+-]?\d+)?")
_WS = " \t\r\n"


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos] in _WS:
        pos += 1
    return pos


def _scan_channels(text: str) -> tuple[list[tuple[str, list[float], bool]], list[str]]:
    """Tolerant scanner for ``"key": [n, n, ...]`` members.

    Returns ``(key, values, closed)`` triples where ``closed`` tells whether the
    list's closing bracket was seen; a number counts only when a delimiter
    follows it, so a value cut off mid-digit is never taken.
    """
    notes = []
    found = []
    pos = text.find("{")
    if pos < 0:
        return found, notes
    pos += 1
    while True:
        m = _KEY_RE.search(text, pos)
        if m is None:
            break
        key = json.loads(f'"{m.group(1)}"')
        pos = m.end()
        if pos >= len(text) or text[pos] != "[":
            notes.append(f"member {key!r} is not a list; ignored")
            continue
        pos += 1
        values: list[float] = []
        closed = False
        while True:
            pos = _skip_ws(text, pos)
            if pos >= len(text):
                break
            if text[pos] == "]":
                closed = True
                pos += 1
                break
            n = _NUM_RE.match(text, pos)
            if n is None:
                notes.append(f"channel {key!r}: non-numeric entry at frame {len(values)}")
                break
            after = _skip_ws(text, n.end())
            if after >= len(text) or text[after] not in ",]":
                break
            values.append(float(n.group()))
            pos = after + 1 if text[after] == "," else after
        found.append((key, values, closed))
    return found, notes


def _strip_wrapper(text: str) -> tuple[str, bool]:
    start, end = text.find("{"), text.rfind("}")
    if start < 0:
        return text, bool(text.strip())
    inner = text[start : end + 1] if end > start else text[start:]
    return inner, bool(text[:start].strip() or (end > start and text[end + 1 :].strip()))


def parse_sequence(
    text: str,
    schema: ChannelSchema,
    mode: Strictness = "recover",
    fps: float = 30.0,
) -> ParseOutcome:
    """Parse channel-keyed JSON into a sequence.

    ``strict`` demands an exact schema match: every key present, no extra keys,
    equal list lengths, finite values inside [0, 1]. ``recover`` zero-fills
    missing channels, truncates to the shortest list, clips to [0, 1] and drops
    an unparseable tail, recording one warning per kind of repair.
    """
    if mode == "strict":
        return _parse_strict(text, schema, fps)
    if mode != "recover":
        raise ValueError(f"unknown strictness {mode!r}")

    warnings: list[str] = []
    inner, wrapped = _strip_wrapper(text)
    if wrapped:
        warnings.append("ignored text outside the JSON object")

    channels: dict[str, list[float]] = {}
    well_formed = False
    try:
        doc = json.loads(inner, parse_constant=_reject_constant)
    except (ValueError, RecursionError):
        doc = None
    if isinstance(doc, dict):
        well_formed = True
        for key, col in doc.items():
            if not isinstance(col, list):
                warnings.append(f"member {key!r} is not a list; ignored")
                continue
            vals = []
            for v in col:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    warnings.append(f"channel {key!r}: non-numeric entry at frame {len(vals)}")
                    well_formed = False
                    break
                vals.append(float(v))
            channels[key] = vals
    else:
        found, notes = _scan_channels(inner)
        warnings.extend(notes)
        if any(not closed for _, _, closed in found) or not inner.rstrip().endswith("}"):
            warnings.append("discarded unparseable tail after the last complete frame")
        for key, vals, _ in found:
            channels[key] = vals

    extra = [k for k in channels if k not in schema]
    if extra:
        warnings.append(f"ignored unknown channels: {', '.join(extra)}")
    known = {k: v for k, v in channels.items() if k in schema}
    if not known:
        raise ParseFailure("no schema channel could be recovered")

    lengths = {k: len(v) for k, v in known.items()}
    n = min(lengths.values())
    longer = [k for k, ln in lengths.items() if ln > n]
    if longer:
        warnings.append(f"truncated to {n} frames; longer channels: {', '.join(longer)}")
    missing = [k for k in schema.names if k not in known]
    if missing:
        warnings.append(f"filled missing channels with zeros: {', '.join(missing)}")
    if n == 0 and not (well_formed and not missing and not longer):
        raise ParseFailure("no complete frame could be recovered")

    values = np.zeros((n, schema.count))
    for k, col in known.items():
        values[:, schema.index(k)] = col[:n]
    n_bad = int(np.count_nonzero((values < 0.0) | (values > 1.0)))
    if n_bad:
        warnings.append(f"clipped {n_bad} out-of-range values to [0, 1]")
        values = np.clip(values, 0.0, 1.0)
    return ParseOutcome(BlendshapeSequence(values, fps, schema), warnings, "recover")


def _parse_strict(text: str, schema: ChannelSchema, fps: float) -> ParseOutcome:
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except ValueError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("top-level JSON value must be an object")
    missing = [k for k in schema.names if k not in doc]
    if missing:
        raise SchemaError(f"missing channels: {', '.join(missing)}")
    extra = [k for k in doc if k not in schema]
    if extra:
        raise SchemaError(f"unknown channels: {', '.join(extra)}")
    lengths = set()
    for key in schema.names:
        col = doc[key]
        if not isinstance(col, list):
            raise SchemaError(f"channel {key!r} must be a list")
        for v in col:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaError(f"channel {key!r} has non-numeric value {v!r}")
        lengths.add(len(col))
    if len(lengths) > 1:
        raise SchemaError(f"ragged channels: lengths {sorted(lengths)}")
    n = lengths.pop()
    values = np.array([doc[k] for k in schema.names], dtype=np.float64).reshape(schema.count, n).T
    if np.any((values < 0.0) | (values > 1.0)):
        raise SchemaError("values outside [0, 1]")
    return ParseOutcome(BlendshapeSequence(values, fps, schema), [], "strict")


def load_json_sequence(path: str | Path, schema: ChannelSchema, fps: float,
                       mode: Strictness = "strict") -> BlendshapeSequence:
    return parse_sequence(Path(path).read_text("utf-8"), schema, mode, fps).sequence


def write_csv(seq: BlendshapeSequence, decimals: int = 6, with_time: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow((["time"] if with_time else []) + list(seq.schema.names))
    for t, row in enumerate(seq.values.tolist()):
        cells = [_fmt(v, decimals) for v in row]
        if with_time:
            cells.insert(0, _fmt(t / seq.fps, 6))
        writer.writerow(cells)
    return buf.getvalue()


def read_csv(
    text: str,
    schema: ChannelSchema,
    fps: float | None = None,
    strict: bool = True,
) -> BlendshapeSequence:
    """Read a coefficient CSV.

    An optional ``time`` column (seconds) is not stored; it fixes the frame rate
    when ``fps`` is None and otherwise must agree with ``fps`` within 1%.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaError("empty CSV")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    has_time = "time" in header
    cols = [h for h in header if h != "time"]
    extra = [c for c in cols if c not in schema]
    missing = [c for c in schema.names if c not in cols]
    if strict and (missing or extra):
        detail = []
        if missing:
            detail.append(f"missing column(s): {', '.join(missing)}")
        if extra:
            detail.append(f"unknown column(s): {', '.join(extra)}")
        raise SchemaError("; ".join(detail))

    values = np.zeros((len(body), schema.count))
    times = []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise SchemaError(f"line {lineno}: expected {len(header)} cells, got {len(row)}")
        for name, cell in zip(header, row):
            try:
                x = float(cell)
            except ValueError:
                raise SchemaError(f"line {lineno}: non-numeric cell {cell!r} in {name!r}") from None
            if not np.isfinite(x):
                raise SchemaError(f"line {lineno}: non-finite cell in {name!r}")
            if name == "time":
                times.append(x)
            elif name in schema:
                values[lineno - 2, schema.index(name)] = x

    if has_time and len(times) >= 2:
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise SchemaError("time column is not strictly increasing")
        # whole span, so per-row rounding of the time stamps averages out
        measured = (len(times) - 1) / (times[-1] - times[0])
        if fps is None:
            fps = measured
        elif abs(measured - fps) > FPS_TOLERANCE * fps:
            raise SchemaError(f"time column implies {measured:.3f} fps, expected {fps}")
    if fps is None:
        raise SchemaError("fps unknown: no time column and no fps given")
    return BlendshapeSequence(values, fps, schema)


def stack(seqs: Iterable[BlendshapeSequence]) -> BlendshapeSequence:
    """Plain frame-wise concatenation (no overlap handling)."""
    seqs = list(seqs)
    if not seqs:
        raise ValueError("nothing to stack")
    return seqs[0].replace(np.concatenate([s.values for s in seqs], axis=0))
