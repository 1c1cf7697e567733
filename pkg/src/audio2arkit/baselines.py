"""Trivial reference predictors for sanity-checking the metric ordering.

Each baseline mirrors the frame count of an existing prediction file so the
result can go straight through the eval stage.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .blendshape import BlendshapeSequence, ChannelSchema, parse_sequence, serialize_sequence

BASELINES = ("zero", "noise")


def baseline_values(kind: str, n_frames: int, n_channels: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "zero":
        return np.zeros((n_frames, n_channels))
    if kind == "noise":
        # i.i.d. uniform per frame, no temporal smoothing
        return rng.uniform(0.0, 1.0, (n_frames, n_channels))
    raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")


def write_baseline(kind: str, like_dir: Path, out_dir: Path, schema: ChannelSchema,
                   seed: int = 42, fps: float = 30.0) -> list[Path]:
    """One baseline file per ``<rec>.json`` in ``like_dir``, same length, seeded per recording order."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    written = []
    for src in sorted(p for p in Path(like_dir).glob("*.json") if not p.name.startswith("_")):
        n = parse_sequence(src.read_text("utf-8"), schema, "strict", fps).sequence.n_frames
        seq = BlendshapeSequence(baseline_values(kind, n, schema.count, rng), fps, schema)
        target = out_dir / src.name
        target.write_text(serialize_sequence(seq, 6) + "\n", encoding="utf-8")
        written.append(target)
    return written
