"""Post-processing for concatenated segment predictions.

Fixed order: dead-zone suppression, Gaussian de-quantization, Savitzky-Golay
filtering, clipping. Filters work per channel along the time axis with
edge-replicated boundaries.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .blendshape import BlendshapeSequence, clip_sequence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmoothingConfig:
    dead_zone_eps: float = 0.02
    gaussian_sigma: float = 1.0
    sg_window: int = 7
    sg_order: int = 2
    crossfade_frames: int = 2
    enabled: bool = True

    def __post_init__(self):
        if not 0 <= self.dead_zone_eps < 0.5:
            raise ValueError("dead_zone_eps must be in [0, 0.5)")
        if not self.gaussian_sigma > 0:
            raise ValueError("gaussian_sigma must be positive")
        _check_savgol(self.sg_window, self.sg_order)
        if self.crossfade_frames < 0:
            raise ValueError("crossfade_frames must be >= 0")


def _check_savgol(window: int, order: int):
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be an odd integer >= 3, got {window}")
    if not 1 <= order < window:
        raise ValueError(f"order must satisfy 1 <= order < window, got {order}")


def dead_zone(seq: BlendshapeSequence, eps: float) -> BlendshapeSequence:
    v = seq.values
    return seq.replace(np.where(np.abs(v) < eps, 0.0, v))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps over ``[-ceil(4 sigma), ceil(4 sigma)]``."""
    radius = int(math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _filter_edge(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Centered correlation of every column with ``kernel``, edges replicated."""
    r = len(kernel) // 2
    if values.shape[0] == 0:
        return values.copy()
    padded = np.pad(values, ((r, r), (0, 0)), mode="edge")
    out = np.zeros_like(values)
    for k, w in enumerate(kernel):
        out += w * padded[k : k + values.shape[0]]
    return out


def gaussian_dequantize(seq: BlendshapeSequence, sigma: float) -> BlendshapeSequence:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return seq.replace(_filter_edge(seq.values, gaussian_kernel(sigma)))


def savgol_coefficients(window: int, order: int) -> np.ndarray:
    """Least-squares smoothing weights at the window centre.

    Row of the pseudo-inverse of the Vandermonde matrix on offsets
    ``-h..h`` that yields the fitted polynomial's constant term.
    """
    _check_savgol(window, order)
    h = window // 2
    x = np.arange(-h, h + 1, dtype=np.float64)
    vander = np.vander(x, order + 1, increasing=True)
    # solve the normal equations through QR for conditioning
    q, r = np.linalg.qr(vander)
    e0 = np.zeros(order + 1)
    e0[0] = 1.0
    # coefficients c = R^-1 Q^T y, so weights are Q R^-T e0
    weights = q @ np.linalg.solve(r.T, e0)
    return 0.5 * (weights + weights[::-1])


def savgol_filter(seq: BlendshapeSequence, window: int, order: int) -> BlendshapeSequence:
    _check_savgol(window, order)
    if seq.n_frames < window:
        log.warning("sequence of %d frames is shorter than the %d-frame Savitzky-Golay window; left unchanged",
                    seq.n_frames, window)
        return seq
    return seq.replace(_filter_edge(seq.values, savgol_coefficients(window, order)))


def _crossfade(values: np.ndarray, junction: int, frames: int) -> None:
    """Replace frames around ``junction`` with a line between the neighbours just outside them."""
    n = values.shape[0]
    left_n = frames // 2
    lo = max(junction - left_n, 0)
    hi = min(junction + (frames - left_n), n)
    if hi <= lo:
        return
    a = values[lo - 1] if lo > 0 else values[lo]
    b = values[hi] if hi < n else values[hi - 1]
    steps = hi - lo + 1
    for k in range(lo, hi):
        t = (k - lo + 1) / steps
        values[k] = (1 - t) * a + t * b


def concat_segments(
    segments: Sequence[BlendshapeSequence],
    crossfade_frames: int = 0,
    overlaps: Sequence[int] | None = None,
) -> BlendshapeSequence:
    """Concatenate segment predictions in order.

    ``overlaps[i]`` is the number of frames segment ``i+1`` shares with
    segment ``i`` (the ceil/floor slicing rule yields at most one). Shared
    frames appear once: blended linearly when ``crossfade_frames > 0``,
    taken from the earlier segment otherwise. With ``crossfade_frames > 0``
    each junction is then bridged by a linear ramp across that many frames.
    """
    if not segments:
        raise ValueError("no segments to concatenate")
    first = segments[0]
    for s in segments[1:]:
        if s.schema != first.schema:
            raise ValueError("segments use different channel schemas")
        if s.fps != first.fps:
            raise ValueError(f"fps mismatch: {s.fps} vs {first.fps}")
    overlaps = list(overlaps) if overlaps is not None else [0] * (len(segments) - 1)
    if len(overlaps) != len(segments) - 1:
        raise ValueError("need one overlap count per junction")

    values = np.array(first.values)
    junctions = []
    for seg, ov in zip(segments[1:], overlaps):
        ov = max(0, min(ov, values.shape[0], seg.n_frames))
        cur = np.array(seg.values)
        if ov and crossfade_frames > 0:
            w = (np.arange(1, ov + 1) / (ov + 1))[:, None]
            tail = values[values.shape[0] - ov:]
            values[values.shape[0] - ov:] = (1 - w) * tail + w * cur[:ov]
        junctions.append(values.shape[0])
        values = np.concatenate([values, cur[ov:]], axis=0)
    if crossfade_frames > 0:
        for j in junctions:
            _crossfade(values, j, crossfade_frames)
    return first.replace(values)


def smooth_pipeline(seq: BlendshapeSequence, config: SmoothingConfig | None = None) -> BlendshapeSequence:
    config = config or SmoothingConfig()
    if config.enabled:
        seq = dead_zone(seq, config.dead_zone_eps)
        seq = gaussian_dequantize(seq, config.gaussian_sigma)
        seq = savgol_filter(seq, config.sg_window, config.sg_order)
    return clip_sequence(seq)


def total_variation(values: np.ndarray) -> np.ndarray:
    """Per-channel sum of absolute frame-to-frame changes."""
    values = np.asarray(values)
    if values.shape[0] < 2:
        return np.zeros(values.shape[1:])
    return np.abs(np.diff(values, axis=0)).sum(axis=0)
