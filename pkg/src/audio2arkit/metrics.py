"""Frame-level and distributional evaluation metrics.

MSE and MAE compare aligned frames directly. FD and WInD compare the
distributions of windowed motion features: FD through Gaussian fits, WInD
through the empirical 2-Wasserstein distance on seeded subsamples.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .blendshape import BlendshapeSequence

EIG_TOL = 1e-8


class MetricError(ValueError):
    pass


def _pair(pred: BlendshapeSequence | np.ndarray, gt: BlendshapeSequence | np.ndarray):
    p = pred.values if isinstance(pred, BlendshapeSequence) else np.asarray(pred, dtype=float)
    g = gt.values if isinstance(gt, BlendshapeSequence) else np.asarray(gt, dtype=float)
    if p.shape != g.shape:
        raise MetricError(f"shape mismatch: {p.shape} vs {g.shape}")
    if p.size == 0:
        raise MetricError("empty sequences")
    return p, g


def mse(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean((g - p) ** 2))


def mae(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean(np.abs(g - p)))


@dataclass(frozen=True, eq=False)
class FeatureSet:
    vectors: np.ndarray
    window: int
    hop: int

    def __len__(self):
        return self.vectors.shape[0]


def motion_features(block: np.ndarray) -> np.ndarray:
    """Per-channel mean followed by per-channel mean absolute first difference."""
    return np.concatenate([block.mean(axis=0), np.abs(np.diff(block, axis=0)).mean(axis=0)])


def extract_features(
    seq: BlendshapeSequence | np.ndarray,
    window: int = 8,
    hop: int = 2,
    extractor: Callable[[np.ndarray], np.ndarray] = motion_features,
) -> FeatureSet:
    values = seq.values if isinstance(seq, BlendshapeSequence) else np.asarray(seq, dtype=float)
    if window < 2 or hop < 1:
        raise MetricError("need window >= 2 and hop >= 1")
    n = values.shape[0]
    if n < window:
        raise MetricError(f"sequence of {n} frames is shorter than the {window}-frame window")
    starts = range(0, n - window + 1, hop)
    return FeatureSet(np.stack([extractor(values[s : s + window]) for s in starts]), window, hop)


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray


def gaussian_stats(features: FeatureSet | np.ndarray) -> GaussianStats:
    x = features.vectors if isinstance(features, FeatureSet) else np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise MetricError("need at least two feature vectors")
    mu = x.mean(axis=0)
    centred = x - mu
    cov = centred.T @ centred / (x.shape[0] - 1)
    return GaussianStats(mu, 0.5 * (cov + cov.T))


def _psd_eig(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    tol = EIG_TOL * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if w.size and w.min() < -tol:
        raise MetricError(f"matrix is not positive semidefinite (eigenvalue {w.min():.3e})")
    return np.clip(w, 0.0, None), v


def matrix_sqrt_psd(a: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix by eigendecomposition."""
    a = np.asarray(a, dtype=float)
    w, v = _psd_eig(a)
    r = (v * np.sqrt(w)) @ v.T
    return 0.5 * (r + r.T)


def trace_sqrt_product(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    """``Tr((A B)^(1/2))`` for PSD A, B.

    Equals ``Tr((S_a B S_a)^(1/2))`` with ``S = A^(1/2)``. The eigenvalues of
    that symmetric form are the squared singular values of ``S_a S_b``, so the
    trace is the nuclear norm of ``S_a S_b``; computing it that way is exactly
    symmetric in (A, B).
    """
    m = matrix_sqrt_psd(sigma_a) @ matrix_sqrt_psd(sigma_b)
    return float(np.linalg.svd(m, compute_uv=False).sum())


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    if a.mean.shape != b.mean.shape or a.covariance.shape != b.covariance.shape:
        raise MetricError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    if np.array_equal(a.mean, b.mean) and np.array_equal(a.covariance, b.covariance):
        return 0.0  # the trace terms cancel analytically; skip the roundoff
    diff = a.mean - b.mean
    value = float(diff @ diff) + float(np.trace(a.covariance) + np.trace(b.covariance)) \
        - 2.0 * trace_sqrt_product(a.covariance, b.covariance)
    if value < 0:
        if value < -EIG_TOL * max(1.0, float(np.trace(a.covariance) + np.trace(b.covariance))):
            raise MetricError(f"negative Frechet distance {value:.3e}")
        value = 0.0
    return value


def squared_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # explicit differences (not the expanded form) so coincident points cost exactly 0
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.empty((x.shape[0], y.shape[0]))
    step = max(1, 2**22 // max(1, y.size))
    for i in range(0, x.shape[0], step):
        diff = x[i : i + step, None, :] - y[None, :, :]
        out[i : i + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _exact_ot_cost(cost: np.ndarray) -> float:
    n, m = cost.shape
    if n == m:
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].sum() / n)
    # transportation LP: n*m plan entries, row sums 1/n, column sums 1/m
    a_rows = np.kron(np.eye(n), np.ones((1, m)))
    a_cols = np.kron(np.ones((1, n)), np.eye(m))
    res = linprog(
        cost.ravel(),
        A_eq=np.vstack([a_rows, a_cols]),
        b_eq=np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)]),
        bounds=(0, None),
        method="highs",
    )
    if not res.success:
        raise MetricError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _sinkhorn_cost(cost: np.ndarray, eps: float, max_iter: int, tol: float) -> float:
    """Transport cost of the entropic plan, log-domain iterations."""
    n, m = cost.shape
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    k = -cost / eps
    for _ in range(max_iter):
        f = log_a - _logsumexp(k + g[None, :], axis=1)
        g = log_b - _logsumexp(k + f[:, None], axis=0)
        log_p = k + f[:, None] + g[None, :]
        err = np.abs(np.exp(_logsumexp(log_p, axis=1)) - np.exp(log_a)).sum()
        if err < tol:
            break
    plan = np.exp(k + f[:, None] + g[None, :])
    return float((plan * cost).sum())


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    mx = a.max(axis=axis, keepdims=True)
    return (mx + np.log(np.exp(a - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


OTMethod = Literal["exact", "sinkhorn"]


def wasserstein2_empirical(
    x: np.ndarray,
    y: np.ndarray,
    method: OTMethod = "exact",
    sinkhorn_iters: int = 1000,
    sinkhorn_tol: float = 1e-9,
) -> float:
    """2-Wasserstein distance between uniform empirical measures on the rows of x and y.

    ``exact`` solves the transport problem (assignment when sizes match, LP
    otherwise). ``sinkhorn`` is approximate: entropic regularisation with
    ``eps = 0.01 * median cost``, debiased by subtracting the mean of the two
    self-transport costs.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise MetricError("empty point sets")
    if x.shape[1] != y.shape[1]:
        raise MetricError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    cost = squared_distances(x, y)
    if method == "exact":
        if x.shape[0] * y.shape[0] > 10**6 and x.shape[0] != y.shape[0]:
            raise MetricError("exact LP limited to N*M <= 1e6; use method='sinkhorn'")
        return float(np.sqrt(max(_exact_ot_cost(cost), 0.0)))
    if method == "sinkhorn":
        med = float(np.median(cost))
        eps = 0.01 * med if med > 0 else 1e-3
        cxy = _sinkhorn_cost(cost, eps, sinkhorn_iters, sinkhorn_tol)
        cxx = _sinkhorn_cost(squared_distances(x, x), eps, sinkhorn_iters, sinkhorn_tol)
        cyy = _sinkhorn_cost(squared_distances(y, y), eps, sinkhorn_iters, sinkhorn_tol)
        return float(np.sqrt(max(cxy - 0.5 * (cxx + cyy), 0.0)))
    raise ValueError(f"unknown OT method {method!r}")


def wind(
    pred_features: FeatureSet | np.ndarray,
    gt_features: FeatureSet | np.ndarray,
    subsample: int = 64,
    repeats: int = 5,
    seed: int = 42,
    method: OTMethod = "exact",
) -> tuple[float, float]:
    """Mean and sample std of W2 over seeded subsample repeats.

    Repeat ``r`` draws both index sets from a generator seeded with
    ``seed + r``, so equally sized sets are subsampled at the same positions.
    """
    p = pred_features.vectors if isinstance(pred_features, FeatureSet) else np.asarray(pred_features)
    g = gt_features.vectors if isinstance(gt_features, FeatureSet) else np.asarray(gt_features)
    if repeats < 2:
        raise MetricError("need at least two repeats")
    if subsample < 1 or len(p) < subsample or len(g) < subsample:
        raise MetricError(f"insufficient samples: need {subsample}, have {len(p)} and {len(g)}")
    dists = []
    for r in range(repeats):
        ip = np.random.default_rng(seed + r).choice(len(p), subsample, replace=False)
        ig = np.random.default_rng(seed + r).choice(len(g), subsample, replace=False)
        dists.append(wasserstein2_empirical(p[ip], g[ig], method))
    d = np.asarray(dists)
    return float(d.mean()), float(d.std(ddof=1))


@dataclass(frozen=True)
class MetricsConfig:
    window: int = 8
    hop: int = 2
    subsample: int = 64
    repeats: int = 5
    seed: int = 42
    ot_method: OTMethod = "exact"


@dataclass
class MetricReport:
    mse: float
    mae: float
    fd: float
    wind_mean: float
    wind_std: float
    n_frames: int
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def evaluate(pred: BlendshapeSequence, gt: BlendshapeSequence,
             config: MetricsConfig | None = None) -> MetricReport:
    config = config or MetricsConfig()
    if pred.fps != gt.fps:
        raise MetricError(f"fps mismatch: prediction {pred.fps}, ground truth {gt.fps}")
    if pred.schema != gt.schema:
        raise MetricError("channel schemas differ")
    fp = extract_features(pred, config.window, config.hop)
    fg = extract_features(gt, config.window, config.hop)
    w_mean, w_std = wind(fp, fg, config.subsample, config.repeats, config.seed, config.ot_method)
    snapshot = asdict(config)
    snapshot["approximate"] = config.ot_method != "exact"
    return MetricReport(
        mse=mse(pred, gt),
        mae=mae(pred, gt),
        fd=frechet_distance(gaussian_stats(fg), gaussian_stats(fp)),
        wind_mean=w_mean,
        wind_std=w_std,
        n_frames=pred.n_frames,
        config=snapshot,
    )
