"""Feature-style statistics, slope extrapolation, and re-stylization.

The style of a feature block is its per-(sample, channel) spatial mean and
standard deviation.  Over a batch, the (mu, sigma) cloud is summarised by
a least-squares slope; hallucination draws a fresh slope from the
extrapolated range of recently fitted slopes, rebuilds sigma on the new
line through the batch centroid, and re-normalizes the features onto the
sampled style.  Sampled targets are constants on the tape: they are
augmentation noise, not model outputs.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeMismatch, Tensor
from .encoder import StateEmbedding

# added under the sqrt of the spatial variance; tests budget for it
EPS_VAR = 1e-12
# floor for target and divisor deviations; extrapolated lines may cross 0
EPS_SIGMA = 1e-3


class DegenerateCloud(T.TensorError):
    pass


class EmptyHistory(T.TensorError):
    pass


@dataclass
class StyleStats:
    mu: Tensor  # B x C
    sigma: Tensor  # B x C, >= 0
    stage: int


@dataclass
class SlopeRange:
    gamma_min: float
    gamma_max: float

    @property
    def gamma_min_ext(self) -> float:
        return 2.0 * self.gamma_min - self.gamma_max

    @property
    def gamma_max_ext(self) -> float:
        return 2.0 * self.gamma_max - self.gamma_min


def stats_arrays(f_data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Numpy-only spatial mean/deviation of a B,C,H,W block."""
    mu = f_data.mean(axis=(2, 3))
    var = ((f_data - mu[:, :, None, None]) ** 2).mean(axis=(2, 3))
    return mu, np.sqrt(var + EPS_VAR)


def compute_style(f: StateEmbedding) -> StyleStats:
    """Differentiable per-(sample, channel) spatial mean and deviation."""
    x = f.f
    if x.ndim != 4:
        raise ShapeMismatch(f"expected B,C,H,W features, got {x.shape}")
    mu = T.mean(x, axes=[2, 3])
    b, c = mu.shape
    centered = x - T.reshape(mu, (b, c, 1, 1))
    var = T.mean(centered * centered, axes=[2, 3])
    sigma = T.sqrt(var + EPS_VAR)
    return StyleStats(mu=mu, sigma=sigma, stage=f.stage)


def fit_slope_arrays(mu: np.ndarray, sigma: np.ndarray) -> float:
    mu = mu.reshape(-1)
    sigma = sigma.reshape(-1)
    dm = mu - mu.mean()
    den = float(np.sum(dm * dm))
    if den < 1e-12:
        raise DegenerateCloud("all channel means coincide")
    return float(np.sum(dm * (sigma - sigma.mean())) / den)


def fit_slope(stats: StyleStats) -> float:
    """Least-squares slope of sigma against mu over all B*C points."""
    return fit_slope_arrays(stats.mu.data, stats.sigma.data)


def extrapolate_range(gammas: list[float]) -> SlopeRange:
    """Extended slope bounds from the recent-slope window."""
    if not gammas:
        raise EmptyHistory("no fitted slopes yet")
    return SlopeRange(gamma_min=min(gammas), gamma_max=max(gammas))


class SlopeWindow:
    """Sliding window of the last ``size`` fitted slopes, one per stage."""

    def __init__(self, size: int = 16):
        self._hist: dict[int, deque] = {}
        self.size = size

    def push(self, stage: int, gamma: float) -> None:
        self._hist.setdefault(stage, deque(maxlen=self.size)).append(gamma)

    def range(self, stage: int) -> SlopeRange:
        return extrapolate_range(list(self._hist.get(stage, [])))


def sample_style(stats: StyleStats, srange: SlopeRange,
                 rng: np.random.Generator) -> StyleStats:
    """Draw one slope from the extended range and rebuild sigma on the new
    line through the batch centroid; mu is kept per point.

    The returned stats are detached constants.
    """
    gamma = rng.uniform(srange.gamma_min_ext, srange.gamma_max_ext)
    mu = stats.mu.data
    sg = stats.sigma.data
    mu_bar = mu.mean()
    sg_bar = sg.mean()
    new_sigma = np.maximum(sg_bar + gamma * (mu - mu_bar), EPS_SIGMA)
    return StyleStats(mu=Tensor(mu.copy()), sigma=Tensor(new_sigma), stage=stats.stage)


def hallucinate(f: StateEmbedding, stats: StyleStats, target: StyleStats) -> StateEmbedding:
    """Affine re-stylization onto the target style, per (sample, channel);
    differentiable with respect to the features (and their own stats)."""
    x = f.f
    if stats.mu.shape != target.mu.shape or stats.mu.shape != x.shape[:2]:
        raise ShapeMismatch("style stats do not align with the feature block")
    b, c = stats.mu.shape
    mu = T.reshape(stats.mu, (b, c, 1, 1))
    sigma = T.clamp(T.reshape(stats.sigma, (b, c, 1, 1)), lo=EPS_SIGMA)
    mu_t = T.reshape(target.mu, (b, c, 1, 1))
    sigma_t = T.reshape(target.sigma, (b, c, 1, 1))
    out = sigma_t * ((x - mu) / sigma) + mu_t
    return StateEmbedding(f=out, stage=f.stage)


def export_rows(stats: StyleStats, batch: int, kind: str) -> list[tuple]:
    """Flatten one stats block into style-export CSV rows."""
    mu = stats.mu.data
    sg = stats.sigma.data
    rows = []
    for s in range(mu.shape[0]):
        for ch in range(mu.shape[1]):
            rows.append((stats.stage, batch, s, ch, mu[s, ch], sg[s, ch], kind))
    return rows


def write_style_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "batch", "sample", "channel", "mu", "sigma", "kind"])
        writer.writerows(rows)
