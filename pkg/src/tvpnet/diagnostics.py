"""Posterior summaries, mixing diagnostics and predictive evaluation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .model import PosteriorSamples, edge_id, edge_index

HPD_MIN_SAMPLES = 20
ESS_MIN_LENGTH = 100


class MultimodalWarning(UserWarning):
    pass


def hpd_interval(samples, level: float = 0.95):
    """Shortest window of sorted samples holding ``ceil(level * n)`` points.

    Ties in width go to the window with the smallest lower endpoint.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < HPD_MIN_SAMPLES:
        raise ValueError(f"hpd_interval needs at least {HPD_MIN_SAMPLES} samples, got {n}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    m = max(1, math.ceil(level * n - 1e-9))
    widths = x[m - 1:] - x[: n - m + 1]
    wmin = widths.min()
    # float noise must not break exact ties in width
    tol = 1e-12 * max(1.0, abs(x[-1] - x[0]))
    candidates = np.flatnonzero(widths <= wmin + tol)
    k = int(candidates[0])

    if widths.size > 25:
        order = np.argsort(widths, kind="stable")[:25]
        spread = x[order].max() - x[order].min()
        if spread > 2.0 * max(wmin, tol):
            warnings.warn("shortest HPD windows disagree in location; posterior may be multimodal",
                          MultimodalWarning, stacklevel=2)
    return float(x[k]), float(x[k + m - 1])


class ESSEstimate(NamedTuple):
    ess: float
    degenerate: bool


def autocorrelation(chain) -> np.ndarray:
    x = np.asarray(chain, dtype=float)
    n = x.size
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    return acov / acov[0]


def effective_sample_size(chain) -> ESSEstimate:
    """Geyer's initial monotone positive sequence estimator, clipped to (0, n]."""
    x = np.asarray(chain, dtype=float).ravel()
    n = x.size
    if n < ESS_MIN_LENGTH:
        raise ValueError(f"effective_sample_size needs at least {ESS_MIN_LENGTH} draws, got {n}")
    if np.ptp(x) == 0 or x.var() <= 1e-300:
        return ESSEstimate(float(n), True)
    rho = autocorrelation(x)
    n_pairs = (n - 1) // 2
    gamma = rho[0 : 2 * n_pairs : 2] + rho[1 : 2 * n_pairs + 1 : 2]
    nonpos = np.flatnonzero(gamma <= 0)
    m = nonpos[0] if nonpos.size else gamma.size
    gamma = np.minimum.accumulate(gamma[:m])
    tau = -1.0 + 2.0 * gamma.sum()
    ess = n / tau if tau > 0 else float(n)
    return ESSEstimate(float(min(max(ess, np.finfo(float).tiny), n)), False)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied (positive, negative) pairs count one half."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same length")
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs at least one positive and one negative label")
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be binary")
    r = rankdata(s)
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def window_average_network(samples: PosteriorSamples, window) -> list:
    """Per-edge mean of ``pi`` over draws and the time indices in ``window``.

    Returns ``(i, j, weight)`` tuples with ``i > j``, sorted by ``(i, j)``.
    """
    idx = _window_indices(window, samples.pi.shape[2])
    w = samples.pi[:, :, idx].mean(axis=(0, 2), dtype=np.float64)
    rows, cols = edge_index(len(samples.node_labels))
    out = [(int(i), int(j), float(np.clip(v, 0.0, 1.0))) for i, j, v in zip(rows, cols, w)]
    return sorted(out)


def _window_indices(window, N: int) -> np.ndarray:
    if isinstance(window, slice):
        idx = np.arange(N)[window]
    else:
        idx = np.asarray(list(window), dtype=int)
    if idx.size == 0:
        raise ValueError("empty time window")
    if idx.min() < 0 or idx.max() >= N:
        raise ValueError(f"time window outside grid of {N} points")
    return idx


@dataclass(frozen=True)
class SummarySeries:
    target: str
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95

    def __post_init__(self):
        if np.any(self.lower > self.upper):
            raise ValueError(f"{self.target}: HPD lower bound exceeds upper bound")
        outside = (self.mean < self.lower) | (self.mean > self.upper)
        if outside.any():
            warnings.warn(f"{self.target}: posterior mean outside HPD interval at {int(outside.sum())} "
                          "time points", stacklevel=3)


def summarize_draws(target: str, draws, level: float = 0.95) -> SummarySeries:
    """Per-column mean and HPD interval of a ``(D, N)`` draw matrix."""
    draws = np.asarray(draws, dtype=float)
    bounds = np.array([hpd_interval(draws[:, t], level) for t in range(draws.shape[1])])
    return SummarySeries(target, draws.mean(axis=0), bounds[:, 0], bounds[:, 1], level)


def parse_target(target: str, samples: PosteriorSamples):
    """Resolve ``"mu"``, ``"beta:<label>"`` or ``"pi:<node>,<node>"`` to a draw matrix."""
    if target == "mu":
        return samples.mu
    kind, _, arg = target.partition(":")
    if kind == "beta":
        labels = list(samples.predictor_labels)
        p = labels.index(arg) if arg in labels else int(arg)
        return samples.beta[:, p, :]
    if kind == "pi":
        a, b = (s.strip() for s in arg.split(","))
        labels = list(samples.node_labels)
        i = labels.index(a) if a in labels else int(a)
        j = labels.index(b) if b in labels else int(b)
        return samples.pi[:, edge_id(i, j), :]
    raise ValueError(f"unknown summary target {target!r}")


def summarize(samples: PosteriorSamples, targets=None, level: float = 0.95) -> list:
    """Posterior mean and HPD band per time point for each target.

    Defaults to ``mu`` and every ``beta_p``.
    """
    if samples.n_draws < HPD_MIN_SAMPLES:
        raise ValueError(f"need at least {HPD_MIN_SAMPLES} retained draws to summarize, "
                         f"have {samples.n_draws}")
    if targets is None:
        targets = ["mu"] + [f"beta:{lab}" for lab in samples.predictor_labels]
    return [summarize_draws(t, parse_target(t, samples), level) for t in targets]


def latent_energy(samples: PosteriorSamples) -> np.ndarray:
    """Posterior mean of ``sum_i sum_t x_ih(t)^2`` for each latent column."""
    return samples.x_energy.mean(axis=0)
