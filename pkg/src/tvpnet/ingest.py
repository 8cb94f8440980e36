"""Build co-movement networks and cooperation covariates from text tables.

Input tables (comma separated, header required):

* returns: ``period,index,log_return``
* prices (optional convenience): ``period,index,price``
* events: ``period,country_a,country_b,channel,cooperation,conflict``

Interchange tables written and read here:

* network: ``t,i,j,y`` with ``y`` empty when missing
* covariates: ``t,i,j,predictor,value``

Periods are sortable strings (e.g. ``2004Q2``); all orderings are by label.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import DynamicNetwork, EdgeCovariates, edge_id, edge_index, n_edges

log = logging.getLogger(__name__)

CHANNELS = ("material", "verbal")


class InputError(ValueError):
    """Malformed input table; message names the file and line."""


class AlignmentError(ValueError):
    """Network and covariates share no usable nodes or time points."""


@dataclass(frozen=True)
class ReturnsTable:
    periods: tuple
    index_labels: tuple
    values: np.ndarray  # (V, T), NaN where missing

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)


@dataclass(frozen=True)
class EventCounts:
    """Cooperation/conflict counts per unordered country pair, period and channel.

    ``counts[channel]`` has shape ``(n_pairs, T, 2)`` ordered by
    :func:`tvpnet.model.edge_index` over ``countries``; the last axis is
    ``(cooperation, conflict)``. Absent pairs are zero.
    """

    periods: tuple
    countries: tuple
    counts: dict

    def net_series(self, channel: str) -> np.ndarray:
        """Cooperation minus conflict, shape ``(n_pairs, T)``."""
        if channel not in self.counts:
            return np.zeros((n_edges(len(self.countries)), len(self.periods)))
        c = self.counts[channel]
        return c[..., 0] - c[..., 1]


# --- table reading -----------------------------------------------------------------


def _read_table(path, required):
    path = os.fspath(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            return []
        missing = [c for c in required if c not in header]
        if missing:
            raise InputError(f"{path}: line 1: header is missing column(s) {', '.join(missing)}")
        pos = [header.index(c) for c in required]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) < len(header):
                raise InputError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(rec)}")
            rows.append((lineno, [rec[k].strip() for k in pos]))
    return rows


def _parse_float(text, path, lineno, column):
    if text == "" or text.upper() in ("NA", "NAN"):
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{path}: line {lineno}: cannot parse {column} value {text!r}") from None
    if not math.isfinite(v):
        raise InputError(f"{path}: line {lineno}: {column} must be finite, got {text!r}")
    return v


def _parse_count(text, path, lineno, column):
    try:
        v = int(text) if text else 0
    except ValueError:
        raise InputError(f"{path}: line {lineno}: {column} must be a non-negative integer, got {text!r}") from None
    if v < 0:
        raise InputError(f"{path}: line {lineno}: {column} must be non-negative, got {v}")
    return v


def _long_to_wide(rows, path, value_col):
    periods = sorted({r[0] for _, r in rows})
    labels = sorted({r[1] for _, r in rows})
    pi = {p: k for k, p in enumerate(periods)}
    li = {lab: k for k, lab in enumerate(labels)}
    values = np.full((len(labels), len(periods)), np.nan)
    seen = set()
    for lineno, (period, label, text) in rows:
        if (period, label) in seen:
            raise InputError(f"{path}: line {lineno}: duplicate row for {label} in {period}")
        seen.add((period, label))
        values[li[label], pi[period]] = _parse_float(text, path, lineno, value_col)
    return tuple(periods), tuple(labels), values


def read_returns(path) -> ReturnsTable:
    rows = _read_table(path, ("period", "index", "log_return"))
    if not rows:
        raise InputError(f"{path}: no return rows")
    periods, labels, values = _long_to_wide(rows, path, "log_return")
    return ReturnsTable(periods, labels, values)


def read_prices(path) -> ReturnsTable:
    """Read ``period,index,price`` and convert to log-returns ``log(p_t / p_{t-1})``."""
    rows = _read_table(path, ("period", "index", "price"))
    if not rows:
        raise InputError(f"{path}: no price rows")
    periods, labels, prices = _long_to_wide(rows, path, "price")
    if np.any(prices[~np.isnan(prices)] <= 0):
        raise InputError(f"{path}: prices must be positive")
    return returns_from_prices(ReturnsTable(periods, labels, prices))


def returns_from_prices(prices: ReturnsTable) -> ReturnsTable:
    if len(prices.periods) < 2:
        raise InputError("need at least two price periods to form returns")
    r = np.diff(np.log(prices.values), axis=1)
    return ReturnsTable(prices.periods[1:], prices.index_labels, r)


def read_events(path, periods=None) -> EventCounts:
    """Read aggregated event counts; pairs are normalized to lexicographic order.

    The period grid is the sorted union of the file's periods and
    ``periods``; quarters without rows count as zero.
    """
    rows = _read_table(path, ("period", "country_a", "country_b", "channel", "cooperation", "conflict"))
    countries = sorted({r[k] for _, r in rows for k in (1, 2)})
    file_periods = sorted({r[0] for _, r in rows})
    grid = tuple(sorted(set(file_periods) | set(periods or ())))
    pi = {p: k for k, p in enumerate(grid)}
    ci = {c: k for k, c in enumerate(countries)}
    counts = {}
    for lineno, (period, a, b, channel, coop, conf) in rows:
        if a == b:
            raise InputError(f"{path}: line {lineno}: self-pair {a}")
        if channel not in CHANNELS:
            raise InputError(f"{path}: line {lineno}: unknown channel {channel!r}")
        arr = counts.setdefault(channel, np.zeros((n_edges(len(countries)), len(grid), 2)))
        e = edge_id(ci[a], ci[b])
        arr[e, pi[period], 0] += _parse_count(coop, path, lineno, "cooperation")
        arr[e, pi[period], 1] += _parse_count(conf, path, lineno, "conflict")
    return EventCounts(grid, tuple(countries), counts)


# --- construction --------------------------------------------------------------------


def build_comovement(returns: ReturnsTable, zero_rule: str = "positive") -> DynamicNetwork:
    """``y_ij,t = 1`` iff returns of i and j share a sign at t.

    ``zero_rule="positive"`` treats an exact zero return as positive;
    ``"missing"`` marks edges touching a zero return as missing.
    """
    r = np.asarray(returns.values, dtype=float)
    V = r.shape[0]
    if V < 2 or r.shape[1] < 1:
        raise InputError("need at least two indices and one period")
    if zero_rule not in ("positive", "missing"):
        raise ValueError(f"unknown zero_rule {zero_rule!r}")
    sign = np.where(r >= 0, 1.0, -1.0)
    missing = np.isnan(r)
    if zero_rule == "missing":
        missing = missing | (r == 0)
    rows, cols = edge_index(V)
    y = (sign[rows] * sign[cols] > 0).astype(float)
    y[missing[rows] | missing[cols]] = np.nan
    return DynamicNetwork(y, returns.index_labels, returns.periods)


def standardized_increments(series) -> Optional[np.ndarray]:
    """First differences scaled by their sample (n-1) standard deviation.

    Returns ``None`` when the standard deviation is zero or undefined.
    """
    d = np.diff(np.asarray(series, dtype=float))
    if d.size < 2:
        return None
    sd = d.std(ddof=1)
    if not sd > 0:
        return None
    return d / sd


def build_covariate(events: EventCounts, channel: str) -> EdgeCovariates:
    """Binary 'substantial increment' indicator for one channel.

    The result lives on ``events.periods[1:]``: the value at period t refers
    to the change from t-1 to t, and is 1 iff the pair's standardized
    increment exceeds the mean increment over all pairs at t.
    """
    T = len(events.periods)
    if T < 2:
        raise InputError("need at least two periods of counts to form first differences")
    net = events.net_series(channel)
    E = net.shape[0]
    e = np.full((E, T - 1), np.nan)
    for k in range(E):
        inc = standardized_increments(net[k])
        if inc is not None:
            e[k] = inc
    z = threshold_indicators(e)
    return EdgeCovariates(z[None], (channel,), events.countries, events.periods[1:])


def threshold_indicators(e) -> np.ndarray:
    """1 where a pair's increment strictly exceeds the cross-pair mean at that time.

    Rows of NaN (degenerate pairs) are left out of the mean and get 0.
    """
    e = np.atleast_2d(np.asarray(e, dtype=float))
    z = np.zeros(e.shape)
    defined = ~np.isnan(e).any(axis=1)
    if defined.any():
        threshold = e[defined].mean(axis=0)
        z[defined] = (e[defined] > threshold[None, :]).astype(float)
    return z


def build_covariates(events: EventCounts, channels=CHANNELS) -> EdgeCovariates:
    parts = [build_covariate(events, ch) for ch in channels]
    z = np.concatenate([p.z for p in parts], axis=0)
    return EdgeCovariates(z, tuple(channels), events.countries, events.periods[1:])


def zero_covariates(net: DynamicNetwork, channels=CHANNELS) -> EdgeCovariates:
    return EdgeCovariates(np.zeros((len(channels), n_edges(net.V), net.N)), tuple(channels),
                          net.node_labels, net.periods)


# --- alignment -----------------------------------------------------------------------


@dataclass(frozen=True)
class ModelInputs:
    net: DynamicNetwork
    covs: EdgeCovariates
    holdout_truth: Optional[np.ndarray] = None  # (E,) responses masked at the last period
    holdout_period: Optional[str] = None


def _reindex_edges(old_labels, new_labels):
    pos = {lab: k for k, lab in enumerate(old_labels)}
    rows, cols = edge_index(len(new_labels))
    return np.array([edge_id(pos[new_labels[a]], pos[new_labels[b]]) for a, b in zip(rows, cols)], dtype=int)


def align(net: DynamicNetwork, covs: EdgeCovariates = None, holdout_last: bool = False) -> ModelInputs:
    """Restrict network and covariates to shared nodes and periods.

    Covariates built from first differences start one period after the
    counts; response periods that precede the covariate grid get ``z = 0``.
    Other response periods without covariates are dropped. With
    ``holdout_last`` the responses at the final period are masked and
    returned separately.
    """
    if covs is None:
        covs = EdgeCovariates.empty(net)
    cov_nodes = set(covs.node_labels)
    nodes = tuple(n for n in net.node_labels if n in cov_nodes)
    if len(nodes) < 2:
        raise AlignmentError("network and covariates share fewer than two nodes")
    cov_periods = {p: k for k, p in enumerate(covs.periods)}
    first = min(covs.periods) if covs.periods else None
    periods = tuple(p for p in net.periods if p in cov_periods or (first is not None and p < first))
    if not any(p in cov_periods for p in periods):
        raise AlignmentError("network and covariates share no time points")
    padded = [p for p in periods if p not in cov_periods]
    if padded:
        log.info("covariates set to 0 for %d leading period(s) before %s", len(padded), first)
    dropped = len(net.periods) - len(periods)
    if dropped or len(nodes) < net.V:
        warnings.warn(f"alignment kept {len(nodes)}/{net.V} nodes and {len(periods)}/{net.N} periods",
                      stacklevel=2)

    net_t = {p: k for k, p in enumerate(net.periods)}
    y = net.y[_reindex_edges(net.node_labels, nodes)][:, [net_t[p] for p in periods]]
    z_src = covs.z[:, _reindex_edges(covs.node_labels, nodes), :]
    z = np.zeros((covs.P, n_edges(len(nodes)), len(periods)))
    for k, p in enumerate(periods):
        if p in cov_periods:
            z[:, :, k] = z_src[:, :, cov_periods[p]]

    truth = period = None
    if holdout_last:
        y = y.copy()
        truth = y[:, -1].copy()
        period = periods[-1]
        y[:, -1] = np.nan
    return ModelInputs(
        DynamicNetwork(y, nodes, periods),
        EdgeCovariates(z, covs.predictor_labels, nodes, periods),
        truth,
        period,
    )


# --- interchange -----------------------------------------------------------------------


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_network(net: DynamicNetwork, path):
    rows, cols = edge_index(net.V)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "i", "j", "y"])
        for t, period in enumerate(net.periods):
            for e, (a, b) in enumerate(zip(rows, cols)):
                v = net.y[e, t]
                w.writerow([period, net.node_labels[a], net.node_labels[b], "" if np.isnan(v) else int(v)])


def _node_order(pairs):
    order = {}
    for a, b in pairs:
        for lab in (b, a):
            order.setdefault(lab, len(order))
    return tuple(order)


def read_network(path) -> DynamicNetwork:
    rows = _read_table(path, ("t", "i", "j", "y"))
    if not rows:
        raise InputError(f"{path}: empty network table")
    periods = tuple(dict.fromkeys(r[0] for _, r in rows))
    nodes = _node_order((r[1], r[2]) for _, r in rows)
    ni = {n: k for k, n in enumerate(nodes)}
    ti = {p: k for k, p in enumerate(periods)}
    y = np.full((n_edges(len(nodes)), len(periods)), np.nan)
    for lineno, (t, a, b, v) in rows:
        if a == b:
            raise InputError(f"{path}: line {lineno}: self-edge {a}")
        val = _parse_float(v, path, lineno, "y")
        if not (math.isnan(val) or val in (0.0, 1.0)):
            raise InputError(f"{path}: line {lineno}: y must be 0, 1 or empty, got {v!r}")
        y[edge_id(ni[a], ni[b]), ti[t]] = val
    return DynamicNetwork(y, nodes, periods)


def write_covariates(covs: EdgeCovariates, path):
    rows, cols = edge_index(covs.V)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "i", "j", "predictor", "value"])
        for t, period in enumerate(covs.periods):
            for e, (a, b) in enumerate(zip(rows, cols)):
                for p, lab in enumerate(covs.predictor_labels):
                    w.writerow([period, covs.node_labels[a], covs.node_labels[b], lab, _fmt(covs.z[p, e, t])])


def read_covariates(path) -> EdgeCovariates:
    rows = _read_table(path, ("t", "i", "j", "predictor", "value"))
    if not rows:
        raise InputError(f"{path}: empty covariate table")
    periods = tuple(dict.fromkeys(r[0] for _, r in rows))
    nodes = _node_order((r[1], r[2]) for _, r in rows)
    preds = tuple(dict.fromkeys(r[3] for _, r in rows))
    ni = {n: k for k, n in enumerate(nodes)}
    ti = {p: k for k, p in enumerate(periods)}
    pi = {p: k for k, p in enumerate(preds)}
    z = np.full((len(preds), n_edges(len(nodes)), len(periods)), np.nan)
    for lineno, (t, a, b, pred, v) in rows:
        if a == b:
            raise InputError(f"{path}: line {lineno}: self-edge {a}")
        val = _parse_float(v, path, lineno, "value")
        if math.isnan(val):
            raise InputError(f"{path}: line {lineno}: covariate value is missing")
        z[pi[pred], edge_id(ni[a], ni[b]), ti[t]] = val
    if np.isnan(z).any():
        raise InputError(f"{path}: covariate table does not cover every (predictor, pair, period)")
    return EdgeCovariates(z, preds, nodes, periods)
