"""Activity error rate, channel NMSE and Monte-Carlo aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

# Written into run metadata so that output files describe themselves.
METRIC_DEFINITIONS = {
    "aer": "(missed detections + false alarms) / K over all K devices",
    "aer_center": "AER over devices within center_fraction * footprint_radius of their cell nadir",
    "aer_edge": "AER over the remaining (cell-edge) devices",
    "nmse_db": "10*log10( sum_{active k, p, b} |h_est - h|^2 / sum_{active k, p, b} |h|^2 ); "
               "missed devices count with h_est = 0, false alarms are excluded",
    "pilot_duration_s": "t_p * (n_cp + p_dft) / bandwidth_hz",
    "ci": "normal-approximation 95% half-width 1.96 * s / sqrt(n); n <= 30 flagged small_sample",
}

SMALL_SAMPLE = 30


@dataclass
class TrialMetrics:
    aer: float
    aer_center: float | None
    aer_edge: float | None
    nmse_linear: float | None
    missed: int
    false_alarms: int
    pilot_duration_s: float
    detector_rounds: int

    @property
    def nmse_db(self) -> float | None:
        if self.nmse_linear is None:
            return None
        return 10 * math.log10(self.nmse_linear) if self.nmse_linear > 0 else -math.inf


@dataclass
class MetricSummary:
    mean: float | None
    half_width: float | None
    n: int

    @property
    def low(self) -> float | None:
        return None if self.mean is None else self.mean - self.half_width

    @property
    def high(self) -> float | None:
        return None if self.mean is None else self.mean + self.half_width


@dataclass
class SweepPoint:
    metrics: dict[str, MetricSummary]
    n_trials: int

    @property
    def small_sample(self) -> bool:
        return self.n_trials <= SMALL_SAMPLE

    def __getitem__(self, name: str) -> MetricSummary:
        return self.metrics[name]


def activity_error_rate(truth, verdict) -> tuple[float, int, int]:
    """``(aer, missed, false_alarms)`` for boolean per-device vectors."""
    truth = _as_mask(truth)
    verdict = np.asarray(verdict, dtype=bool)
    if truth.shape != verdict.shape:
        raise ValueError(f"truth has {truth.size} devices, verdict {verdict.size}")
    missed = int(np.sum(truth & ~verdict))
    false_alarms = int(np.sum(~truth & verdict))
    k = truth.size
    return ((missed + false_alarms) / k if k else 0.0), missed, false_alarms


def channel_nmse(h_true: np.ndarray, h_est: np.ndarray, truth) -> float | None:
    """NMSE over the truly active devices; ``None`` when no device is active.

    Channel arrays are ``(P, B, K, N_r)``.
    """
    if h_true.shape != h_est.shape:
        raise ValueError(f"shape mismatch {h_true.shape} vs {h_est.shape}")
    act = _as_mask(truth)
    if not act.any():
        return None
    ht = h_true[:, :, act]
    den = float(np.sum(np.abs(ht) ** 2))
    if den == 0:
        return None
    return float(np.sum(np.abs(h_est[:, :, act] - ht) ** 2)) / den


def region_breakdown(truth, verdict, center) -> tuple[float | None, float | None]:
    """AER within the center and edge populations (``None`` for an empty region)."""
    truth = _as_mask(truth)
    verdict = np.asarray(verdict, dtype=bool)
    center = np.asarray(center, dtype=bool)
    out = []
    for region in (center, ~center):
        out.append(activity_error_rate(truth[region], verdict[region])[0] if region.any() else None)
    return out[0], out[1]


def summarize(values: Iterable[float | None]) -> MetricSummary:
    vals = np.array([v for v in values if v is not None and np.isfinite(v)], dtype=float)
    n = vals.size
    if n == 0:
        return MetricSummary(None, None, 0)
    hw = 1.96 * vals.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return MetricSummary(float(vals.mean()), float(hw), n)


def monte_carlo_aggregate(trials: Sequence[TrialMetrics | dict]) -> SweepPoint:
    """Per-metric mean and 95% half-width over a list of trials."""
    if not trials:
        raise ValueError("need at least one trial")
    rows = [_as_dict(t) for t in trials]
    names = list(rows[0])
    return SweepPoint({name: summarize(r[name] for r in rows) for name in names}, len(rows))


def cis_disjoint(a: MetricSummary, b: MetricSummary) -> bool:
    """True when the two confidence intervals do not overlap."""
    return a.high < b.low or b.high < a.low


def _as_dict(t) -> dict:
    if isinstance(t, dict):
        return t
    d = {f.name: getattr(t, f.name) for f in fields(t)}
    d["nmse_db"] = t.nmse_db
    return d


def _as_mask(truth) -> np.ndarray:
    if hasattr(truth, "mask"):
        return truth.mask
    return np.asarray(truth, dtype=bool)
