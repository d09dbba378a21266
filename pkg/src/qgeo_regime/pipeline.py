"""Feature matrix -> causal score series, for channels and baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import BaselineConfig, run_baseline
from .features import FeatureMatrix, PricePanel, enrich, fit_preprocessor, raw_features, transform
from .observables import STRESS_SIGN, ChannelConfig, raw_series
from .scoring import ScoreSeries, causal_zscore


@dataclass
class PanelData:
    """Everything the scorers read from one price panel."""

    dates: np.ndarray
    returns: np.ndarray  # (T, N) log returns, row 0 NaN
    raw: FeatureMatrix
    features: FeatureMatrix

    @classmethod
    def from_panel(cls, panel: PricePanel) -> "PanelData":
        raw = raw_features(panel)
        return cls(panel.dates, panel.returns(), raw, enrich(raw))

    def __len__(self):
        return len(self.dates)


def _pad(values: np.ndarray, offset: int, length: int) -> np.ndarray:
    out = np.full(length, np.nan)
    out[offset : offset + len(values)] = values
    return out


def score_channel(features: FeatureMatrix, cfg: ChannelConfig, cutoff_index: int, stop: int | None = None) -> ScoreSeries:
    """Fit on rows up to ``cutoff_index``, score rows ``valid_from .. stop-1``.

    The returned series spans the whole calendar up to ``stop``; rows before
    the feature valid-from index are NaN.  ``smoothed`` and ``z`` are
    stress-oriented (sign flipped for channels that fall under stress) while
    ``raw`` keeps the channel's natural sign.
    """
    stop = len(features.values) if stop is None else stop
    prep = fit_preprocessor(features, cutoff_index, cfg.p)
    ops = cfg.operators(prep.eigenvalues)
    lo = features.valid_from
    Y = transform(prep, features.values[lo:stop])
    raw = raw_series(Y, cfg, ops)
    sc = causal_zscore(STRESS_SIGN[cfg.channel] * raw.values, w=cfg.w, m=cfg.m, channel=cfg.channel)
    params = dict(sc.params, n=cfg.n, p=cfg.p, method=cfg.method, seed=cfg.seed, cutoff_index=int(cutoff_index))
    return ScoreSeries(
        cfg.channel,
        _pad(raw.values, lo, stop),
        _pad(sc.smoothed, lo, stop),
        _pad(sc.z, lo, stop),
        cfg.w,
        cfg.m,
        params,
    )


def score_baseline(data: PanelData, cfg: BaselineConfig, stop: int | None = None) -> ScoreSeries:
    stop = len(data) if stop is None else stop
    return run_baseline(cfg, data.returns[:stop], data.raw.values[:stop])


def detector_name(cfg) -> str:
    return cfg.channel if isinstance(cfg, ChannelConfig) else cfg.method


def score_detector(data: PanelData, cfg, cutoff_index: int, stop: int | None = None) -> ScoreSeries:
    """Channels are fitted through ``cutoff_index``; baselines are online and ignore it."""
    if isinstance(cfg, ChannelConfig):
        return score_channel(data.features, cfg, cutoff_index, stop)
    return score_baseline(data, cfg, stop)
