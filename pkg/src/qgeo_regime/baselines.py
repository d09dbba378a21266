"""Classical unsupervised comparators on the same calendar as the channels.

All four produce a :class:`~qgeo_regime.scoring.ScoreSeries` and are causal:
the value at row t only reads rows up to t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError
from .features import rolling_stat
from .scoring import ScoreSeries, causal_zscore

BASELINES = ("rolling_vol_z", "cusum", "absorption_ratio", "turbulence")
TURBULENCE_RIDGE = 1e-6


@dataclass(frozen=True)
class BaselineConfig:
    method: str
    vol_window: int = 20
    k: float = 0.5
    burn_in: int = 60
    corr_window: int = 250
    min_history: int = 60
    m: int = 60
    w: int | None = None  # smoothing window; None picks the per-method default

    def __post_init__(self):
        if self.method not in BASELINES:
            raise InputError(f"unknown baseline {self.method!r}")
        if not 10 <= self.vol_window <= 30:
            raise InputError(f"vol_window {self.vol_window} outside [10, 30]")
        if not 0.3 <= self.k <= 1.0:
            raise InputError(f"CUSUM k={self.k} outside [0.3, 1.0]")
        if not 30 <= self.burn_in <= 90:
            raise InputError(f"CUSUM burn_in={self.burn_in} outside [30, 90]")
        if self.corr_window < 2 or self.min_history < 2 or self.m < 2:
            raise InputError("windows must be >= 2")

    @property
    def smoothing(self) -> int:
        if self.w is not None:
            return self.w
        return 20 if self.method == "turbulence" else 1


def rolling_vol_z(returns, vol_window: int = 20, m: int = 60, w: int = 1) -> ScoreSeries:
    """Rolling standard deviation of returns, then the causal z-score."""
    r = np.asarray(returns, dtype=float)
    if r.ndim == 2:
        r = r[:, 0]
    vol = rolling_stat(r, vol_window, "std")
    out = causal_zscore(vol, w=w, m=m, channel="rolling_vol_z")
    out.params.update(vol_window=vol_window)
    return out


def cusum_statistic(series, k: float = 0.5, burn_in: int = 60, standardize: bool = True) -> np.ndarray:
    """Upper one-sided CUSUM path.

    With ``standardize`` the input is mapped to u = |x - mu| / sigma using the
    moments of the first ``burn_in`` rows; otherwise the input is used as u.
    S is zero through the burn-in and then follows
    ``S(t) = max(0, S(t-1) + u(t) - k)``.  Missing u carries S forward.
    """
    x = np.asarray(series, dtype=float)
    if len(x) <= burn_in:
        raise InputError(f"CUSUM needs more than burn_in={burn_in} rows, got {len(x)}")
    if standardize:
        head = x[:burn_in]
        head = head[np.isfinite(head)]
        if len(head) < 2:
            raise InputError("burn-in period has fewer than two finite values")
        sd = head.std(ddof=1)
        u = np.abs(x - head.mean()) / (sd if sd > 0 else 1.0)
    else:
        u = x
    S = np.zeros(len(x))
    s = 0.0
    for t in range(burn_in, len(x)):
        if np.isfinite(u[t]):
            s = max(0.0, s + (u[t] - k))
        S[t] = s
    return S


def cusum(series, k: float = 0.5, burn_in: int = 60, m: int = 60, w: int = 1, standardize: bool = True) -> ScoreSeries:
    S = cusum_statistic(series, k, burn_in, standardize)
    out = causal_zscore(S, w=w, m=max(m, burn_in), channel="cusum")
    out.params.update(k=k, burn_in=burn_in)
    return out


def absorption_ratio_raw(returns, corr_window: int = 250) -> np.ndarray:
    """lambda_max / N of the trailing correlation matrix; NaN where undefined.

    A window with a zero-variance asset or a missing value is skipped (NaN).
    """
    R = np.asarray(returns, dtype=float)
    if R.ndim != 2 or R.shape[1] < 2:
        raise InputError("absorption ratio needs a (T, N>=2) returns panel")
    T, N = R.shape
    out = np.full(T, np.nan)
    if T < corr_window:
        return out
    W = sliding_window_view(R, corr_window, axis=0)  # (T', N, cw)
    C = W - W.mean(axis=2, keepdims=True)
    cov = np.einsum("tic,tjc->tij", C, C)
    var = np.einsum("tii->ti", cov)
    ok = np.all(np.isfinite(W), axis=(1, 2)) & np.all(var > 0, axis=1)
    if ok.any():
        sd = np.sqrt(var[ok])
        corr = cov[ok] / (sd[:, :, None] * sd[:, None, :])
        lam = np.linalg.eigvalsh(corr)
        ar = lam[:, -1] / N
        vals = np.full(len(W), np.nan)
        vals[ok] = np.clip(ar, 1.0 / N, 1.0)
        out[corr_window - 1 :] = vals
    return out


def absorption_ratio(returns, corr_window: int = 250, m: int = 60, w: int = 1) -> ScoreSeries:
    raw = absorption_ratio_raw(returns, corr_window)
    out = causal_zscore(raw, w=w, m=max(m, corr_window), channel="absorption_ratio")
    out.params.update(corr_window=corr_window)
    return out


def turbulence_raw(features, min_history: int = 60, ridge: float = TURBULENCE_RIDGE) -> np.ndarray:
    """Mahalanobis distance of each row to the expanding past mean/covariance.

    Only strictly earlier fully finite rows enter the moments, which are kept
    with Welford updates.  The covariance (ddof=1) is regularised with
    ``ridge * trace / F`` on the diagonal.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T, F = X.shape
    out = np.full(T, np.nan)
    mean = np.zeros(F)
    M2 = np.zeros((F, F))
    count = 0
    for t in range(T):
        x = X[t]
        finite = bool(np.all(np.isfinite(x)))
        if finite and count >= max(min_history, 2):
            cov = M2 / (count - 1)
            cov = cov + (ridge * np.trace(cov) / F) * np.eye(F)
            dx = x - mean
            try:
                d = float(dx @ np.linalg.solve(cov, dx))
            except np.linalg.LinAlgError:
                d = np.nan
            out[t] = max(d, 0.0) if np.isfinite(d) else np.nan
        if finite:
            count += 1
            delta = x - mean
            mean = mean + delta / count
            M2 = M2 + np.outer(delta, x - mean)
    return out


def turbulence(features, min_history: int = 60, m: int = 60, w: int = 20, ridge: float = TURBULENCE_RIDGE) -> ScoreSeries:
    raw = turbulence_raw(features, min_history, ridge)
    out = causal_zscore(raw, w=w, m=m, channel="turbulence")
    out.params.update(min_history=min_history, ridge=ridge)
    return out


def run_baseline(cfg: BaselineConfig, returns, features) -> ScoreSeries:
    """Dispatch on ``cfg.method``; ``returns`` is (T, N) log returns, ``features`` (T, F)."""
    R = np.asarray(returns, dtype=float)
    if cfg.method == "rolling_vol_z":
        return rolling_vol_z(R[:, 0], cfg.vol_window, cfg.m, cfg.smoothing)
    if cfg.method == "cusum":
        return cusum(R[:, 0], cfg.k, cfg.burn_in, cfg.m, cfg.smoothing)
    if cfg.method == "absorption_ratio":
        return absorption_ratio(R, cfg.corr_window, cfg.m, cfg.smoothing)
    return turbulence(features, cfg.min_history, cfg.m, cfg.smoothing)
