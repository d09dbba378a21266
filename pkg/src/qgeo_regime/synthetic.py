"""Synthetic two-asset panels with planted variance regimes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crises import CrisisWindow
from .features import PricePanel


@dataclass
class PlantedPanel:
    panel: PricePanel
    crises: list[CrisisWindow]
    ranges: list[tuple[int, int]]  # inclusive planted rows
    returns: np.ndarray  # (T, 2) simple log returns, row 0 is 0


def business_days(start: str, count: int) -> np.ndarray:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(count), roll="forward")


def _panel_from_returns(dates, returns, assets=("A", "B")) -> PricePanel:
    fields = {}
    for j, a in enumerate(assets):
        close = 100.0 * np.exp(np.cumsum(returns[:, j]))
        opn = np.concatenate([[100.0], close[:-1]])
        hi = np.maximum(opn, close)
        lo = np.minimum(opn, close)
        vol = np.full(len(close), 1e6)
        fields[a] = np.column_stack([opn, hi, lo, close, close, vol])
    return PricePanel(list(assets), dates, fields)


def planted_panel(
    n_days: int = 2520,
    n_windows: int = 10,
    window_len: int = 63,
    sigma: float = 0.01,
    crisis_mult: float = 4.0,
    rho: float = 0.5,
    warmup: int = 504,
    seed: int = 42,
    start: str = "2000-01-03",
) -> PlantedPanel:
    """Gaussian returns with volatility ``crisis_mult * sigma`` inside
    ``n_windows`` evenly spaced windows after ``warmup`` calm days.

    ``n_windows=0`` gives a pure null segment from the same generator.
    """
    rng = np.random.default_rng(seed)
    dates = business_days(start, n_days)
    L = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    eps = rng.standard_normal((n_days, 2)) @ L.T
    scale = np.full(n_days, sigma)
    ranges = []
    if n_windows:
        spacing = (n_days - warmup) // n_windows
        if spacing <= window_len:
            raise ValueError("windows do not fit in the requested length")
        for i in range(n_windows):
            lo = warmup + i * spacing + (spacing - window_len) // 2
            ranges.append((lo, lo + window_len - 1))
            scale[lo : lo + window_len] = crisis_mult * sigma
    r = eps * scale[:, None]
    r[0] = 0.0
    crises = [
        CrisisWindow(f"planted_{i:02d}", dates[lo], dates[hi], "Conventional") for i, (lo, hi) in enumerate(ranges)
    ]
    return PlantedPanel(_panel_from_returns(dates, r), crises, ranges, r)
