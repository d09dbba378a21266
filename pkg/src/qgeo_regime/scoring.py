"""Causal z-scores, threshold calibration and alarm extraction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationError, InputError

Z_MAX = 10.0
SIGMA_FLOOR = 1e-12
TRADING_DAYS = 252


# --------------------------------------------------------------------------
# exact running moments
# --------------------------------------------------------------------------
#
# Means and variances below are the correctly rounded values of the exact
# rational quantities.  Each finite double is an integer multiple of 2^-E for
# a shared E, so sums of scaled integers are exact and a single int / int
# true division rounds once.  The result does not depend on summation order,
# which makes every prefix bit-stable.


def _scale_exponent(values: np.ndarray) -> int:
    E = 0
    for v in values:
        d = float(v).as_integer_ratio()[1]
        E = max(E, d.bit_length() - 1)
    return E


def _scaled(values: np.ndarray, E: int) -> list[int]:
    out = []
    for v in values:
        n, d = float(v).as_integer_ratio()
        out.append(n << (E - (d.bit_length() - 1)))
    return out


def rolling_exact_mean(raw, w: int) -> np.ndarray:
    """Mean of the finite values in ``raw[max(0, t-w+1) .. t]`` for every t.

    Early rows use whatever prefix is available; windows with no finite value
    give NaN.
    """
    r = np.asarray(raw, dtype=float)
    fin = np.isfinite(r)
    E = _scale_exponent(r[fin])
    ints = _scaled(np.where(fin, r, 0.0), E)
    P = [0]
    C = [0]
    for v, f in zip(ints, fin):
        P.append(P[-1] + v)
        C.append(C[-1] + int(f))
    den = 1 << E
    out = np.full(len(r), np.nan)
    for t in range(len(r)):
        lo = max(0, t - w + 1)
        c = C[t + 1] - C[lo]
        if c:
            out[t] = (P[t + 1] - P[lo]) / (c * den)
    return out


def expanding_exact_moments(s, start: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, sample std and count of the finite values in ``s[0 .. t-1]``.

    Entries for t < ``start`` are left NaN (count still reported).
    """
    s = np.asarray(s, dtype=float)
    fin = np.isfinite(s)
    E = _scale_exponent(s[fin])
    ints = _scaled(np.where(fin, s, 0.0), E)
    T = len(s)
    mu = np.full(T, np.nan)
    sd = np.full(T, np.nan)
    cnt = np.zeros(T, dtype=int)
    S1 = S2 = 0
    c = 0
    den1 = 1 << E
    den2 = 1 << (2 * E)
    for t in range(T):
        cnt[t] = c
        if t >= start and c >= 2:
            mu[t] = S1 / (c * den1)
            var = (c * S2 - S1 * S1) / (c * (c - 1) * den2)
            sd[t] = math.sqrt(var)
        if fin[t]:
            v = ints[t]
            S1 += v
            S2 += v * v
            c += 1
    return mu, sd, cnt


# --------------------------------------------------------------------------
# score series
# --------------------------------------------------------------------------


@dataclass
class ScoreSeries:
    channel: str
    raw: np.ndarray
    smoothed: np.ndarray
    z: np.ndarray
    w: int
    m: int
    params: dict = field(default_factory=dict)

    @property
    def flags(self) -> np.ndarray:
        """True where z is undefined."""
        return ~np.isfinite(self.z)

    def __len__(self):
        return len(self.z)

    def to_csv(self, path, dates) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["date", "raw", "smoothed", "z", "flags"])
            for d, r, s, z, f in zip(dates, self.raw, self.smoothed, self.z, self.flags):
                wr.writerow([str(d)[:10], _fmt(r), _fmt(s), _fmt(z), int(f)])

    @classmethod
    def from_csv(cls, path, channel: str | None = None) -> tuple["ScoreSeries", list[str]]:
        """Read a score CSV.  Only ``date`` and ``z`` are required columns."""
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or "date" not in rows[0] or "z" not in rows[0]:
            raise InputError(f"{path}: score CSV needs at least 'date' and 'z' columns")

        def col(name):
            if name not in rows[0]:
                return np.full(len(rows), np.nan)
            return np.array([_parse(r[name]) for r in rows])

        z = col("z")
        dates = [r["date"] for r in rows]
        return cls(channel or path.stem, col("raw"), col("smoothed"), z, 1, 0), dates


def _fmt(v) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def _parse(s: str) -> float:
    s = s.strip()
    return float(s) if s and s.lower() != "nan" else np.nan


def causal_zscore(raw, w: int = 20, m: int = 60, channel: str = "") -> ScoreSeries:
    """Smooth with a trailing mean, then standardise by strictly past moments.

    ``z[t]`` for ``t >= m`` uses the mean and sample std of ``smoothed[0..t-1]``.
    When that std is below 1e-12 the score is 0 if the smoothed value equals
    the past mean and +/-10 otherwise.
    """
    raw = np.asarray(raw, dtype=float)
    if w < 1 or m < 2:
        raise InputError(f"need w >= 1 and m >= 2, got w={w}, m={m}")
    s = rolling_exact_mean(raw, w)
    mu, sd, _ = expanding_exact_moments(s, start=m)
    z = np.full(len(raw), np.nan)
    ok = np.isfinite(s) & np.isfinite(mu)
    for t in np.nonzero(ok)[0]:
        diff = s[t] - mu[t]
        if sd[t] < SIGMA_FLOOR:
            z[t] = 0.0 if s[t] == mu[t] else math.copysign(Z_MAX, diff)
        else:
            z[t] = diff / sd[t]
    return ScoreSeries(channel, raw, s, z, w, m)


# --------------------------------------------------------------------------
# alarms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AlarmEvent:
    onset: int
    peak_z: float
    duration: int  # number of alarm-active days in the event
    mechanism: str  # fixed | far | quantile | velocity
    end: int


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    m = np.concatenate([[False], np.asarray(mask, bool), [False]])
    d = np.diff(m.astype(np.int8))
    starts = np.nonzero(d == 1)[0]
    ends = np.nonzero(d == -1)[0] - 1
    return list(zip(starts.tolist(), ends.tolist()))


def _merged_runs(active: np.ndarray, gap_days: int) -> list[tuple[int, int]]:
    out: list[list[int]] = []
    for a, b in _runs(active):
        if out and a - out[-1][1] - 1 < gap_days:
            out[-1][1] = b
        else:
            out.append([a, b])
    return [tuple(r) for r in out]


def _events(active: np.ndarray, z: np.ndarray, gap_days: int, tag) -> list[AlarmEvent]:
    events = []
    for a, b in _merged_runs(active, gap_days):
        seg = active[a : b + 1]
        zs = z[a : b + 1][seg]
        mech = tag(a) if callable(tag) else tag
        events.append(AlarmEvent(a, float(np.max(zs)), int(seg.sum()), mech, b))
    return events


def extract_alarms(z, tau: float, gap_days: int = 5, mechanism: str = "fixed") -> list[AlarmEvent]:
    """Runs of ``z > tau``; runs separated by fewer than ``gap_days`` quiet days merge."""
    z = np.asarray(z, dtype=float)
    with np.errstate(invalid="ignore"):
        above = np.nan_to_num(z, nan=-np.inf) > tau
    return _events(above, z, gap_days, mechanism)


def count_events(above: np.ndarray, gap_days: int = 5) -> int:
    runs = _runs(above)
    if not runs:
        return 0
    starts = np.array([a for a, _ in runs])
    ends = np.array([b for _, b in runs])
    gaps = starts[1:] - ends[:-1] - 1
    return 1 + int(np.sum(gaps >= gap_days))


def _as_mask(length: int, crisis_windows) -> np.ndarray:
    if crisis_windows is None:
        return np.zeros(length, bool)
    arr = np.asarray(crisis_windows)
    if arr.dtype == bool and arr.shape == (length,):
        return arr.copy()
    mask = np.zeros(length, bool)
    for a, b in crisis_windows:
        mask[max(0, int(a)) : min(length, int(b) + 1)] = True
    return mask


def event_rate(z, tau: float, crisis_windows=None, gap_days: int = 5) -> float:
    """Alarm events per year over the non-crisis, defined part of ``z``."""
    z = np.asarray(z, dtype=float)
    normal = ~_as_mask(len(z), crisis_windows) & np.isfinite(z)
    if not normal.any():
        return float("nan")
    above = normal & (np.where(normal, z, -np.inf) > tau)
    return count_events(above, gap_days) / (normal.sum() / TRADING_DAYS)


def exceedance_rate(z, tau: float, crisis_windows=None) -> float:
    """Above-threshold normal days per year."""
    z = np.asarray(z, dtype=float)
    normal = ~_as_mask(len(z), crisis_windows) & np.isfinite(z)
    return float(np.sum(z[normal] > tau)) / (normal.sum() / TRADING_DAYS)


def far_threshold(
    z_train,
    crisis_windows=None,
    alpha: float = 1.0,
    gap_days: int = 5,
    min_normal: int = TRADING_DAYS,
) -> float:
    """Smallest threshold whose event rate is <= ``alpha`` per year.

    Crisis indices (a boolean mask or inclusive ``(start, end)`` index pairs)
    are removed first.  Candidates are the distinct normal z values.  Because
    merging can make the event count non-monotone in the threshold, the
    search runs on the running maximum of the rate taken from the top down,
    so every threshold at or above the answer also meets the target.
    """
    z = np.asarray(z_train, dtype=float)
    if alpha < 0:
        raise InputError("alpha must be nonnegative")
    normal = ~_as_mask(len(z), crisis_windows) & np.isfinite(z)
    n_normal = int(normal.sum())
    if n_normal < min_normal:
        raise CalibrationError(f"only {n_normal} normal points for calibration (need {min_normal})")
    zn = np.where(normal, z, -np.inf)
    cands = np.unique(z[normal])
    years = n_normal / TRADING_DAYS
    rates = np.array([count_events(zn > c, gap_days) / years for c in cands])
    envelope = np.maximum.accumulate(rates[::-1])[::-1]
    ok = np.nonzero(envelope <= alpha)[0]
    return float(cands[ok[0]])


def adaptive_alarms(
    z,
    smoothed=None,
    window: int = TRADING_DAYS,
    exclusion: int = 5,
    quantile: float = 0.95,
    persist: int = 3,
    velocity_sigma: float = 2.0,
    velocity_persist: int = 2,
    gap_days: int = 5,
) -> list[AlarmEvent]:
    """Rolling-quantile OR score-velocity alarms.

    Quantile rule: ``z[t]`` above the 95th percentile of ``z[t-exclusion-window
    .. t-exclusion-1]`` for ``persist`` consecutive days; the alarm is active
    from the day the run reaches ``persist``.  Velocity rule: the first
    difference of the smoothed score, z-scored against its own past, above
    ``velocity_sigma`` for ``velocity_persist`` consecutive days.
    """
    z = np.asarray(z, dtype=float)
    sm = z if smoothed is None else np.asarray(smoothed, dtype=float)
    T = len(z)
    exceed = np.zeros(T, bool)
    for t in range(window + exclusion, T):
        if not np.isfinite(z[t]):
            continue
        hist = z[t - exclusion - window : t - exclusion]
        hist = hist[np.isfinite(hist)]
        if hist.size >= window // 2:
            exceed[t] = z[t] > np.quantile(hist, quantile)
    q_active = _persisted(exceed, persist)

    v = np.full(T, np.nan)
    v[1:] = np.diff(sm)
    vz = causal_zscore(v, w=1, m=window).z
    fast = np.nan_to_num(vz, nan=-np.inf) > velocity_sigma
    v_active = _persisted(fast, velocity_persist)

    active = q_active | v_active
    return _events(active, z, gap_days, lambda i: "quantile" if q_active[i] else "velocity")


def _persisted(mask: np.ndarray, k: int) -> np.ndarray:
    """True from the k-th consecutive True day of each run onwards."""
    out = np.zeros_like(mask)
    run = 0
    for i, f in enumerate(mask):
        run = run + 1 if f else 0
        out[i] = run >= k
    return out
