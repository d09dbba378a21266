"""OHLCV ingestion, the 13 raw / 52 enriched features, and causal PCA.

Raw feature layout (two assets, A and B, in panel order)::

    A_logret A_vol5 A_vol20 A_mom5 A_mom20
    B_logret B_vol5 B_vol20 B_mom5 B_mom20
    corr20 disp5 disp20

Returns are log returns of the adjusted close; volatilities are sample
standard deviations (ddof=1) of those returns; momentum is
``close[t] / close[t-k] - 1`` on the adjusted close; ``corr20`` is the 20-day
return correlation; ``disp5``/``disp20`` are trailing means of |r_A - r_B|.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataFormatError, InputError, InsufficientHistoryError

OHLCV_COLUMNS = ("Date", "Open", "High", "Low", "Close", "AdjClose", "Volume")
MIN_COMMON_DATES = 300
ENRICH_LOOKBACK = 20
ENRICH_STATS = ("mean", "std", "min", "max")


@dataclass
class PricePanel:
    assets: list[str]
    dates: np.ndarray  # datetime64[D], strictly increasing
    fields: dict[str, np.ndarray]  # asset -> (T, 6) array Open..Volume

    def __post_init__(self):
        if len(self.assets) < 2:
            raise InputError("a price panel needs at least two assets")
        if len(self.dates) > 1 and not np.all(np.diff(self.dates) > np.timedelta64(0, "D")):
            raise InputError("panel dates must be strictly increasing")

    def __len__(self):
        return len(self.dates)

    def column(self, asset: str, name: str) -> np.ndarray:
        return self.fields[asset][:, OHLCV_COLUMNS.index(name) - 1]

    def adj_close(self, asset: str) -> np.ndarray:
        return self.column(asset, "AdjClose")

    def returns(self) -> np.ndarray:
        """Log returns of every asset, (T, N) with a NaN first row."""
        r = np.full((len(self), len(self.assets)), np.nan)
        for j, a in enumerate(self.assets):
            r[1:, j] = np.diff(np.log(self.adj_close(a)))
        return r

    def slice(self, stop: int) -> "PricePanel":
        return PricePanel(self.assets, self.dates[:stop], {a: v[:stop] for a, v in self.fields.items()})

    def to_csv(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for a in self.assets:
            path = directory / f"{a}.csv"
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(OHLCV_COLUMNS)
                for d, row in zip(self.dates, self.fields[a]):
                    wr.writerow([str(d)] + [repr(float(v)) for v in row])
            paths.append(path)
        return paths


def _read_ohlcv(path: Path) -> tuple[list[np.datetime64], list[list[float]]]:
    if not path.exists():
        raise DataFormatError(f"{path}: file not found")
    dates, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(OHLCV_COLUMNS):
            raise DataFormatError(f"{path}: expected header {','.join(OHLCV_COLUMNS)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(OHLCV_COLUMNS):
                raise DataFormatError(f"{path}:{lineno}: expected {len(OHLCV_COLUMNS)} fields, got {len(rec)}")
            try:
                day = np.datetime64(dt.date.fromisoformat(rec[0].strip()), "D")
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad ISO date {rec[0]!r}") from None
            vals = []
            for cell in rec[1:]:
                cell = cell.strip()
                if cell == "" or cell.lower() in ("nan", "null"):
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: malformed numeric cell {cell!r}") from None
            dates.append(day)
            rows.append(vals)
    return dates, rows


def load_ohlcv(paths, min_dates: int = MIN_COMMON_DATES) -> PricePanel:
    """Load one CSV per asset onto the common calendar.

    ``paths`` is a mapping ``asset -> path`` or a sequence of paths (asset
    names taken from the file stems).  Dates where any asset lacks a close or
    adjusted close are dropped for every asset.
    """
    if not isinstance(paths, dict):
        paths = {Path(p).stem: p for p in paths}
    per_asset = {}
    for name, p in paths.items():
        dates, rows = _read_ohlcv(Path(p))
        order = np.argsort(np.array(dates, dtype="datetime64[D]"), kind="stable")
        d = np.array(dates, dtype="datetime64[D]")[order]
        v = np.array(rows, dtype=float).reshape(-1, 6)[order]
        if len(d) > 1 and np.any(np.diff(d) == np.timedelta64(0, "D")):
            raise DataFormatError(f"{p}: duplicate dates")
        keep = np.isfinite(v[:, 3]) & np.isfinite(v[:, 4])
        per_asset[name] = (d[keep], v[keep])
    common = None
    for d, _ in per_asset.values():
        common = d if common is None else np.intersect1d(common, d)
    if common is None or len(common) < min_dates:
        n = 0 if common is None else len(common)
        raise InsufficientHistoryError(f"only {n} common dates across assets (need {min_dates})")
    fields = {}
    for name, (d, v) in per_asset.items():
        fields[name] = v[np.searchsorted(d, common)]
    return PricePanel(list(per_asset), common, fields)


# --------------------------------------------------------------------------
# feature matrices
# --------------------------------------------------------------------------


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (T, F)
    columns: list[str]
    dates: np.ndarray
    valid_from: int

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["date"] + list(self.columns))
            for d, row in zip(self.dates, self.values):
                wr.writerow([str(d)] + ["" if not np.isfinite(v) else repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            dates, rows = [], []
            for rec in reader:
                dates.append(np.datetime64(rec[0], "D"))
                rows.append([float(c) if c else np.nan for c in rec[1:]])
        vals = np.array(rows, dtype=float)
        fin = np.all(np.isfinite(vals), axis=1)
        valid_from = int(np.argmax(fin)) if fin.any() else len(vals)
        return cls(vals, header[1:], np.array(dates), valid_from)


def _window(x: np.ndarray, w: int) -> np.ndarray:
    """(T - w + 1, w) trailing windows."""
    return sliding_window_view(x, w)


def rolling_stat(x, w: int, stat: str) -> np.ndarray:
    """Trailing-window statistic; NaN until a full window of finite values exists."""
    x = np.asarray(x, dtype=float)
    out = np.full(len(x), np.nan)
    if len(x) < w:
        return out
    W = _window(x, w)
    if stat == "mean":
        v = W.mean(axis=1)
    elif stat == "std":
        v = W.std(axis=1, ddof=1) if w > 1 else np.zeros(len(W))
        v = np.where(W.max(axis=1) == W.min(axis=1), 0.0, v)
    elif stat == "min":
        v = W.min(axis=1)
    elif stat == "max":
        v = W.max(axis=1)
    else:
        raise InputError(f"unknown rolling statistic {stat!r}")
    out[w - 1 :] = v
    return out


def rolling_corr(x, y, w: int) -> np.ndarray:
    """Trailing Pearson correlation; 0 when either window has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.full(len(x), np.nan)
    if len(x) < w:
        return out
    X, Y = _window(x, w), _window(y, w)
    xc = X - X.mean(axis=1, keepdims=True)
    yc = Y - Y.mean(axis=1, keepdims=True)
    sxx = np.sum(xc * xc, axis=1)
    syy = np.sum(yc * yc, axis=1)
    sxy = np.sum(xc * yc, axis=1)
    flat = (X.max(axis=1) == X.min(axis=1)) | (Y.max(axis=1) == Y.min(axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(flat, 0.0, sxy / np.sqrt(sxx * syy))
    c = np.where(np.isfinite(X).all(axis=1) & np.isfinite(Y).all(axis=1), c, np.nan)
    out[w - 1 :] = c
    return out


def raw_features(panel: PricePanel) -> FeatureMatrix:
    """The 13 raw features from the first two assets of ``panel``."""
    if len(panel) < 21:
        raise InsufficientHistoryError(f"raw features need >= 21 rows, got {len(panel)}")
    cols, names = [], []
    rets = {}
    for a in panel.assets[:2]:
        px = panel.adj_close(a)
        r = np.full(len(px), np.nan)
        r[1:] = np.diff(np.log(px))
        rets[a] = r
        mom = {}
        for k in (5, 20):
            m = np.full(len(px), np.nan)
            m[k:] = px[k:] / px[:-k] - 1.0
            mom[k] = m
        cols += [r, rolling_stat(r, 5, "std"), rolling_stat(r, 20, "std"), mom[5], mom[20]]
        names += [f"{a}_logret", f"{a}_vol5", f"{a}_vol20", f"{a}_mom5", f"{a}_mom20"]
    ra, rb = (rets[a] for a in panel.assets[:2])
    disp = np.abs(ra - rb)
    cols += [rolling_corr(ra, rb, 20), rolling_stat(disp, 5, "mean"), rolling_stat(disp, 20, "mean")]
    names += ["corr20", "disp5", "disp20"]
    return FeatureMatrix(np.column_stack(cols), names, panel.dates.copy(), 20)


def enrich(raw: FeatureMatrix, lookback: int = ENRICH_LOOKBACK) -> FeatureMatrix:
    """Rolling mean/std/min/max of every raw column (13 -> 52 columns)."""
    cols, names = [], []
    for j, c in enumerate(raw.columns):
        for stat in ENRICH_STATS:
            cols.append(rolling_stat(raw.values[:, j], lookback, stat))
            names.append(f"{c}_{stat}")
    return FeatureMatrix(np.column_stack(cols), names, raw.dates.copy(), raw.valid_from + lookback - 1)


def build_features(panel: PricePanel, lookback: int = ENRICH_LOOKBACK) -> FeatureMatrix:
    return enrich(raw_features(panel), lookback)


# --------------------------------------------------------------------------
# causal preprocessing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Preprocessor:
    mean: np.ndarray
    std: np.ndarray
    loadings: np.ndarray  # (p, F), orthonormal rows
    eigenvalues: np.ndarray  # (p,) descending
    fitted_through: int
    valid_from: int

    @property
    def p(self) -> int:
        return self.loadings.shape[0]


def causal_cutoff_index(dates, crisis_start, calendar_days: int = 10) -> int:
    """Last row dated on or before ``crisis_start - calendar_days``; -1 if none."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    limit = np.datetime64(crisis_start, "D") - np.timedelta64(calendar_days, "D")
    return int(np.searchsorted(dates, limit, side="right")) - 1


def fit_preprocessor(features: FeatureMatrix, cutoff_index: int, p: int) -> Preprocessor:
    """Standardise and PCA-fit on rows ``valid_from .. cutoff_index`` only."""
    lo = features.valid_from
    n_rows = cutoff_index - lo + 1
    if n_rows < p + 30:
        raise InsufficientHistoryError(
            f"preprocessor fit needs >= {p + 30} valid rows before the cutoff, got {max(n_rows, 0)}"
        )
    X = features.values[lo : cutoff_index + 1]
    if not np.all(np.isfinite(X)):
        raise InputError("non-finite feature values inside the fit window")
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    std = np.where(std > 0, std, 1.0)
    Z = (X - mean) / std
    cov = Z.T @ Z / (len(Z) - 1)
    lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
    lam, vec = lam[::-1], vec[:, ::-1]
    n_pos = int(np.sum(lam > 1e-12 * max(lam[0], 1e-300)))
    if n_pos < p:
        raise InputError(f"covariance has rank {n_pos}; at most p={n_pos} components are achievable")
    L = vec[:, :p].T.copy()
    pivot = np.argmax(np.abs(L), axis=1)
    L *= np.sign(L[np.arange(p), pivot])[:, None]
    return Preprocessor(mean, std, L, lam[:p].copy(), int(cutoff_index), lo)


def transform(prep: Preprocessor, features, return_flags: bool = False):
    """Standardise, project onto the loadings and scale rows to unit norm.

    Rows whose projection is exactly zero stay zero and are flagged.  Rows
    with missing features come out NaN.
    """
    X = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=float)
    if X.shape[-1] != len(prep.mean):
        raise InputError(f"feature count {X.shape[-1]} != fitted {len(prep.mean)}")
    Y = ((X - prep.mean) / prep.std) @ prep.loadings.T
    norm = np.linalg.norm(Y, axis=-1, keepdims=True)
    zero = (norm == 0)[..., 0]
    Y = np.where(norm > 0, Y / np.where(norm > 0, norm, 1.0), 0.0)
    if return_flags:
        return Y, zero
    return Y
