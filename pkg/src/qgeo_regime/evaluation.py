"""Effect sizes, rank tests, null models, walk-forward detection and the overlay.

Scores are always stress-oriented: a larger value means more stress, and a
positive Cohen's d means the crisis mean exceeds the normal mean.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .crises import EXTENSION_DAYS, CrisisWindow, crisis_mask, crisis_ranges
from .errors import CalibrationError, InputError, InsufficientHistoryError
from .features import causal_cutoff_index
from .observables import ChannelConfig
from .pipeline import PanelData, detector_name, score_detector
from .scoring import (
    TRADING_DAYS,
    adaptive_alarms,
    extract_alarms,
    far_threshold,
)

DEFAULT_SEED = 42
CONSISTENCY_PENALTY = 0.3
WALK_FORWARD_FAR = 2.0

# q_{0.05}(k, inf) / sqrt(2) for k = 2..50 (studentized range, infinite dof).
_NEMENYI_Q05 = (
    1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948320, 3.030878,
    3.101730, 3.163684, 3.218654, 3.268004, 3.312739, 3.353618, 3.391230,
    3.426041, 3.458425, 3.488685, 3.517073, 3.543799, 3.569040, 3.592946,
    3.615646, 3.637252, 3.657861, 3.677556, 3.696413, 3.714498, 3.731869,
    3.748578, 3.764672, 3.780193, 3.795179, 3.809664, 3.823680, 3.837254,
    3.850413, 3.863181, 3.875579, 3.887627, 3.899344, 3.910747, 3.921852,
    3.932673, 3.943224, 3.953518, 3.963566, 3.973379, 3.982969, 3.992343,
)  # fmt: skip


def _finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    return x[np.isfinite(x)]


# --------------------------------------------------------------------------
# effect sizes
# --------------------------------------------------------------------------


def cohens_d(crisis, normal) -> float:
    """(mean_c - mean_n) / pooled sd.

    Zero pooled variance gives 0.0 when the means coincide and NaN otherwise;
    :func:`cohens_d_flagged` reports the flag.
    """
    return cohens_d_flagged(crisis, normal)[0]


def cohens_d_flagged(crisis, normal) -> tuple[float, bool]:
    a, b = _finite(crisis), _finite(normal)
    if len(a) < 2 or len(b) < 2:
        return math.nan, True
    return _d_from_moments(a.mean(), a.var(ddof=1), len(a), b.mean(), b.var(ddof=1), len(b))


def _d_from_moments(m1, v1, n1, m2, v2, n2) -> tuple[float, bool]:
    pooled = math.sqrt(((n1 - 1) * v1 + (n2 - 1) * v2) / (n1 + n2 - 2))
    diff = m1 - m2
    if pooled == 0.0:
        return (0.0 if diff == 0.0 else math.nan), True
    return diff / pooled, False


def cliffs_delta(a, b) -> float:
    """(#{a_i > b_j} - #{a_i < b_j}) / (n_a n_b), via sorting."""
    a, b = _finite(a), np.sort(_finite(b))
    if len(a) == 0 or len(b) == 0:
        raise InputError("cliffs_delta needs non-empty samples")
    less = np.searchsorted(b, a, side="left")  # b_j < a_i
    greater = len(b) - np.searchsorted(b, a, side="right")  # b_j > a_i
    return int(np.sum(less) - np.sum(greater)) / (len(a) * len(b))


def block_length(n: int) -> int:
    """ceil(n ** (1/3)) computed in integers."""
    L = max(1, round(n ** (1.0 / 3.0)))
    while L**3 < n:
        L += 1
    while L > 1 and (L - 1) ** 3 >= n:
        L -= 1
    return L


def _block_indices(rng: np.random.Generator, n: int, B: int) -> np.ndarray:
    L = block_length(n)
    nb = -(-n // L)
    starts = rng.integers(0, n, size=(B, nb))
    idx = (starts[:, :, None] + np.arange(L)) % n
    return idx.reshape(B, nb * L)[:, :n]


@dataclass(frozen=True)
class BootstrapCI:
    low: float
    high: float
    undefined_fraction: float

    @property
    def flagged(self) -> bool:
        return self.undefined_fraction > 0.01


def block_bootstrap_ci(crisis, normal, B: int = 10000, seed: int = DEFAULT_SEED, level: float = 0.95, chunk: int = 500) -> BootstrapCI:
    """Percentile CI of Cohen's d under circular moving-block resampling.

    Each sample is resampled on its own with block length ceil(n^(1/3)).
    """
    a, b = _finite(crisis), _finite(normal)
    if len(a) < 4 or len(b) < 4:
        raise InputError("block bootstrap needs at least 4 points per sample")
    rng = np.random.default_rng(seed)
    ds = np.empty(B)
    for s in range(0, B, chunk):
        k = min(chunk, B - s)
        ra = a[_block_indices(rng, len(a), k)]
        rb = b[_block_indices(rng, len(b), k)]
        ma, mb = ra.mean(axis=1), rb.mean(axis=1)
        va, vb = ra.var(axis=1, ddof=1), rb.var(axis=1, ddof=1)
        pooled = np.sqrt(((len(a) - 1) * va + (len(b) - 1) * vb) / (len(a) + len(b) - 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            ds[s : s + k] = np.where(pooled > 0, (ma - mb) / pooled, np.where(ma == mb, 0.0, np.nan))
    ok = np.isfinite(ds)
    tail = 100.0 * (1.0 - level) / 2.0
    if not ok.any():
        return BootstrapCI(math.nan, math.nan, 1.0)
    lo, hi = np.percentile(ds[ok], [tail, 100.0 - tail])
    return BootstrapCI(float(lo), float(hi), float(1.0 - ok.mean()))


def welch_test(a, b) -> tuple[float, float, float]:
    """Welch t statistic, Welch-Satterthwaite dof and two-sided p."""
    a, b = _finite(a), _finite(b)
    if len(a) < 2 or len(b) < 2:
        return math.nan, math.nan, math.nan
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    diff = a.mean() - b.mean()
    if se2 == 0.0:
        return (0.0, math.nan, 1.0) if diff == 0.0 else (math.copysign(math.inf, diff), math.nan, 0.0)
    t = diff / math.sqrt(se2)
    dof = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return t, dof, float(2.0 * stats.t.sf(abs(t), dof))


def holm(pvalues) -> np.ndarray:
    """Holm step-down adjusted p-values; NaN entries stay NaN and are not counted."""
    p = np.asarray(pvalues, dtype=float)
    out = np.full(p.shape, np.nan)
    idx = np.nonzero(np.isfinite(p))[0]
    order = idx[np.argsort(p[idx], kind="stable")]
    m = len(order)
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[i]))
        out[i] = running
    return out


def welch_holm(samples) -> np.ndarray:
    """Holm-adjusted Welch p-values for a family of (crisis, normal) pairs."""
    return holm([welch_test(a, b)[2] for a, b in samples])


def permutation_test(crisis, normal, n_perm: int = 5000, seed: int = DEFAULT_SEED) -> float:
    """Two-sided permutation p on the mean difference, add-one smoothed."""
    a, b = _finite(crisis), _finite(normal)
    if len(a) + len(b) < 10 or len(a) == 0 or len(b) == 0:
        raise InputError("permutation test needs >= 10 points and two non-empty samples")
    pooled = np.concatenate([a, b])
    na, total = len(a), pooled.sum()
    nb = len(pooled) - na
    obs = abs(a.mean() - b.mean())
    tol = 1e-12 * max(obs, np.abs(pooled).max())
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_perm):
        sa = pooled[rng.permutation(len(pooled))[:na]].sum()
        if abs(sa / na - (total - sa) / nb) >= obs - tol:
            hits += 1
    return (1 + hits) / (n_perm + 1)


# --------------------------------------------------------------------------
# rank tests
# --------------------------------------------------------------------------


def nemenyi_q(k: int, alpha: float = 0.05) -> float:
    """Critical value q_alpha(k, inf) / sqrt(2) for the Nemenyi test."""
    if k < 2:
        raise InputError("Nemenyi needs k >= 2")
    if alpha == 0.05 and k <= 1 + len(_NEMENYI_Q05):
        return _NEMENYI_Q05[k - 2]
    return float(stats.studentized_range.ppf(1.0 - alpha, k, np.inf) / math.sqrt(2.0))


@dataclass(frozen=True)
class FriedmanResult:
    chi2: float
    p: float
    mean_ranks: np.ndarray
    cd: float
    k: int
    n: int


def friedman_nemenyi(scores, alpha: float = 0.05, higher_is_better: bool = True) -> FriedmanResult:
    """Friedman chi^2 over a (crises x methods) matrix plus the Nemenyi CD.

    Rank 1 is the best method in each row; ties get midranks.
    """
    X = np.asarray(scores, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 2:
        raise InputError("Friedman test needs >= 2 crises and >= 2 methods")
    if not np.all(np.isfinite(X)):
        raise InputError("Friedman score matrix must be finite")
    n, k = X.shape
    ranks = stats.rankdata(-X if higher_is_better else X, axis=1)
    R = ranks.mean(axis=0)
    chi2 = 12.0 * n / (k * (k + 1)) * float(np.sum((R - (k + 1) / 2.0) ** 2))
    p = float(stats.chi2.sf(chi2, k - 1))
    cd = nemenyi_q(k, alpha) * math.sqrt(k * (k + 1) / (6.0 * n))
    return FriedmanResult(chi2, p, R, cd, k, n)


# --------------------------------------------------------------------------
# null models
# --------------------------------------------------------------------------


@dataclass
class NullModelResult:
    real_median_d: float
    shift_null: np.ndarray
    window_null: np.ndarray

    @staticmethod
    def _percentile(null, real) -> float:
        null = null[np.isfinite(null)]
        return float(100.0 * np.mean(null <= real)) if len(null) else math.nan

    @staticmethod
    def _p(null, real) -> float:
        null = null[np.isfinite(null)]
        return float((1 + np.sum(null >= real)) / (len(null) + 1))

    @property
    def shift_percentile(self) -> float:
        return self._percentile(self.shift_null, self.real_median_d)

    @property
    def window_percentile(self) -> float:
        return self._percentile(self.window_null, self.real_median_d)

    @property
    def shift_p(self) -> float:
        return self._p(self.shift_null, self.real_median_d)

    @property
    def window_p(self) -> float:
        return self._p(self.window_null, self.real_median_d)

    def to_dict(self) -> dict:
        return {
            "real_median_d": self.real_median_d,
            "shift": {"percentile": self.shift_percentile, "p": self.shift_p, "null_median": _nanmedian(self.shift_null)},
            "window": {"percentile": self.window_percentile, "p": self.window_p, "null_median": _nanmedian(self.window_null)},
            "n_draws": len(self.shift_null),
        }


def _nanmedian(x) -> float:
    x = _finite(x)
    return float(np.median(x)) if len(x) else math.nan


def median_window_d(z, ranges) -> float:
    """Median over windows of d(window scores, scores outside every window)."""
    z = np.asarray(z, dtype=float)
    inside = np.zeros(len(z), bool)
    for lo, hi in ranges:
        inside[lo : hi + 1] = True
    normal = z[~inside]
    normal = normal[np.isfinite(normal)]
    if len(normal) < 2:
        return math.nan
    mn, vn, nn = normal.mean(), normal.var(ddof=1), len(normal)
    ds = []
    for lo, hi in ranges:
        c = _finite(z[lo : hi + 1])
        if len(c) >= 2:
            ds.append(_d_from_moments(c.mean(), c.var(ddof=1), len(c), mn, vn, nn)[0])
    return _nanmedian(ds)


def shifted_median_d(z, ranges, shift: int, start: int = 0) -> float:
    """Median window d after circularly shifting ``z[start:]`` by ``shift``."""
    z = np.asarray(z, dtype=float).copy()
    z[start:] = np.roll(z[start:], shift)
    return median_window_d(z, ranges)


def _random_windows(rng, lengths, lo: int, hi: int, tries: int = 1000):
    """Non-overlapping windows of the given lengths inside [lo, hi)."""
    for _ in range(tries):
        taken = np.zeros(hi - lo, bool)
        out = []
        for L in lengths:
            for _ in range(100):
                s = int(rng.integers(0, hi - lo - L + 1))
                if not taken[s : s + L].any():
                    taken[s : s + L] = True
                    out.append((lo + s, lo + s + L - 1))
                    break
            else:
                break
        if len(out) == len(lengths):
            return out
    return None


def null_models(z, ranges, n_draws: int = 1000, seed: int = DEFAULT_SEED) -> NullModelResult:
    """Circular-shift and random-window null distributions of the median d."""
    z = np.asarray(z, dtype=float)
    fin = np.nonzero(np.isfinite(z))[0]
    if len(fin) == 0:
        raise InputError("score series has no finite values")
    start = int(fin[0])
    ranges = [(max(lo, start), hi) for lo, hi in ranges if hi >= start]
    lengths = [hi - lo + 1 for lo, hi in ranges]
    span = len(z) - start
    if sum(lengths) > span // 2:
        raise InputError("windows cover too much of the calendar to place non-overlapping nulls")
    real = median_window_d(z, ranges)
    rng = np.random.default_rng(seed)
    shifts = rng.integers(1, span, size=n_draws)
    shift_null = np.array([shifted_median_d(z, ranges, int(s), start) for s in shifts])
    window_null = np.empty(n_draws)
    for i in range(n_draws):
        w = _random_windows(rng, lengths, start, len(z))
        if w is None:
            raise InputError("could not place non-overlapping random windows")
        window_null[i] = median_window_d(z, w)
    return NullModelResult(real, shift_null, window_null)


# --------------------------------------------------------------------------
# crisis separability
# --------------------------------------------------------------------------


@dataclass
class EffectSizeResult:
    cohens_d: float
    cliffs_delta: float
    ci_low: float
    ci_high: float
    n_crisis: int
    n_normal: int
    p_welch: float
    p_permutation: float
    flags: list[str] = field(default_factory=list)


def effect_size(crisis, normal, B: int = 10000, n_perm: int = 5000, seed: int = DEFAULT_SEED) -> EffectSizeResult:
    a, b = _finite(crisis), _finite(normal)
    d, d_flag = cohens_d_flagged(a, b)
    flags = ["zero_pooled_variance"] if d_flag and len(a) >= 2 and len(b) >= 2 else []
    if B > 0:
        ci = block_bootstrap_ci(a, b, B, seed)
        lo, hi = ci.low, ci.high
        if ci.flagged:
            flags.append("bootstrap_undefined")
    else:
        lo = hi = math.nan
    p_perm = permutation_test(a, b, n_perm, seed) if n_perm > 0 else math.nan
    return EffectSizeResult(d, cliffs_delta(a, b), lo, hi, len(a), len(b), welch_test(a, b)[2], p_perm, flags)


@dataclass
class EvalReport:
    methods: list[str]
    crises: list[CrisisWindow]
    entries: list[dict]
    summary: dict
    friedman: dict | None
    null: dict = field(default_factory=dict)

    def d_matrix(self) -> tuple[np.ndarray, list[str]]:
        """(crises x methods) d values over crises every method scored."""
        d = {(e["method"], e["crisis"]): e.get("cohens_d") for e in self.entries if e["status"] == "ok"}
        rows, names = [], []
        for c in self.crises:
            vals = [d.get((m, c.name)) for m in self.methods]
            if all(v is not None and np.isfinite(v) for v in vals):
                rows.append(vals)
                names.append(c.name)
        return np.array(rows, dtype=float).reshape(len(rows), len(self.methods)), names

    def to_dict(self) -> dict:
        return _clean(
            {
                "methods": self.methods,
                "crises": [c.to_dict() for c in self.crises],
                "entries": self.entries,
                "summary": self.summary,
                "friedman": self.friedman,
                "null_models": self.null,
            }
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n")

    def to_csv(self, path) -> None:
        cols = ["method", "crisis", "category", "status", "cohens_d", "cliffs_delta", "ci_low", "ci_high",
                "n_crisis", "n_normal", "p_welch", "p_holm", "p_permutation", "flags"]  # fmt: skip
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for e in self.entries:
                wr.writerow([_cell(e.get(c)) for c in cols])


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    if isinstance(v, (list, tuple)):
        return ";".join(map(str, v))
    return str(v)


def _clean(obj):
    """JSON-safe copy: NaN/inf -> None, numpy scalars -> Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.datetime64):
        return str(obj)
    return obj


def align_scores(dates, series_dates, z) -> np.ndarray:
    """Place an imported score column on ``dates``; missing days are NaN."""
    lookup = {str(d)[:10]: float(v) for d, v in zip(series_dates, z)}
    return np.array([lookup.get(str(d)[:10], np.nan) for d in dates])


def _crisis_job(data: PanelData, cfg, crisis: CrisisWindow):
    cutoff = causal_cutoff_index(data.dates, crisis.start)
    try:
        return score_detector(data, cfg, cutoff).z, None
    except InsufficientHistoryError as exc:
        return None, f"insufficient pre-crisis history: {exc}"


def crisis_separability(
    data: PanelData,
    channels=(),
    baselines=(),
    crises=(),
    external: dict | None = None,
    B: int = 10000,
    n_perm: int = 5000,
    seed: int = DEFAULT_SEED,
    workers: int = 1,
    extension: int = EXTENSION_DAYS,
) -> EvalReport:
    """Per-crisis causal separability of every method.

    Channels are refitted on data up to ten calendar days before each crisis
    start and then score the whole calendar.  Baselines are online and scored
    once.  Each crisis's extended window is compared against all scored days
    outside every extended window.
    """
    crises = list(crises)
    if not crises:
        raise InputError("no crisis windows to evaluate")
    T = len(data)
    ranges = {c.name: c.indices(data.dates, extension) for c in crises}
    outside = ~crisis_mask(data.dates, crises, extension)

    methods, jobs = [], []
    for cfg in channels:
        methods.append(detector_name(cfg))
        jobs += [(len(methods) - 1, cfg, c) for c in crises]
    base_z = {}
    for cfg in baselines:
        methods.append(detector_name(cfg))
        base_z[len(methods) - 1] = score_detector(data, cfg, T - 1).z
    for name, (sdates, z) in (external or {}).items():
        methods.append(name)
        base_z[len(methods) - 1] = align_scores(data.dates, sdates, z)
    if len(set(methods)) != len(methods):
        raise InputError(f"duplicate method names: {methods}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _crisis_job(data, j[1], j[2]), jobs))
    else:
        results = [_crisis_job(data, cfg, c) for _, cfg, c in jobs]
    per = {(j[0], j[2].name): r for j, r in zip(jobs, results)}
    for mi, z in base_z.items():
        for c in crises:
            per[(mi, c.name)] = (z, None)

    entries = []
    for mi, m in enumerate(methods):
        for c in crises:
            z, reason = per[(mi, c.name)]
            e = {"method": m, "crisis": c.name, "category": c.category}
            rng_ = ranges[c.name]
            if reason is None and rng_ is None:
                reason = "crisis outside calendar"
            if reason is None:
                lo, hi = rng_
                crisis_z, normal_z = _finite(z[lo : hi + 1]), _finite(z[outside])
                if len(crisis_z) < 4 or len(normal_z) < 4:
                    reason = "too few scored days"
            if reason is not None:
                e.update(status="skipped", reason=reason)
            else:
                res = effect_size(crisis_z, normal_z, B, n_perm, seed)
                e.update(status="ok", **asdict(res))
            entries.append(e)
        ok = [e for e in entries if e["method"] == m and e["status"] == "ok"]
        adj = holm([e["p_welch"] for e in ok])
        for e, p in zip(ok, adj):
            e["p_holm"] = float(p)

    report = EvalReport(methods, crises, entries, {}, None)
    D, names = report.d_matrix()
    fr = None
    if D.shape[0] >= 2 and D.shape[1] >= 2:
        r = friedman_nemenyi(D)
        fr = {"chi2": r.chi2, "p": r.p, "cd": r.cd, "k": r.k, "n": r.n, "crises": names}
        ranks = dict(zip(methods, r.mean_ranks.tolist()))
    else:
        ranks = {}
    for m in methods:
        ds = [e["cohens_d"] for e in entries if e["method"] == m and e["status"] == "ok"]
        report.summary[m] = {
            "median_d": _nanmedian(ds),
            "n_crises": len(ds),
            "n_skipped": sum(1 for e in entries if e["method"] == m and e["status"] != "ok"),
            "mean_rank": ranks.get(m),
        }
    report.friedman = fr
    return report


# --------------------------------------------------------------------------
# walk-forward
# --------------------------------------------------------------------------

HPO_GRID = {"n": (4, 8, 16), "p": (10, 15, 20), "method": ("random", "pca_inspired"), "w": (10, 20, 30)}


@dataclass
class WalkForwardResult:
    detector: str
    year: int
    strategy: str
    crisis: str | None
    detected: bool | None
    delay: int | None
    far: float
    far_days: float
    oos_d: float
    tau: float | None
    config: dict
    flags: list[str] = field(default_factory=list)


@dataclass
class WalkForwardReport:
    results: list[WalkForwardResult]

    def summary(self) -> dict:
        out = {}
        for det in dict.fromkeys(r.detector for r in self.results):
            for strat in dict.fromkeys(r.strategy for r in self.results if r.detector == det):
                rs = [r for r in self.results if r.detector == det and r.strategy == strat]
                hits = [r for r in rs if r.crisis is not None]
                years = {r.year: r.far for r in rs}
                delays = [r.delay for r in hits if r.detected]
                out[f"{det}/{strat}"] = {
                    "detected": sum(bool(r.detected) for r in hits),
                    "crises": len(hits),
                    "median_delay": float(np.median(delays)) if delays else None,
                    "median_far": _nanmedian(list(years.values())),
                    "mean_oos_d": _nanmean([r.oos_d for r in hits]),
                }
        return out

    def to_dict(self) -> dict:
        return _clean({"results": [asdict(r) for r in self.results], "summary": self.summary()})

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _nanmean(x) -> float:
    x = _finite([np.nan if v is None else v for v in x])
    return float(x.mean()) if len(x) else math.nan


def _year_of(d) -> int:
    return int(str(np.datetime64(d, "D"))[:4])


def _year_bounds(dates, year: int) -> tuple[int, int]:
    lo = int(np.searchsorted(dates, np.datetime64(f"{year}-01-01", "D")))
    hi = int(np.searchsorted(dates, np.datetime64(f"{year + 1}-01-01", "D")))
    return lo, hi


def _month_starts(dates, lo: int, hi: int) -> list[int]:
    months = np.asarray(dates[lo:hi], dtype="datetime64[M]")
    return [lo + i for i in range(len(months)) if i == 0 or months[i] != months[i - 1]]


def walk_forward_scores(data: PanelData, cfg, lo: int, hi: int, refit: str = "monthly") -> np.ndarray:
    """Out-of-sample z for rows ``lo .. hi-1``.

    Channels are refitted at the start of every month (or once, with
    ``refit="yearly"``) on rows strictly before that month; each month is
    scored with data up to its own last row only.
    """
    if not isinstance(cfg, ChannelConfig):
        return score_detector(data, cfg, lo - 1, hi).z[lo:hi]
    starts = _month_starts(data.dates, lo, hi) if refit == "monthly" else [lo]
    out = np.full(hi - lo, np.nan)
    for i, ms in enumerate(starts):
        me = starts[i + 1] if i + 1 < len(starts) else hi
        out[ms - lo : me - lo] = score_detector(data, cfg, ms - 1, me).z[ms:me]
    return out


def _grid_configs(base: ChannelConfig, grid: dict):
    for n in grid["n"]:
        for p in grid["p"]:
            for method in grid["method"]:
                if method != "random" and p > n * n - 1:
                    continue
                for w in grid["w"]:
                    try:
                        yield base.with_(n=n, p=p, method=method, w=w)
                    except InputError:
                        continue


def select_config(data: PanelData, base: ChannelConfig, crises, lo: int, grid: dict = HPO_GRID, extension: int = EXTENSION_DAYS):
    """Grid search on crises that ended before row ``lo``.

    Objective: mean d - 0.3 * std d over those crises, scored in-sample on
    the training rows with a single fit through ``lo - 1``.  Returns the
    chosen config and a flag list.
    """
    cutoff_day = data.dates[lo] if lo < len(data) else data.dates[-1] + np.timedelta64(1, "D")
    past = [c for c in crises if c.end < cutoff_day]
    ranges = crisis_ranges(data.dates[:lo], past, extension)
    if not ranges:
        return base, ["hpo_fallback_no_past_crises"]
    outside = ~crisis_mask(data.dates[:lo], past, extension)
    best, best_obj = None, -math.inf
    for cfg in _grid_configs(base, grid):
        try:
            z = score_detector(data, cfg, lo - 1, lo).z
        except (InsufficientHistoryError, InputError):
            continue
        normal = _finite(z[outside])
        ds = [cohens_d(_finite(z[a : b + 1]), normal) for a, b in ranges]
        ds = _finite(ds)
        if len(ds) == 0:
            continue
        obj = float(ds.mean() - CONSISTENCY_PENALTY * ds.std())
        if obj > best_obj:
            best, best_obj = cfg, obj
    if best is None:
        return base, ["hpo_fallback_infeasible"]
    return best, []


def _config_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def walk_forward(
    data: PanelData,
    detectors,
    crises,
    strategy: str = "fixed",
    start_year: int = 2005,
    end_year: int | None = None,
    hpo: dict | None = None,
    tau: float = 2.0,
    far_alpha: float = WALK_FORWARD_FAR,
    refit: str = "monthly",
    gap_days: int = 5,
    extension: int = EXTENSION_DAYS,
) -> WalkForwardReport:
    """Expanding-window, one-year-ahead detection evaluation.

    For each evaluation year the detector is fitted on earlier rows only,
    scored out of sample, thresholded by ``strategy`` and scored for
    detection (any alarm day inside a crisis's extended window), delay (first
    such day minus the crisis start, floored at 0), FAR (alarm events with
    onset on non-crisis days per 252 non-crisis days) and OOS d.
    """
    if strategy not in ("fixed", "far", "adaptive"):
        raise InputError(f"unknown threshold strategy {strategy!r}")
    crises = list(crises)
    dates = data.dates
    end_year = _year_of(dates[-1]) if end_year is None else end_year
    results = []
    for det in detectors:
        for year in range(start_year, end_year + 1):
            lo, hi = _year_bounds(dates, year)
            if hi - lo < 2 or lo < 1:
                continue
            flags = []
            cfg = det
            if hpo is not None and isinstance(det, ChannelConfig):
                cfg, f = select_config(data, det, crises, lo, hpo, extension)
                flags += f
            try:
                z_eval = walk_forward_scores(data, cfg, lo, hi, refit)
                z_train = score_detector(data, cfg, lo - 1, lo).z
                t = None
                if strategy == "far":
                    train_ranges = crisis_ranges(dates[:lo], crises, extension)
                    t = far_threshold(z_train, train_ranges, far_alpha, gap_days)
            except (InsufficientHistoryError, CalibrationError) as exc:
                results.append(
                    WalkForwardResult(detector_name(det), year, strategy, None, None, None, math.nan, math.nan,
                                      math.nan, None, _config_dict(cfg), flags + [f"skipped: {exc}"])  # fmt: skip
                )
                continue
            # alarms
            if strategy == "fixed":
                t = tau
                events = extract_alarms(z_eval, t, gap_days, "fixed")
            elif strategy == "far":
                events = extract_alarms(z_eval, t, gap_days, "far")
            else:
                z_all = np.concatenate([z_train, z_eval])
                events = [
                    replace(e, onset=e.onset - lo, end=e.end - lo)
                    for e in adaptive_alarms(z_all, gap_days=gap_days)
                    if e.onset >= lo
                ]
            active = np.zeros(hi - lo, bool)
            for e in events:
                active[e.onset : e.end + 1] = True
            in_crisis = crisis_mask(dates, crises, extension)[lo:hi]
            n_normal = int(np.sum(~in_crisis))
            false_events = sum(1 for e in events if not in_crisis[e.onset])
            far = false_events / (n_normal / TRADING_DAYS) if n_normal else math.nan
            far_days = (
                float(np.sum(active & ~in_crisis)) / (n_normal / TRADING_DAYS) if n_normal else math.nan
            )
            oos_d = cohens_d(z_eval[in_crisis], z_eval[~in_crisis])
            year_crises = [c for c in crises if _year_of(c.start) == year]
            base = dict(detector=detector_name(det), year=year, strategy=strategy, far=far, far_days=far_days,
                        oos_d=oos_d, tau=t, config=_config_dict(cfg))  # fmt: skip
            if not year_crises:
                results.append(WalkForwardResult(crisis=None, detected=None, delay=None, flags=list(flags), **base))
            for c in year_crises:
                r = c.indices(dates, extension)
                start_idx = int(np.searchsorted(dates, c.start))
                detected, delay = False, None
                if r is not None:
                    a, b = max(r[0], lo) - lo, min(r[1], hi - 1) - lo
                    hitdays = np.nonzero(active[a : b + 1])[0]
                    if len(hitdays):
                        detected = True
                        delay = max(0, int(a + hitdays[0] + lo - start_idx))
                results.append(
                    WalkForwardResult(crisis=c.name, detected=detected, delay=delay, flags=list(flags), **base)
                )
    return WalkForwardReport(results)


# --------------------------------------------------------------------------
# risk overlay
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OverlayResult:
    total_return: float
    sharpe: float
    max_drawdown: float
    time_in_cash: float
    equity: np.ndarray = field(repr=False, compare=False)

    def to_dict(self) -> dict:
        return _clean(
            {
                "total_return": self.total_return,
                "sharpe": self.sharpe,
                "max_drawdown": self.max_drawdown,
                "time_in_cash": self.time_in_cash,
            }
        )


def overlay_backtest(prices, z, tau: float = 2.0, cooldown: int = 60) -> OverlayResult:
    """Long by default; a score above ``tau`` at a close moves the book to cash
    for the next ``cooldown`` daily returns.  Signals during a cooldown are
    ignored; the rule re-arms once it expires.  Cash earns zero."""
    px = np.asarray(prices, dtype=float)
    z = np.asarray(z, dtype=float)
    if px.shape != z.shape or px.ndim != 1:
        raise InputError("prices and scores must be aligned 1-D arrays")
    if len(px) < 2:
        raise InputError("need at least two prices")
    r = px[1:] / px[:-1] - 1.0
    cash = np.zeros(len(r), bool)
    remaining = 0
    for t in range(len(px) - 1):
        # decision at close t applies to the return from t to t+1
        if remaining == 0 and np.isfinite(z[t]) and z[t] > tau:
            remaining = cooldown
        if remaining > 0:
            cash[t] = True
            remaining -= 1
    strat = np.where(cash, 0.0, r)
    equity = np.concatenate([[1.0], np.cumprod(1.0 + strat)])
    sd = strat.std(ddof=1) if len(strat) > 1 else 0.0
    sharpe = float(strat.mean() / sd * math.sqrt(TRADING_DAYS)) if sd > 0 else 0.0
    dd = 1.0 - equity / np.maximum.accumulate(equity)
    return OverlayResult(float(equity[-1] - 1.0), sharpe, float(dd.max()), float(cash.mean()), equity)
