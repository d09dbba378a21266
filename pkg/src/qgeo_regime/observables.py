"""Raw observable series for the seven geometric channels.

Every function takes the embedded series (``T x p`` rows, already
standardised, projected and unit-normalised) and returns a :class:`RawSeries`
whose undefined entries are NaN with ``valid`` False.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .embedding import DEFAULT_SEED, DEGENERACY_TOL, OperatorSet, build_operators, hamiltonians, spectra
from .errors import BipartitionError, InputError
from .geometry import DEFAULT_EPS, RANK_TOL, berry_path, metric_pt_path
from .hermitian import partial_trace, purity

CHANNELS = (
    "berry_rate",
    "spectral_entropy",
    "ham_sensitivity",
    "reduced_purity",
    "qfi_logdet",
    "multilag_fidelity",
    "ground_energy",
)

# Channels whose value falls under stress are negated before z-scoring so that
# a high score always means stress.
STRESS_SIGN = {c: 1.0 for c in CHANNELS}
STRESS_SIGN["reduced_purity"] = -1.0
STRESS_SIGN["multilag_fidelity"] = -1.0


@dataclass(frozen=True)
class ChannelConfig:
    channel: str
    n: int = 8
    p: int = 10
    method: str = "random"
    eps: float = DEFAULT_EPS
    lags: int = 5
    bipartition: tuple[int, int] | None = None
    pair: tuple[int, int] = (0, 1)
    w: int = 10
    m: int = 60
    seed: int = DEFAULT_SEED
    seed_offset: int = 0
    basis: str = "gellmann"

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise InputError(f"unknown channel {self.channel!r}")
        if self.channel == "reduced_purity":
            dA, dB = self.dims
            if dA * dB != self.n:
                raise BipartitionError(f"bipartition {dA}x{dB} does not match n={self.n}")
        if self.channel == "berry_rate" and max(self.pair) >= self.p:
            raise InputError(f"curvature pair {self.pair} out of range for p={self.p}")
        if self.lags < 1:
            raise InputError("lags must be >= 1")

    @property
    def dims(self) -> tuple[int, int]:
        if self.bipartition is not None:
            return tuple(self.bipartition)
        if self.n % 2:
            raise BipartitionError(f"reduced purity needs even n, got {self.n}")
        return (2, self.n // 2)

    def with_(self, **kw) -> "ChannelConfig":
        return replace(self, **kw)

    def operators(self, pca_eigenvalues=None) -> OperatorSet:
        lam = None if pca_eigenvalues is None else np.asarray(pca_eigenvalues)[: self.p]
        return build_operators(self.method, self.n, self.p, self.seed, self.seed_offset, lam, self.basis)


DEFAULT_CONFIGS = {
    "berry_rate": ChannelConfig("berry_rate", n=6, p=8, w=15, method="random"),
    "spectral_entropy": ChannelConfig("spectral_entropy"),
    "ham_sensitivity": ChannelConfig("ham_sensitivity"),
    "reduced_purity": ChannelConfig("reduced_purity"),
    "qfi_logdet": ChannelConfig("qfi_logdet"),
    "multilag_fidelity": ChannelConfig("multilag_fidelity"),
    "ground_energy": ChannelConfig("ground_energy"),
}


@dataclass
class RawSeries:
    channel: str
    values: np.ndarray
    undefined_prefix: int = 0
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.valid is None:
            self.valid = np.isfinite(self.values)

    def __len__(self):
        return len(self.values)

    def oriented(self) -> np.ndarray:
        """Values multiplied by the channel's stress sign."""
        return STRESS_SIGN[self.channel] * self.values


def _points(embedded, ops: OperatorSet) -> np.ndarray:
    X = np.asarray(embedded, dtype=float)
    if X.ndim != 2 or X.shape[1] != ops.p:
        raise InputError(f"embedded series must be T x {ops.p}, got {X.shape}")
    return X


def _resolve(cfg: ChannelConfig, ops: OperatorSet | None) -> OperatorSet:
    if ops is None:
        ops = cfg.operators()
    if ops.n != cfg.n or ops.p != cfg.p:
        raise InputError(f"operator set is n={ops.n}, p={ops.p}; config wants n={cfg.n}, p={cfg.p}")
    return ops


def berry_rate_series(embedded, cfg: ChannelConfig, ops: OperatorSet | None = None) -> RawSeries:
    ops = _resolve(cfg, ops)
    X = _points(embedded, ops)
    F, _, _ = berry_path(ops, X, cfg.eps, *cfg.pair)
    rate = np.full(len(X), np.nan)
    rate[1:] = np.abs(np.diff(F))
    return RawSeries("berry_rate", rate, 1)


def spectral_entropy_values(energies: np.ndarray) -> np.ndarray:
    exc = energies[..., 1:] - energies[..., :1]
    tot = np.sum(exc, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        wts = exc / tot
        terms = np.where(wts > 0, -wts * np.log(np.where(wts > 0, wts, 1.0)), 0.0)
    S = np.sum(terms, axis=-1)
    return np.where(tot[..., 0] >= 1e-12, S, np.nan)


def spectral_entropy_series(embedded, cfg: ChannelConfig, ops: OperatorSet | None = None) -> RawSeries:
    ops = _resolve(cfg, ops)
    spec = spectra(ops, _points(embedded, ops))
    return RawSeries("spectral_entropy", spectral_entropy_values(spec.energies), 0)


def ham_sensitivity_series(embedded, cfg: ChannelConfig, ops: OperatorSet | None = None) -> RawSeries:
    ops = _resolve(cfg, ops)
    X = _points(embedded, ops)
    H = hamiltonians(ops, X)
    psi = spectra(ops, X).ground
    out = np.full(len(X), np.nan)
    if len(X) > 1:
        dH = H[1:] - H[:-1]
        v = np.einsum("tij,tj->ti", dH, psi[1:])
        mean = np.einsum("ti,ti->t", psi[1:].conj(), v).real
        out[1:] = np.einsum("ti,ti->t", v.conj(), v).real - mean * mean
    return RawSeries("ham_sensitivity", out, 1)


def reduced_purity_series(embedded, cfg: ChannelConfig, ops: OperatorSet | None = None) -> RawSeries:
    ops = _resolve(cfg, ops)
    psi = spectra(ops, _points(embedded, ops)).ground
    return RawSeries("reduced_purity", purity(partial_trace(psi, cfg.dims)), 0)


def qfi_logdet_series(embedded, cfg: ChannelConfig, ops: OperatorSet | None = None, rank_tol: float = RANK_TOL) -> RawSeries:
    ops = _resolve(cfg, ops)
    g, gap = metric_pt_path(ops, _points(embedded, ops))
    out = np.full(len(g), np.nan)
    ok = gap >= DEGENERACY_TOL
    if ok.any():
        lam = np.linalg.eigvalsh(4.0 * g[ok])
        lmax = lam[:, -1:]
        keep = (lam > rank_tol * lmax) & (lmax > 0)
        logs = np.where(keep, np.log(np.where(keep, lam, 1.0)), 0.0).sum(axis=1)
        logs[~keep.any(axis=1)] = np.nan  # rank 0
        out[ok] = logs
    return RawSeries("qfi_logdet", out, 0)


def multilag_fidelity_series(embedded, cfg: ChannelConfig, ops: OperatorSet | None = None) -> RawSeries:
    ops = _resolve(cfg, ops)
    psi = spectra(ops, _points(embedded, ops)).ground
    T, k = len(psi), cfg.lags
    out = np.full(T, np.nan)
    if T > k:
        cur = psi[k:]
        fid = np.stack([np.abs(np.einsum("ti,ti->t", cur.conj(), psi[k - l : T - l])) ** 2 for l in range(1, k + 1)])
        out[k:] = fid.min(axis=0)
    return RawSeries("multilag_fidelity", out, k)


def ground_energy_series(embedded, cfg: ChannelConfig, ops: OperatorSet | None = None) -> RawSeries:
    ops = _resolve(cfg, ops)
    spec = spectra(ops, _points(embedded, ops))
    return RawSeries("ground_energy", spec.energies[:, 0], 0)


_DISPATCH = {
    "berry_rate": berry_rate_series,
    "spectral_entropy": spectral_entropy_series,
    "ham_sensitivity": ham_sensitivity_series,
    "reduced_purity": reduced_purity_series,
    "qfi_logdet": qfi_logdet_series,
    "multilag_fidelity": multilag_fidelity_series,
    "ground_energy": ground_energy_series,
}


def raw_series(embedded, cfg: ChannelConfig, ops: OperatorSet | None = None) -> RawSeries:
    return _DISPATCH[cfg.channel](embedded, cfg, ops)


def history_depth(channel: str, lags: int = 5) -> int:
    """Number of earlier rows a channel value depends on."""
    if channel == "multilag_fidelity":
        return lags
    if channel in ("berry_rate", "ham_sensitivity"):
        return 1
    return 0
