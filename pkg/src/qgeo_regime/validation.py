"""Numerical checks of the geometric guarantees the channels rely on."""

from __future__ import annotations

import math

import numpy as np

from .embedding import DEGENERACY_TOL, make_random_operators, spectra
from .geometry import (
    DEFAULT_EPS,
    berry_plaquette,
    chern_integral,
    metric_fd,
    metric_pt,
    monopole_states,
    sphere_mesh,
)

QFI_RMSE_MAX = 1e-9
QFI_R_MIN = 0.999999
CHERN_TOL = 0.01
GAP_MIN = 1e-6


def sample_points(p: int, count: int, seed: int = 42) -> np.ndarray:
    """Unit vectors in R^p, the shape of embedded feature rows."""
    X = np.random.default_rng(seed).standard_normal((count, p))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def feature_stream(p: int, steps: int, seed: int = 42, phi: float = 0.95) -> np.ndarray:
    """A persistent AR(1) path in R^p, normalised row by row."""
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((steps, p))
    Y = np.empty_like(eps)
    Y[0] = eps[0]
    s = math.sqrt(1.0 - phi * phi)
    for t in range(1, steps):
        Y[t] = phi * Y[t - 1] + s * eps[t]
    return Y / np.linalg.norm(Y, axis=1, keepdims=True)


def qfi_identity(n: int = 8, p: int = 8, count: int = 500, seed: int = 42, eps: float = DEFAULT_EPS) -> dict:
    """Finite-difference metric vs the sum-over-states metric (4g = F_Q)."""
    ops = make_random_operators(n, p, seed)
    fd, pt = [], []
    for x in sample_points(p, count, seed):
        fd.append(metric_fd(ops, x, eps).g)
        pt.append(metric_pt(ops, x).g)
    a, b = np.ravel(fd), np.ravel(pt)
    rmse = float(np.sqrt(np.mean((a - b) ** 2)))
    r = float(np.corrcoef(a, b)[0, 1])
    return {
        "n": n, "p": p, "points": count, "seed": seed,
        "rmse": rmse, "pearson_r": r, "max_abs_diff": float(np.max(np.abs(a - b))),
        "passed": bool(rmse <= QFI_RMSE_MAX and r >= QFI_R_MIN),
    }  # fmt: skip


def curvature_gap_bound(n: int = 8, p: int = 10, count: int = 1500, seed: int = 42, eps: float = DEFAULT_EPS) -> dict:
    """|F_ab| <= 2 ||dH_a|| ||dH_b|| / gap^2 at random points and index pairs.

    Besides the pass rate, the largest lhs/rhs ratio is reported: it bounds
    the constant the inequality could be tightened to on this sample.
    """
    ops = make_random_operators(n, p, seed)
    rng = np.random.default_rng(seed + 1)
    X = sample_points(p, count, seed)
    ok, ratios, slack = 0, [], math.inf
    for x in X:
        a, b = (int(i) for i in rng.choice(p, size=2, replace=False))
        s = berry_plaquette(ops, x, eps, a, b)
        na = np.linalg.norm(ops.derivative(x, a), 2)
        nb = np.linalg.norm(ops.derivative(x, b), 2)
        lhs, rhs = abs(s.value), 2.0 * float(na) * float(nb) / (s.gap * s.gap)
        ok += lhs <= rhs
        ratios.append(lhs / rhs)
        slack = min(slack, rhs - lhs)
    return {
        "n": n, "p": p, "points": count, "seed": seed,
        "fraction_satisfied": ok / count, "max_ratio": float(max(ratios)), "min_slack": float(slack),
        "passed": bool(ok == count and slack >= 0.0),
    }  # fmt: skip


def chern_oracle(n_theta: int = 40, n_phi: int = 40) -> dict:
    """Two-level monopole on a closed sphere; analytic value -1."""
    mesh = sphere_mesh(n_theta, n_phi)
    c = chern_integral(monopole_states, mesh)
    rc = chern_integral(monopole_states, mesh.reversed())
    return {
        "mesh": [n_theta, n_phi], "closed": c.closed,
        "chern": c.value, "reversed": rc.value, "expected": -1,
        "passed": bool(c.closed and abs(c.value + 1.0) <= CHERN_TOL and rc.value == -c.value),
    }  # fmt: skip


def gap_scan(n: int = 8, p: int = 10, steps: int = 5000, seed: int = 42) -> dict:
    """Spectral gap along a synthetic feature stream."""
    ops = make_random_operators(n, p, seed)
    gap = spectra(ops, feature_stream(p, steps, seed)).gap
    return {
        "n": n, "p": p, "steps": steps, "seed": seed,
        "min_gap": float(gap.min()), "median_gap": float(np.median(gap)),
        "degenerate_steps": int(np.sum(gap < DEGENERACY_TOL)),
        "passed": bool(gap.min() > GAP_MIN),
    }  # fmt: skip


def validate_all(seed: int = 42, qfi_points: int = 500, bound_points: int = 1500, gap_steps: int = 5000) -> dict:
    checks = {
        "gap_positivity": gap_scan(seed=seed, steps=gap_steps),
        "curvature_gap_bound": curvature_gap_bound(seed=seed, count=bound_points),
        "chern_quantization": chern_oracle(),
        "qfi_metric_identity": qfi_identity(seed=seed, count=qfi_points),
    }
    checks["passed"] = all(c["passed"] for c in checks.values())
    return checks
