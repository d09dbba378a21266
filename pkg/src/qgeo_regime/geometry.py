"""Quantum metric, Berry curvature and derived dimension statistics.

The metric is computed two independent ways: central finite differences of
gauge-aligned ground states (:func:`metric_fd`) and the sum-over-states formula
with the exact Hamiltonian derivative (:func:`metric_pt`).  Curvature uses
gauge-invariant plaquette phases; :func:`berry_pt` gives the sum-over-states
value as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .embedding import DEGENERACY_TOL, OperatorSet, eigh_batch, hamiltonians, spectra
from .errors import DegenerateGapError, IllConditionedLoopError, InputError

DEFAULT_EPS = 1e-5
OVERLAP_TOL = 1e-12
RANK_TOL = 1e-10
BOUND_SLACK = 1e-8


@dataclass(frozen=True)
class MetricTensor:
    g: np.ndarray
    x: np.ndarray
    method: str  # "finite_difference" | "perturbation"

    @property
    def qfi(self) -> np.ndarray:
        return 4.0 * self.g


class CurvatureSample(NamedTuple):
    x: np.ndarray
    a: int
    b: int
    value: float
    gap: float


class BoundCheck(NamedTuple):
    satisfied: bool
    lhs: float
    rhs: float


class PseudoDet(NamedTuple):
    value: float
    rank: int

    @property
    def flagged(self) -> bool:
        return self.rank == 0


class FlaggedValue(NamedTuple):
    value: float
    flagged: bool


def _matrix(g) -> np.ndarray:
    return np.asarray(g.g if isinstance(g, MetricTensor) else g, dtype=float)


def _require_gap(gaps, what: str) -> None:
    gmin = float(np.min(gaps))
    if not gmin >= DEGENERACY_TOL:
        raise DegenerateGapError(f"{what}: spectral gap {gmin:.3e} below {DEGENERACY_TOL:.0e}")


def _align(ref: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Rephase ``states`` (rows) to have real positive overlap with ``ref``."""
    ov = states @ ref.conj()
    mag = np.abs(ov)
    if np.min(mag) < OVERLAP_TOL:
        raise IllConditionedLoopError("neighbour state nearly orthogonal to the centre state")
    return states * (ov / mag).conj()[:, None]


# --------------------------------------------------------------------------
# metric
# --------------------------------------------------------------------------


def metric_fd(ops: OperatorSet, x, eps: float = DEFAULT_EPS) -> MetricTensor:
    x = np.asarray(x, dtype=float)
    p = ops.p
    pts = np.repeat(x[None, :], 2 * p + 1, axis=0)
    for a in range(p):
        pts[1 + 2 * a, a] += eps
        pts[2 + 2 * a, a] -= eps
    w, V = eigh_batch(hamiltonians(ops, pts))
    gaps = w[:, 1] - w[:, 0]
    if not np.min(gaps) >= DEGENERACY_TOL:
        raise DegenerateGapError(f"singular stencil: gap {np.min(gaps):.3e} at a stencil point")
    psi = V[0, :, 0]
    nb = _align(psi, V[1:, :, 0])
    d = (nb[0::2] - nb[1::2]) / (2.0 * eps)  # (p, n)
    overlap = d.conj() @ d.T  # <d_a|d_b>
    conn = d.conj() @ psi  # <d_a|psi>
    g = (overlap - np.outer(conn, conn.conj())).real
    return MetricTensor(0.5 * (g + g.T), x, "finite_difference")


def _sum_over_states(ops: OperatorSet, w: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Q_ab = sum_{m>=1} <0|dA H|m><m|dB H|0> / (E_m - E_0)^2 for stacks.

    The identity part of dH_a = -(A_a - x_a I) has no off-ground elements, so
    only the operators enter.
    """
    v0 = V[..., :, 0]
    elems = -np.einsum("...i,kij,...jm->...km", v0.conj(), ops.operators, V[..., :, 1:])
    de = w[..., 1:] - w[..., :1]
    W = elems / de[..., None, :]
    return W @ np.swapaxes(W.conj(), -1, -2)


def metric_pt(ops: OperatorSet, x) -> MetricTensor:
    x = np.asarray(x, dtype=float)
    w, V = eigh_batch(hamiltonians(ops, x))
    _require_gap(w[1] - w[0], "metric_pt")
    g = _sum_over_states(ops, w, V).real
    return MetricTensor(0.5 * (g + g.T), x, "perturbation")


def metric_pt_path(ops: OperatorSet, X) -> tuple[np.ndarray, np.ndarray]:
    """Perturbation-theory metric along a path: ``(g (T, p, p), gap (T,))``.

    Degenerate points get NaN metrics instead of raising.
    """
    spec = spectra(ops, X)
    gap = spec.gap
    with np.errstate(divide="ignore", invalid="ignore"):
        g = _sum_over_states(ops, spec.energies, spec.vectors).real
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    g[gap < DEGENERACY_TOL] = np.nan
    return g, gap


def berry_pt(ops: OperatorSet, x, a: int, b: int) -> float:
    """Sum-over-states Berry curvature -2 Im Q_ab (reference value)."""
    w, V = eigh_batch(hamiltonians(ops, np.asarray(x, dtype=float)))
    _require_gap(w[1] - w[0], "berry_pt")
    return float(-2.0 * _sum_over_states(ops, w, V)[a, b].imag)


# --------------------------------------------------------------------------
# plaquettes
# --------------------------------------------------------------------------


def loop_phase(states: np.ndarray) -> float:
    """-Im log of the product of consecutive overlaps around a closed loop.

    ``states`` holds the loop's corner vectors in order (rows); the loop
    closes back to the first row.  The result is invariant under rephasing
    any corner.
    """
    states = np.asarray(states, dtype=complex)
    nxt = np.roll(states, -1, axis=0)
    ov = np.einsum("ki,ki->k", states.conj(), nxt)
    if np.min(np.abs(ov)) < OVERLAP_TOL:
        raise IllConditionedLoopError(f"loop overlap {np.min(np.abs(ov)):.2e} below {OVERLAP_TOL:.0e}")
    return -float(np.angle(np.prod(ov)))


def _plaquette_corners(X: np.ndarray, eps: float, a: int, b: int) -> np.ndarray:
    """Corners x, x+e_a, x+e_a+e_b, x+e_b for each row of X, shape (4, T, p)."""
    c = np.repeat(np.asarray(X, dtype=float)[None], 4, axis=0)
    c[1, ..., a] += eps
    c[2, ..., a] += eps
    c[2, ..., b] += eps
    c[3, ..., b] += eps
    return c


def berry_path(ops: OperatorSet, X, eps: float = DEFAULT_EPS, a: int = 0, b: int = 1):
    """Plaquette curvature F_ab at every row of ``X``.

    Returns ``(F, gap, ok)``.  Ill-conditioned or degenerate plaquettes give
    NaN with ``ok`` False rather than raising.  F_ab = -F_ba holds exactly:
    the loop is always traversed for the ordered pair and negated if swapped.
    """
    if a == b:
        raise InputError("curvature indices must differ")
    sign = 1.0
    if a > b:
        a, b, sign = b, a, -1.0
    X = np.atleast_2d(np.asarray(X, dtype=float))
    corners = _plaquette_corners(X, eps, a, b)
    w, V = eigh_batch(hamiltonians(ops, corners))
    psi = V[..., :, 0]  # (4, T, n)
    gaps = w[..., 1] - w[..., 0]
    ov = np.einsum("kti,kti->kt", psi.conj(), np.roll(psi, -1, axis=0))
    ok = (np.min(np.abs(ov), axis=0) >= OVERLAP_TOL) & (np.min(gaps, axis=0) >= DEGENERACY_TOL)
    F = -np.angle(np.prod(ov, axis=0)) / (eps * eps)
    F = np.where(ok, sign * F, np.nan)
    return F, gaps[0], ok


def berry_plaquette(ops: OperatorSet, x, eps: float = DEFAULT_EPS, a: int = 0, b: int = 1) -> CurvatureSample:
    x = np.asarray(x, dtype=float)
    lo, hi = min(a, b), max(a, b)
    if lo == hi:
        raise InputError("curvature indices must differ")
    corners = _plaquette_corners(x[None], eps, lo, hi)[:, 0]
    w, V = eigh_batch(hamiltonians(ops, corners))
    _require_gap(w[:, 1] - w[:, 0], "berry_plaquette")
    F = loop_phase(V[:, :, 0]) / (eps * eps)
    if a > b:
        F = -F
    return CurvatureSample(x, a, b, F, float(w[0, 1] - w[0, 0]))


def curvature_gap_bound_check(ops: OperatorSet, x, eps: float = DEFAULT_EPS, a: int = 0, b: int = 1) -> BoundCheck:
    """|F_ab| <= 2 ||dH_a|| ||dH_b|| / gap^2, with a 1e-8 absolute slack."""
    s = berry_plaquette(ops, x, eps, a, b)
    na = np.linalg.norm(ops.derivative(s.x, a), 2)
    nb = np.linalg.norm(ops.derivative(s.x, b), 2)
    lhs = abs(s.value)
    rhs = 2.0 * float(na) * float(nb) / (s.gap * s.gap)
    return BoundCheck(lhs <= rhs + BOUND_SLACK, lhs, rhs)


# --------------------------------------------------------------------------
# closed surfaces
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Mesh:
    """Polygonal surface: vertex coordinates plus oriented faces."""

    vertices: np.ndarray  # (V, dim)
    faces: tuple[tuple[int, ...], ...]

    @property
    def closed(self) -> bool:
        """Every directed edge is matched by exactly one reversed edge."""
        edges: dict[tuple[int, int], int] = {}
        for f in self.faces:
            for u, v in zip(f, f[1:] + f[:1]):
                edges[(u, v)] = edges.get((u, v), 0) + 1
        return all(c == 1 and edges.get((v, u), 0) == 1 for (u, v), c in edges.items())

    def reversed(self) -> "Mesh":
        return Mesh(self.vertices, tuple(tuple(reversed(f)) for f in self.faces))


def sphere_mesh(n_theta: int = 40, n_phi: int = 40, radius: float = 1.0, center=None, dim: int = 3) -> Mesh:
    """Latitude-longitude sphere with triangular polar caps, outward oriented.

    The sphere lives in the first three coordinates of R^dim around
    ``center``.
    """
    if n_theta < 2 or n_phi < 3:
        raise InputError("sphere mesh needs n_theta >= 2 and n_phi >= 3")
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    verts = []

    def point(theta, phi):
        v = c.copy()
        v[:3] += radius * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
        return v

    verts.append(point(0.0, 0.0))
    for i in range(1, n_theta):
        th = np.pi * i / n_theta
        for j in range(n_phi):
            verts.append(point(th, 2.0 * np.pi * j / n_phi))
    verts.append(point(np.pi, 0.0))
    north, south = 0, len(verts) - 1

    def ring(i, j):  # i in 1..n_theta-1
        return 1 + (i - 1) * n_phi + (j % n_phi)

    faces = []
    # (theta-hat, phi-hat, r-hat) is right handed: step in theta, then phi.
    for j in range(n_phi):
        faces.append((north, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_theta - 1):
        for j in range(n_phi):
            faces.append((ring(i, j), ring(i + 1, j), ring(i + 1, j + 1), ring(i, j + 1)))
    for j in range(n_phi):
        faces.append((ring(n_theta - 1, j), south, ring(n_theta - 1, j + 1)))
    return Mesh(np.array(verts), tuple(faces))


class ChernResult(NamedTuple):
    value: float
    closed: bool
    nearest_integer: int
    face_phases: np.ndarray

    @property
    def open_mesh_warning(self) -> bool:
        return not self.closed


def chern_integral(field: OperatorSet | Callable[[np.ndarray], np.ndarray], mesh: Mesh) -> ChernResult:
    """(1/2pi) * sum of face loop phases over ``mesh``.

    ``field`` is either an operator set (ground states at the vertices) or a
    callable mapping a ``(V, dim)`` vertex array to ``(V, n)`` state rows.
    Each face is evaluated in a canonical vertex order and signed by its
    orientation, so reversing the mesh flips the result exactly.
    """
    if isinstance(field, OperatorSet):
        w, Vec = eigh_batch(hamiltonians(field, mesh.vertices))
        _require_gap(w[:, 1] - w[:, 0], "chern_integral")
        states = Vec[:, :, 0]
    else:
        states = np.asarray(field(mesh.vertices), dtype=complex)
    phases = np.empty(len(mesh.faces))
    for i, face in enumerate(mesh.faces):
        canon, sign = _canonical_loop(face)
        phases[i] = sign * loop_phase(states[list(canon)])
    total = math.fsum(phases) / (2.0 * math.pi)
    return ChernResult(total, mesh.closed, int(round(total)), phases)


def _canonical_loop(face: Sequence[int]) -> tuple[tuple[int, ...], float]:
    f = list(face)
    k = f.index(min(f))
    f = f[k:] + f[:k]
    if f[-1] < f[1]:
        return (f[0],) + tuple(reversed(f[1:])), -1.0
    return tuple(f), 1.0


def monopole_states(points: np.ndarray) -> np.ndarray:
    """Ground states of -x.sigma: the spin-1/2 state aligned with x."""
    pts = np.asarray(points, dtype=float)[:, :3]
    r = np.linalg.norm(pts, axis=1)
    theta = np.arccos(np.clip(pts[:, 2] / r, -1.0, 1.0))
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    return np.stack([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)], axis=1)


# --------------------------------------------------------------------------
# metric spectra
# --------------------------------------------------------------------------


def pseudo_det(g, rank_tol: float = RANK_TOL) -> PseudoDet:
    """Product of eigenvalues above ``rank_tol * lambda_max``; rank 0 gives 1."""
    lam = np.linalg.eigvalsh(_matrix(g))
    lmax = lam[-1]
    if not lmax > 0:
        return PseudoDet(1.0, 0)
    keep = lam[lam > rank_tol * lmax]
    return PseudoDet(float(np.prod(keep)), int(keep.size))


def log_pseudo_det(g, rank_tol: float = RANK_TOL) -> tuple[float, int]:
    """Natural log of :func:`pseudo_det`, summed in log space."""
    lam = np.linalg.eigvalsh(_matrix(g))
    lmax = lam[-1]
    if not lmax > 0:
        return 0.0, 0
    keep = lam[lam > rank_tol * lmax]
    return float(np.sum(np.log(keep))), int(keep.size)


def participation_ratio(g) -> FlaggedValue:
    lam = np.clip(np.linalg.eigvalsh(_matrix(g)), 0.0, None)
    s2 = float(np.sum(lam * lam))
    if s2 == 0.0:
        return FlaggedValue(0.0, True)
    return FlaggedValue(float(np.sum(lam)) ** 2 / s2, False)


def spectral_gap_dimension(g, rank_tol: float = RANK_TOL) -> FlaggedValue:
    """1-based position of the largest consecutive eigenvalue ratio.

    Only eigenvalues above ``rank_tol * lambda_max`` count as positive; ties
    go to the smallest index.
    """
    lam = np.sort(np.linalg.eigvalsh(_matrix(g)))[::-1]
    if not lam[0] > 0:
        return FlaggedValue(0, True)
    pos = lam[lam > rank_tol * lam[0]]
    if pos.size < 2:
        return FlaggedValue(0, True)
    ratios = pos[:-1] / pos[1:]
    return FlaggedValue(int(np.argmax(ratios)) + 1, False)
