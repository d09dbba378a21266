"""Operator sets, the error Hamiltonian and its ground state.

A feature vector ``x`` in R^p is embedded as the lowest eigenvector of

    H(x) = 1/2 * sum_k (A_k - x_k I)^2

for a fixed set of Hermitian operators ``A_k``.  Three operator families are
supported: ``random`` (Hermitian parts of complex Gaussian matrices drawn from
a counter-based generator), ``pca_inspired`` (basis matrices scaled by the
square roots of PCA eigenvalues) and ``pauli`` (the same basis, unscaled).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import BasisExhaustedError, InputError
from .hermitian import eigh_batch

DEFAULT_SEED = 42
DEGENERACY_TOL = 1e-9

OPERATOR_METHODS = ("random", "pca_inspired", "pauli")

# --------------------------------------------------------------------------
# splitmix64 streams
# --------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def splitmix64(seed: int, stream: int, count: int) -> np.ndarray:
    """``count`` 64-bit outputs of the substream ``stream`` under ``seed``.

    Output i is ``mix64(key + (i + 1) * GAMMA)`` with
    ``key = mix64(mix64(seed) ^ stream)``; every value is a pure function of
    (seed, stream, i), so substreams are reproducible in any language.
    """
    with np.errstate(over="ignore"):
        base = _mix64(np.array([seed & _MASK64], dtype=np.uint64))
        key = _mix64(base ^ np.uint64(stream & _MASK64))
        ctr = np.arange(1, count + 1, dtype=np.uint64)
        return _mix64(key + ctr * _GAMMA)


def uniform01(bits: np.ndarray) -> np.ndarray:
    """Map 64-bit words to doubles in [0, 1) using the top 53 bits."""
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def complex_normals(seed: int, stream: int, count: int) -> np.ndarray:
    """Standard complex normals (E|z|^2 = 1) via Box-Muller, one pair per value."""
    u = uniform01(splitmix64(seed, stream, 2 * count))
    u1 = 1.0 - u[0::2]  # (0, 1]
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    return (r * np.cos(ang) + 1j * r * np.sin(ang)) / np.sqrt(2.0)


# --------------------------------------------------------------------------
# traceless Hermitian bases
# --------------------------------------------------------------------------


def gell_mann_basis(n: int) -> np.ndarray:
    """Generalised Gell-Mann matrices, shape ``(n*n - 1, n, n)``.

    Order: symmetric ``E_jk + E_kj`` for j < k (lexicographic), then
    antisymmetric ``-i E_jk + i E_kj`` in the same order, then the diagonal
    matrices ``sqrt(2/(l(l+1))) (sum_{j<l} E_jj - l E_ll)`` for l = 1..n-1.
    All are normalised to tr(B_i B_j) = 2 delta_ij; for n = 2 this yields
    sigma_x, sigma_y, sigma_z.
    """
    if n < 2:
        raise InputError("basis dimension must be >= 2")
    pairs = [(j, k) for j in range(n) for k in range(j + 1, n)]
    out = []
    for j, k in pairs:
        B = np.zeros((n, n), dtype=complex)
        B[j, k] = B[k, j] = 1.0
        out.append(B)
    for j, k in pairs:
        B = np.zeros((n, n), dtype=complex)
        B[j, k] = -1j
        B[k, j] = 1j
        out.append(B)
    for l in range(1, n):
        d = np.zeros(n)
        d[:l] = 1.0
        d[l] = -float(l)
        out.append(np.diag(d * np.sqrt(2.0 / (l * (l + 1)))).astype(complex))
    return np.array(out)


_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli_basis(n: int) -> np.ndarray:
    """Non-identity Pauli strings for n = 2^m, lexicographic over 'IXYZ'."""
    m = n.bit_length() - 1
    if n < 2 or (1 << m) != n:
        raise InputError(f"tensor-product Pauli basis needs n = 2^m, got {n}")
    out = []
    for word in itertools.product("IXYZ", repeat=m):
        if set(word) == {"I"}:
            continue
        M = np.ones((1, 1), dtype=complex)
        for ch in word:
            M = np.kron(M, _PAULI[ch])
        out.append(M)
    return np.array(out)


def basis_matrices(n: int, basis: str = "gellmann") -> np.ndarray:
    if basis == "gellmann":
        return gell_mann_basis(n)
    if basis == "pauli":
        return pauli_basis(n)
    raise InputError(f"unknown basis {basis!r}")


# --------------------------------------------------------------------------
# operator sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OperatorSet:
    """``p`` Hermitian ``n x n`` operators plus their provenance."""

    operators: np.ndarray  # (p, n, n) complex, read-only
    method: str
    seed: int = DEFAULT_SEED
    seed_offset: int = 0
    basis: str | None = None
    sum_sq: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ops = np.array(self.operators, dtype=complex)
        if ops.ndim != 3 or ops.shape[1] != ops.shape[2] or ops.shape[1] < 2:
            raise InputError(f"operators must have shape (p, n, n), got {ops.shape}")
        if self.method not in OPERATOR_METHODS:
            raise InputError(f"unknown operator method {self.method!r}")
        if np.max(np.abs(ops - ops.conj().transpose(0, 2, 1)), initial=0.0) > 1e-12:
            raise InputError("operators must be Hermitian")
        ops.setflags(write=False)
        sq = np.einsum("kij,kjl->il", ops, ops)
        sq = 0.5 * (sq + sq.conj().T)
        sq.setflags(write=False)
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "sum_sq", sq)

    @property
    def n(self) -> int:
        return self.operators.shape[1]

    @property
    def p(self) -> int:
        return self.operators.shape[0]

    def derivative(self, x, a: int) -> np.ndarray:
        """Exact partial derivative dH/dx_a = -(A_a - x_a I)."""
        return -(self.operators[a] - float(x[a]) * np.eye(self.n))


def make_random_operators(n: int, p: int, seed: int = DEFAULT_SEED, seed_offset: int = 0) -> OperatorSet:
    """A_k = (M_k + M_k^dagger)/2 with M_k drawn from substream ``k + seed_offset``."""
    if n < 2 or p < 1:
        raise InputError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    ops = []
    for k in range(p):
        M = complex_normals(seed, k + seed_offset, n * n).reshape(n, n)
        ops.append((M + M.conj().T) / 2.0)
    return OperatorSet(np.array(ops), "random", seed=seed, seed_offset=seed_offset)


def make_pca_inspired_operators(n: int, p: int, pca_eigenvalues, basis: str = "gellmann") -> OperatorSet:
    """A_k = sqrt(lambda_k) B_k over the first ``p`` basis matrices."""
    lam = np.asarray(pca_eigenvalues, dtype=float)
    if lam.shape != (p,):
        raise InputError(f"need {p} PCA eigenvalues, got shape {lam.shape}")
    if np.any(lam < 0):
        raise InputError("PCA eigenvalues must be nonnegative")
    B = _first_basis(n, p, basis)
    return OperatorSet(np.sqrt(lam)[:, None, None] * B, "pca_inspired", basis=basis)


def make_pauli_operators(n: int, p: int, basis: str = "gellmann") -> OperatorSet:
    """Unscaled basis matrices."""
    return OperatorSet(_first_basis(n, p, basis), "pauli", basis=basis)


def _first_basis(n: int, p: int, basis: str) -> np.ndarray:
    if n < 2:
        raise InputError("n must be >= 2")
    if p > n * n - 1:
        raise BasisExhaustedError(
            f"only {n * n - 1} traceless Hermitian basis matrices exist for n={n}; requested p={p}"
        )
    return basis_matrices(n, basis)[:p]


def build_operators(
    method: str,
    n: int,
    p: int,
    seed: int = DEFAULT_SEED,
    seed_offset: int = 0,
    pca_eigenvalues=None,
    basis: str = "gellmann",
) -> OperatorSet:
    if method == "random":
        return make_random_operators(n, p, seed, seed_offset)
    if method == "pca_inspired":
        if pca_eigenvalues is None:
            raise InputError("pca_inspired operators need PCA eigenvalues")
        return make_pca_inspired_operators(n, p, pca_eigenvalues, basis)
    if method == "pauli":
        return make_pauli_operators(n, p, basis)
    raise InputError(f"unknown operator method {method!r}")


# --------------------------------------------------------------------------
# Hamiltonian and ground state
# --------------------------------------------------------------------------


def _as_points(ops: OperatorSet, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != ops.p:
        raise InputError(f"feature vector length {X.shape[-1]} != operator count {ops.p}")
    return X


def hamiltonians(ops: OperatorSet, X) -> np.ndarray:
    """Error Hamiltonians for a stack of points ``X`` of shape ``(..., p)``.

    Uses the expansion 1/2 sum A_k^2 - sum x_k A_k + 1/2 |x|^2 I and forces
    exact Hermiticity.
    """
    X = _as_points(ops, X)
    lin = np.einsum("...k,kij->...ij", X, ops.operators)
    H = 0.5 * ops.sum_sq - lin
    idx = np.arange(ops.n)
    H[..., idx, idx] += 0.5 * np.sum(X * X, axis=-1)[..., None]
    return 0.5 * (H + np.swapaxes(H.conj(), -1, -2))


def error_hamiltonian(ops: OperatorSet, x) -> np.ndarray:
    x = _as_points(ops, x)
    if x.ndim != 1:
        raise InputError("error_hamiltonian takes a single point; use hamiltonians() for stacks")
    return hamiltonians(ops, x)


class GroundStateRecord(NamedTuple):
    t: int
    E0: float
    gap: float
    state: np.ndarray
    degenerate_flag: bool


class Spectra(NamedTuple):
    """Full eigensystems along a path of points."""

    energies: np.ndarray  # (T, n) ascending
    vectors: np.ndarray  # (T, n, n)

    @property
    def ground(self) -> np.ndarray:
        return self.vectors[..., :, 0]

    @property
    def gap(self) -> np.ndarray:
        return self.energies[..., 1] - self.energies[..., 0]


def spectra(ops: OperatorSet, X) -> Spectra:
    w, V = eigh_batch(hamiltonians(ops, X))
    return Spectra(w, V)


def ground_states(ops: OperatorSet, X) -> np.ndarray:
    """Ground-state vectors for a stack of points, shape ``(..., n)``."""
    return spectra(ops, X).ground


def ground_state(ops: OperatorSet, x, t: int = 0) -> GroundStateRecord:
    w, V = eigh_batch(error_hamiltonian(ops, x))
    gap = max(float(w[1] - w[0]), 0.0)
    return GroundStateRecord(t, float(w[0]), gap, V[:, 0].copy(), gap < DEGENERACY_TOL)
