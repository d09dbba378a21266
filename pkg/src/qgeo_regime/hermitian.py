"""Dense complex Hermitian linear algebra for small matrices (n <= 64).

Two eigensolvers are available behind :func:`eigh`:

* ``"lapack"`` (default) -- ``numpy.linalg.eigh`` (zheevd), also used in
  batched form by the hot paths in :mod:`qgeo_regime.embedding`.
* ``"jacobi"`` -- a cyclic complex Jacobi sweep written here.  It is slow but
  has no external numerics and serves as the reference solver in the tests.

Both return ascending eigenvalues and eigenvectors normalised so that the
largest-magnitude component of every eigenvector is real and positive.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import BipartitionError, HermitianError, InputError

HERMITIAN_ATOL = 1e-12
JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 100


class EigenSystem(NamedTuple):
    eigenvalues: np.ndarray  # (n,) ascending
    eigenvectors: np.ndarray  # (n, n), column k pairs with eigenvalues[k]


def check_hermitian(H, atol: float = HERMITIAN_ATOL) -> np.ndarray:
    """Return ``H`` as a complex array, raising if it is not Hermitian."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InputError(f"expected a square matrix, got shape {H.shape}")
    if H.shape[0] < 2:
        raise InputError("Hermitian matrices must have dimension >= 2")
    asym = float(np.max(np.abs(H - H.conj().T)))
    if asym > atol:
        raise HermitianError(
            f"matrix is not Hermitian: max |H - H^dagger| = {asym:.3e} > {atol:.1e}"
        )
    return H


def fix_phase(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-|.| entry is real positive.

    Works on a single ``(n, k)`` matrix or a stack ``(..., n, k)``.  Ties in
    magnitude resolve to the lowest row index.
    """
    V = np.asarray(vectors, dtype=complex)
    idx = np.argmax(np.abs(V), axis=-2)[..., None, :]
    pivot = np.take_along_axis(V, idx, axis=-2)
    mag = np.abs(pivot)
    phase = np.where(mag > 0, pivot / np.where(mag > 0, mag, 1.0), 1.0)
    return V * phase.conj()


def eigh_batch(H: np.ndarray, phase_convention: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """LAPACK eigendecomposition of a stack of Hermitian matrices, no checks."""
    w, V = np.linalg.eigh(H)
    if phase_convention:
        V = fix_phase(V)
    return w, V


def jacobi_eigh(H, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> EigenSystem:
    """Cyclic Jacobi eigensolver for a complex Hermitian matrix.

    Each pivot ``(p, q)`` is first made real by a diagonal phase and then
    annihilated with a real plane rotation.  Iteration stops once the
    off-diagonal Frobenius norm falls below ``tol`` times the full norm.
    """
    A = check_hermitian(H).copy()
    n = A.shape[0]
    V = np.eye(n, dtype=complex)
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return EigenSystem(np.zeros(n), fix_phase(V))

    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A[offdiag])
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                mag = abs(apq)
                if mag <= 1e-300:
                    continue
                phase = apq / mag
                theta = (A[q, q].real - A[p, p].real) / (2.0 * mag)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                J = np.array([[c, s], [-s * phase.conjugate(), c * phase.conjugate()]])
                cols = [p, q]
                A[:, cols] = A[:, cols] @ J
                A[cols, :] = J.conj().T @ A[cols, :]
                V[:, cols] = V[:, cols] @ J
                A[p, q] = A[q, p] = 0.0
    w = np.diag(A).real.copy()
    order = np.argsort(w, kind="stable")
    return EigenSystem(w[order], fix_phase(V[:, order]))


def eigh(H, method: str = "lapack") -> EigenSystem:
    """Full spectrum of a Hermitian matrix, eigenvalues ascending.

    Degenerate clusters come back in solver order; callers that depend on a
    gap must check it themselves.
    """
    H = check_hermitian(H)
    if method == "jacobi":
        return jacobi_eigh(H)
    if method != "lapack":
        raise InputError(f"unknown eigensolver {method!r}")
    w, V = eigh_batch(H)
    return EigenSystem(w, V)


def partial_trace(psi, dims: tuple[int, int]) -> np.ndarray:
    """Reduced density matrix of subsystem A for a pure state on A (x) B.

    ``psi`` may be a single vector or a stack ``(..., dA*dB)``; the index
    convention is ``psi[i*dB + b]``.
    """
    dA, dB = int(dims[0]), int(dims[1])
    psi = np.asarray(psi, dtype=complex)
    if dA < 1 or dB < 1 or psi.shape[-1] != dA * dB:
        raise BipartitionError(
            f"state of length {psi.shape[-1]} does not factor as {dA} x {dB}"
        )
    M = psi.reshape(psi.shape[:-1] + (dA, dB))
    return M @ np.swapaxes(M.conj(), -1, -2)


def purity(rho) -> float | np.ndarray:
    """tr(rho^2), real part.  Accepts a stack of density matrices."""
    rho = np.asarray(rho, dtype=complex)
    # tr(rho rho) = sum_ij rho_ij rho_ji = sum_ij |rho_ij|^2 for Hermitian rho
    val = np.sum(np.abs(rho) ** 2, axis=(-2, -1))
    return float(val) if np.ndim(val) == 0 else val


def operator_norm(A) -> float:
    """Spectral norm of a Hermitian matrix: the largest |eigenvalue|."""
    A = check_hermitian(A)
    w = np.linalg.eigvalsh(A)
    return float(max(abs(w[0]), abs(w[-1])))
