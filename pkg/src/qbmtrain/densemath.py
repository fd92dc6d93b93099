"""Dense Hermitian linear algebra on small qubit registers.

Every matrix function here goes through a full Hermitian eigendecomposition.
At the sizes this package targets (at most 2**12) that is exact to roundoff
and hands us the divided-difference kernels needed for Frechet derivatives.

Tensor-order convention used throughout the package: visible (left factor)
then hidden (right factor).
"""

from __future__ import annotations

import warnings
from typing import Callable, NamedTuple

import numpy as np

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-10
DEFAULT_EIGENFLOOR = 1e-12
# relative gap under which divided differences switch to the derivative limit
KERNEL_GAP = 1e-9
MAX_QUBITS = 12


class ValidationError(ValueError):
    """Input matrix violates a structural precondition."""


class EigenvalueClampWarning(RuntimeWarning):
    """Eigenvalues were raised to the floor before taking a logarithm."""


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self, values: np.ndarray | None = None) -> np.ndarray:
        """Return V diag(values) V^dagger (the original matrix by default)."""
        vals = self.eigenvalues if values is None else values
        v = self.eigenvectors
        return (v * vals) @ v.conj().T


class LogmResult(NamedTuple):
    matrix: np.ndarray
    clamped: int
    min_eigenvalue: float


def _scale(a: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0


def num_qubits(dim: int) -> int:
    n = int(round(np.log2(dim))) if dim > 0 else -1
    if n < 0 or 2**n != dim:
        raise ValidationError(f"dimension {dim} is not a power of two")
    return n


def check_hermitian(a, name: str = "matrix", tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Validate a square power-of-two Hermitian matrix and return it as complex."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {a.shape}")
    num_qubits(a.shape[0])
    if a.shape[0] > 2**MAX_QUBITS:
        raise ValidationError(f"{name} exceeds 2**{MAX_QUBITS} dimensions")
    dev = float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0
    if dev > tol * _scale(a):
        raise ValidationError(f"{name} is not Hermitian (max |A - A^H| = {dev:.3e})")
    return a


def check_density(rho, name: str = "density matrix") -> np.ndarray:
    rho = check_hermitian(rho, name)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValidationError(f"{name} has trace {tr!r}, expected 1")
    lam_min = float(np.linalg.eigvalsh(rho)[0])
    if lam_min < -PSD_TOL:
        raise ValidationError(f"{name} has negative eigenvalue {lam_min:.3e}")
    return rho


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def eigh_herm(a) -> EigenDecomposition:
    a = check_hermitian(a)
    w, v = np.linalg.eigh(hermitize(a))
    return EigenDecomposition(w, v)


def expm_herm(a) -> np.ndarray:
    """Matrix exponential of a Hermitian matrix."""
    eig = eigh_herm(a)
    return hermitize(eig.reconstruct(np.exp(eig.eigenvalues)))


def logm_psd(a, eigenfloor: float = DEFAULT_EIGENFLOOR) -> LogmResult:
    """Matrix logarithm of a PSD matrix with eigenvalues floored at ``eigenfloor``.

    Eigenvalues below the floor are clamped and counted in the result; a
    ``EigenvalueClampWarning`` is emitted whenever that happens. Eigenvalues
    below ``-PSD_TOL`` are an error.
    """
    if eigenfloor <= 0:
        raise ValueError("eigenfloor must be positive")
    eig = eigh_herm(a)
    lam = eig.eigenvalues
    if lam[0] < -PSD_TOL:
        raise ValidationError(f"matrix has negative eigenvalue {lam[0]:.3e}")
    clamped = int(np.count_nonzero(lam < eigenfloor))
    if clamped:
        warnings.warn(
            f"{clamped} eigenvalue(s) below {eigenfloor:g} clamped before log "
            f"(min eigenvalue {lam[0]:.3e})",
            EigenvalueClampWarning,
            stacklevel=2,
        )
    logs = np.log(np.maximum(lam, eigenfloor))
    return LogmResult(hermitize(eig.reconstruct(logs)), clamped, float(lam[0]))


def partial_trace(m, n_keep: int, n_drop: int) -> np.ndarray:
    """Trace out the right tensor factor of ``m`` (``n_drop`` qubits)."""
    m = np.asarray(m, dtype=complex)
    dk, dd = 2**n_keep, 2**n_drop
    if m.shape != (dk * dd, dk * dd):
        raise ValidationError(
            f"shape {m.shape} does not match 2**({n_keep}+{n_drop}) square"
        )
    return np.einsum("ijkj->ik", m.reshape(dk, dd, dk, dd))


def trace_inner(a, b) -> complex:
    """Tr(AB)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape[::-1]:
        raise ValidationError(f"incompatible shapes {a.shape} and {b.shape}")
    return complex(np.einsum("ij,ji->", a, b))


def trace_distance(a, b) -> float:
    """Half the trace norm of A - B."""
    d = hermitize(np.asarray(a, dtype=complex) - np.asarray(b, dtype=complex))
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(d))))


def _close_mask(lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = lam[:, None] - lam[None, :]
    scale = max(float(np.max(np.abs(lam))), 1.0) if lam.size else 1.0
    return diff, np.abs(diff) < KERNEL_GAP * scale


def divided_difference_kernel(
    lam: np.ndarray,
    f: Callable[[np.ndarray], np.ndarray],
    df: Callable[[np.ndarray], np.ndarray],
) -> np.ndarray:
    """First divided differences f[l_i, l_j] with the f' limit on near-ties."""
    diff, close = _close_mask(lam)
    fl = f(lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = (fl[:, None] - fl[None, :]) / np.where(close, 1.0, diff)
    mid = 0.5 * (lam[:, None] + lam[None, :])
    return np.where(close, df(mid), k)


def _exp_kernel(lam: np.ndarray) -> np.ndarray:
    diff, close = _close_mask(lam)
    base = np.exp(lam)[None, :] * np.ones_like(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = base * np.expm1(diff) / np.where(close, 1.0, diff)
    mid = 0.5 * (lam[:, None] + lam[None, :])
    return np.where(close, np.exp(mid), k)


def _log_kernel(lam: np.ndarray) -> np.ndarray:
    diff, close = _close_mask(lam)
    den = np.where(close, 1.0, diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.log1p(diff / lam[None, :]) / den
    mid = 0.5 * (lam[:, None] + lam[None, :])
    return np.where(close, 1.0 / mid, k)


def frechet_apply(eig: EigenDecomposition, kernel: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Apply an eigenbasis kernel to direction E: V (K o V^H E V) V^H."""
    v = eig.eigenvectors
    return v @ (kernel * (v.conj().T @ e @ v)) @ v.conj().T


def frechet_exp(a, e) -> np.ndarray:
    """Directional derivative of exp at A along E (Duhamel integral)."""
    e = check_hermitian(e, "direction")
    eig = eigh_herm(a)
    if e.shape != eig.eigenvectors.shape:
        raise ValidationError("A and E must have the same dimension")
    return hermitize(frechet_apply(eig, _exp_kernel(eig.eigenvalues), e))


def frechet_log(a, e) -> np.ndarray:
    """Directional derivative of log at positive definite A along E."""
    e = check_hermitian(e, "direction")
    eig = eigh_herm(a)
    if e.shape != eig.eigenvectors.shape:
        raise ValidationError("A and E must have the same dimension")
    lam = eig.eigenvalues
    if lam[0] <= PSD_TOL:
        raise ValidationError(
            f"frechet_log needs positive definite A (min eigenvalue {lam[0]:.3e})"
        )
    return hermitize(frechet_apply(eig, _log_kernel(lam), e))


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    x = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * hermitize(x) / np.sqrt(2 * dim)


def random_density_matrix(
    dim: int, rng: np.random.Generator, rank: int | None = None
) -> np.ndarray:
    """Ginibre-induced random mixed state of the given rank (full by default)."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return hermitize(rho / np.trace(rho).real)


def project_to_density(a: np.ndarray) -> np.ndarray:
    """Nearest unit-trace PSD matrix in Frobenius norm (eigenvalue simplex projection)."""
    w, v = np.linalg.eigh(hermitize(np.asarray(a, dtype=complex)))
    u = np.sort(w)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, len(u) + 1)
    k = np.nonzero(u - (css - 1.0) / idx > 0)[0][-1]
    tau = (css[k] - 1.0) / (k + 1)
    p = np.maximum(w - tau, 0.0)
    return hermitize((v * p) @ v.conj().T)
