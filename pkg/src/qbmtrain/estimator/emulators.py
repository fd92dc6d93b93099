"""Classical emulators of the quantum subroutines used by the gradient estimators.

* Hadamard test: exact value, finite Bernoulli shots, or amplitude estimation
  applied to the ancilla's zero-outcome probability.
* Amplitude estimation: samples from the exact outcome distribution of
  phase estimation on the Grover iterate, so no circuit is simulated.
* Sample-based Hamiltonian simulation (repeated partial swaps with fresh
  copies of sigma), both as a channel and in the controlled form used inside
  a Hadamard test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from ..densemath import ValidationError, check_density, check_hermitian, eigh_herm, hermitize

SUCCESS_PROB = 8 / np.pi**2
MAX_AE_N = 2**24
UNITARY_TOL = 1e-10

ShotMode = Literal["exact", "bernoulli", "ae"]


class ShotBudgetError(RuntimeError):
    """Requested precision needs more shots/queries than the configured cap."""


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class ShotModel:
    """How expectation values are read out.

    ``shots`` (bernoulli) or ``N`` (ae) fix the resource per estimate; when
    left as ``None`` callers size them from a target precision with
    :meth:`resources_for`. ``lmr`` switches term evaluation to partial-swap
    Hamiltonian simulation with error ``eps_h`` per exponential.
    """

    mode: ShotMode = "exact"
    shots: int | None = None
    N: int | None = None
    lmr: bool = False
    eps_h: float | None = None
    max_queries: int = 10**9

    def __post_init__(self):
        if self.mode not in ("exact", "bernoulli", "ae"):
            raise ValueError(f"unknown shot model {self.mode!r}")
        if self.N is not None:
            _check_power_of_two(self.N)
        if self.lmr and (self.eps_h is None or not 0 < self.eps_h <= 1 / 6):
            raise ValueError("lmr needs eps_h in (0, 1/6]")

    def resources_for(self, precision: float) -> int:
        """Shots or AE grid size so that one estimate of a [-1, 1] quantity lands
        within ``precision`` with probability at least 8/pi^2."""
        if self.mode == "exact":
            return 0
        if precision <= 0:
            raise ValueError("precision must be positive")
        if self.mode == "bernoulli":
            n = self.shots or bernoulli_shots(precision)
        else:
            n = self.N or ae_grid_size(precision)
        if n > self.max_queries:
            raise ShotBudgetError(
                f"{self.mode} readout at precision {precision:.3g} needs {n} "
                f"queries per estimate (cap {self.max_queries})"
            )
        return n


def _check_power_of_two(n: int) -> None:
    if n < 2 or n & (n - 1):
        raise ValidationError(f"N={n} must be a power of two >= 2")


def bernoulli_shots(precision: float) -> int:
    """Chebyshev sizing: Var(2 p_hat - 1) <= 1/n, failure <= 1 - 8/pi^2."""
    return int(np.ceil(1.0 / ((1 - SUCCESS_PROB) * precision**2)))


def ae_grid_size(precision: float) -> int:
    """Smallest power-of-two N whose k=1 worst-case bound on 2a-1 is ``precision``."""
    n = 2
    while np.pi / n + np.pi**2 / n**2 > precision / 2:
        n *= 2
        if n > MAX_AE_N:
            raise ShotBudgetError(f"precision {precision:.3g} needs N > {MAX_AE_N}")
    return n


def ae_error_bound(a, N: int, k: int = 1):
    return 2 * np.pi * k * np.sqrt(np.asarray(a) * (1 - np.asarray(a))) / N + k**2 * np.pi**2 / N**2


def ae_outcome_distribution(a_true: float, N: int) -> np.ndarray:
    """Probability of each phase-register outcome y in 0..N-1.

    With a = sin^2(pi w) the Grover iterate has eigenphases +-w (in turns),
    each carrying weight 1/2, and the N-point QFT smears phase w into the
    Fejer kernel sin^2(N pi d) / (N^2 sin^2(pi d)), d = w - y/N.
    """
    if not 0.0 <= a_true <= 1.0:
        raise ValidationError(f"amplitude {a_true} outside [0, 1]")
    _check_power_of_two(N)
    w = np.arcsin(np.sqrt(a_true)) / np.pi
    y = np.arange(N)

    def fejer(d):
        d = d - np.round(d)
        s = np.sin(np.pi * d)
        small = np.abs(s) < 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.sin(N * np.pi * d) ** 2 / (N**2 * s**2)
        return np.where(small, 1.0, val)

    p = 0.5 * fejer(w - y / N) + 0.5 * fejer(-w - y / N)
    return p / p.sum()


def amplitude_estimate(a_true: float, N: int, seed=None, size=None):
    """Sample amplitude-estimation outputs sin^2(pi y / N)."""
    rng = as_rng(seed)
    p = ae_outcome_distribution(a_true, N)
    y = rng.choice(N, size=size, p=p)
    return np.sin(np.pi * y / N) ** 2


def _check_unitary(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValidationError("U must be square")
    dev = np.max(np.abs(u.conj().T @ u - np.eye(len(u))))
    if dev > UNITARY_TOL:
        raise ValidationError(f"U is not unitary (max |U^H U - I| = {dev:.3e})")
    return u


def readout(value: float, shot_model: ShotModel, rng, precision=None, size=None):
    """Noisy estimate(s) of a real number in [-1, 1] read off Pr(0) = (1 + value)/2."""
    value = float(np.clip(value, -1.0, 1.0))
    if shot_model.mode == "exact":
        return value if size is None else np.full(size, value)
    p0 = 0.5 * (1 + value)
    if shot_model.mode == "bernoulli":
        n = shot_model.shots if precision is None else shot_model.resources_for(precision)
        if n is None:
            raise ValueError("bernoulli readout needs shots or a precision")
        return 2 * rng.binomial(n, p0, size=size) / n - 1
    n = shot_model.N if precision is None else shot_model.resources_for(precision)
    if n is None:
        raise ValueError("ae readout needs N or a precision")
    return 2 * amplitude_estimate(p0, n, rng, size) - 1


def hadamard_test(
    U,
    rho,
    shot_model: ShotModel = ShotModel(),
    seed=None,
    precision: float | None = None,
    imaginary: bool = True,
) -> complex:
    """Estimate Tr(U rho) from the ancilla statistics of a Hadamard test.

    The real part comes from Pr(0) = (1 + Re Tr(U rho))/2; the imaginary part
    from the same circuit with an extra phase -i on the controlled branch.
    """
    u = _check_unitary(U)
    rho = check_density(rho, "rho")
    if u.shape != rho.shape:
        raise ValidationError("U and rho differ in dimension")
    return _hadamard_from_value(complex(np.einsum("ij,ji->", u, rho)), shot_model, seed, precision, imaginary)


def _hadamard_from_value(val: complex, shot_model, seed, precision, imaginary) -> complex:
    rng = as_rng(seed)
    re = readout(val.real, shot_model, rng, precision)
    im = readout(val.imag, shot_model, rng, precision) if imaginary else 0.0
    return complex(re, im)


def lmr_steps(t: float, eps_h: float, strict: bool = True) -> int:
    """Number of partial-swap steps r = ceil(6 t^2 / eps_h), after range checks.

    ``strict=False`` drops the short-time condition eps_h/|t| <= 1/(6 pi);
    the per-step error 2 delta^2 still sums to at most eps_h/3 there.
    """
    if not 0 < eps_h <= 1 / 6:
        raise ValidationError(f"eps_h={eps_h} outside (0, 1/6]")
    if strict and t != 0 and eps_h / abs(t) > 1 / (6 * np.pi):
        raise ValidationError(
            f"eps_h/|t| = {eps_h / abs(t):.3g} exceeds 1/(6 pi); raise t or lower eps_h"
        )
    return int(np.ceil(6 * t * t / eps_h)) if t != 0 else 0


def partial_swap_step(rho: np.ndarray, sigma: np.ndarray, delta: float) -> np.ndarray:
    """Tr_2[exp(-i S delta) (rho (x) sigma) exp(i S delta)] in closed form."""
    c, s = np.cos(delta), np.sin(delta)
    comm = sigma @ rho - rho @ sigma
    return c * c * rho + s * s * sigma - 1j * s * c * comm


def lmr_evolve(rho_in, sigma_hamiltonian, t: float, eps_h: float, seed=None) -> np.ndarray:
    """Approximate exp(-i sigma t) rho exp(i sigma t) using copies of sigma.

    The channel is deterministic; ``seed`` is accepted for interface symmetry.
    """
    rho = check_density(rho_in, "rho_in")
    sigma = check_density(sigma_hamiltonian, "sigma")
    if rho.shape != sigma.shape:
        raise ValidationError("rho and sigma differ in dimension")
    r = lmr_steps(t, eps_h)
    if r == 0:
        return rho.copy()
    delta = t / r
    out = rho
    for _ in range(r):
        out = partial_swap_step(out, sigma, delta)
    return hermitize(out)


def lmr_unitary_factor(sigma, t: float, eps_h: float, strict: bool = True) -> np.ndarray:
    """Operator that controlled partial swaps apply to a Hadamard-test coherence.

    One controlled step of exp(-i delta |1><1| (x) S) with a fresh copy
    of sigma multiplies the |1><0| block by (cos delta - i sin delta sigma);
    r steps approximate exp(-i sigma t). The factor is a contraction, not a
    unitary, which is exactly the deviation the error model accounts for.
    """
    sigma = check_hermitian(sigma, "sigma")
    r = lmr_steps(t, eps_h, strict)
    if r == 0:
        return np.eye(len(sigma), dtype=complex)
    delta = t / r
    eig = eigh_herm(sigma)
    f = (np.cos(delta) - 1j * np.sin(delta) * eig.eigenvalues) ** r
    return eig.reconstruct(f)


def exact_unitary_factor(sigma, t: float) -> np.ndarray:
    eig = eigh_herm(sigma)
    return eig.reconstruct(np.exp(-1j * t * eig.eigenvalues))
