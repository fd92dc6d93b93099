"""Fourier-like series for the identity and the logarithm, plus budget selection.

Every series is a trigonometric polynomial sum_m c_m exp(i pi m x / 2),
m = -M..M. Construction follows the constructive route:

1. identity: x = (2/pi) arcsin(sin(pi x / 2)) with arcsin replaced by its
   Taylor polynomial and every sin power expanded binomially, dropping the
   Chernoff-small outer harmonics;
2. logarithm: log x = log(1 + y) with y = x - 1, the Taylor polynomial of
   log(1 + y) is evaluated on the identity series for y by coefficient
   convolution (Horner), then shifted back to x and truncated at M1.

Every returned series is checked on a dense Chebyshev grid with local
refinement, and the measured sup error is stored as ``certified_error``.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import fftconvolve
from scipy.stats import binom

from .densemath import ValidationError, eigh_herm

SERIES_FORMAT = "qbm-fourier/1"
GRID_POINTS = 10_000
MAX_HARMONIC = 2**18
EULER_E2 = math.e**2


class CertificationError(RuntimeError):
    """Series misses its requested accuracy on the certification grid."""

    def __init__(self, message: str, measured_error: float, requested: float):
        super().__init__(message)
        self.measured_error = measured_error
        self.requested = requested


class DomainWarning(RuntimeWarning):
    """Matrix spectrum leaves the domain a series was certified on."""


@dataclass
class FourierSeries:
    coeffs: np.ndarray
    domain: tuple[float, float]
    certified_error: float = float("nan")
    l1_bound: float = float("inf")
    kind: str = "custom"
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.ndim != 1 or len(self.coeffs) % 2 != 1:
            raise ValidationError("coefficient vector must have odd length 2M+1")
        self.domain = (float(self.domain[0]), float(self.domain[1]))

    @property
    def M(self) -> int:
        return (len(self.coeffs) - 1) // 2

    @property
    def harmonics(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    @property
    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.coeffs)))

    def coeff(self, m: int) -> complex:
        return complex(self.coeffs[m + self.M]) if abs(m) <= self.M else 0j

    def __call__(self, x) -> np.ndarray:
        return eval_fourier(self.coeffs, x)

    def truncated(self, M: int) -> "FourierSeries":
        M = min(M, self.M)
        c = self.coeffs[self.M - M : self.M + M + 1].copy()
        return FourierSeries(c, self.domain, float("nan"), self.l1_bound, self.kind, dict(self.meta))


def eval_fourier(coeffs: np.ndarray, x) -> np.ndarray:
    """sum_m c_m exp(i pi m x / 2) at real points x (any shape)."""
    coeffs = np.asarray(coeffs, dtype=complex)
    M = (len(coeffs) - 1) // 2
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1)
    # Clenshaw-free direct sum in blocks to bound memory
    out = np.empty(flat.shape, dtype=complex)
    m = np.arange(-M, M + 1)
    block = max(1, 2**22 // max(len(m), 1))
    for i in range(0, len(flat), block):
        ph = np.exp(1j * np.pi / 2 * np.outer(flat[i : i + block], m))
        out[i : i + block] = ph @ coeffs
    return out.reshape(x.shape)


def convolve_coeffs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Coefficients of the product of two series (both centred at m = 0)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if len(a) * len(b) <= 4096:
        return np.convolve(a, b)
    return fftconvolve(a, b)


def _truncate(c: np.ndarray, M: int) -> np.ndarray:
    cur = (len(c) - 1) // 2
    if cur <= M:
        return c
    return c[cur - M : cur + M + 1]


def chebyshev_grid(lo: float, hi: float, n: int = GRID_POINTS) -> np.ndarray:
    """Chebyshev points of the second kind, endpoints included."""
    k = np.arange(n)
    return np.sort(0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * k / (n - 1)))


def measure_sup_error(coeffs, func, lo: float, hi: float, n: int = GRID_POINTS) -> float:
    """Sup |series - func| over [lo, hi]: grid scan plus bounded local refinement."""
    if hi == lo:
        x0 = np.array([lo])
        return float(np.abs(eval_fourier(coeffs, x0) - func(x0))[0])
    x = chebyshev_grid(lo, hi, n)
    err = np.abs(eval_fourier(coeffs, x) - func(x))
    best = float(err.max())
    for i in np.argsort(err)[-5:]:
        a, b = x[max(i - 1, 0)], x[min(i + 1, n - 1)]
        if b <= a:
            continue
        res = minimize_scalar(
            lambda t: -abs(complex(eval_fourier(coeffs, np.array([t]))[0]) - func(np.array([t]))[0]),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-12 * max(1.0, abs(b))},
        )
        best = max(best, -float(res.fun))
    return best


def log_taylor_coeffs(K1: int) -> tuple[np.ndarray, float]:
    """Coefficients a_k = (-1)^(k-1)/k, k = 1..K1, of log around 1, and their l1 norm.

    The returned vector is indexed by power: ``a[k]`` multiplies (x - 1)^k,
    with ``a[0] = 0``.
    """
    if K1 < 1:
        raise ValueError("K1 must be >= 1")
    k = np.arange(1, K1 + 1)
    a = np.concatenate([[0.0], (-1.0) ** (k - 1) / k])
    return a, float(np.sum(1.0 / k))


def arcsin_taylor(K: int) -> np.ndarray:
    """b_k with arcsin z = sum_k b_k z^(2k+1), k = 0..K."""
    k = np.arange(K + 1)
    # C(2k, k) / 4^k by the ratio (2k - 1) / (2k), which never overflows
    central = np.cumprod(np.concatenate([[1.0], (2 * k[1:] - 1) / (2 * k[1:])]))
    return central / (2 * k + 1)


def sin_power_coeffs(l: int, M: int) -> tuple[np.ndarray, float]:
    """Harmonics of sin(u)^l in exp(i m u), |m| <= M, and the dropped l1 mass.

    sin^l u = (2i)^(-l) sum_j C(l, j) (-1)^(l-j) exp(i u (2j - l)); C(l,j) 2^-l is
    the Binomial(l, 1/2) pmf, which keeps large l stable.
    """
    j = np.arange(l + 1)
    m = 2 * j - l
    keep = np.abs(m) <= M
    pmf = binom.pmf(j, l, 0.5)
    sign = np.where((l - j) % 2 == 0, 1.0, -1.0)
    phase = (-1j) ** (l % 4)  # i^(-l)
    out = np.zeros(2 * M + 1, dtype=complex)
    out[m[keep] + M] = phase * sign[keep] * pmf[keep]
    return out, float(pmf[~keep].sum())


def _identity_params(
    z_max: float, eps: float, K_floor: int = 0, M_floor: int = 1
) -> tuple[int, int]:
    """Arcsin degree K2 and harmonic cap M2 so that each error part is eps/2."""
    if not 0 <= z_max < 1:
        raise ValidationError("identity series needs |sin(pi x/2)| < 1 on the domain")
    K, central = 0, 1.0
    while True:
        central *= (2 * K + 1) / (2 * K + 2)
        b_next = central / (2 * K + 3)
        tail = (2 / np.pi) * b_next * z_max ** (2 * K + 3) / (1 - z_max**2)
        if tail <= eps / 2:
            break
        K += 1
    K = max(K, K_floor)
    b = arcsin_taylor(K)
    ls = 2 * np.arange(K + 1) + 1
    M = max(1, M_floor)
    while True:
        drop = np.where(M >= ls, 0.0, np.minimum(1.0, 2 * np.exp(-(M**2) / (2.0 * ls))))
        if (2 / np.pi) * np.sum(b * drop) <= eps / 2:
            break
        M += 1
    return K, M


def _identity_coeffs(K2: int, M2: int) -> np.ndarray:
    b = arcsin_taylor(K2)
    c = np.zeros(2 * M2 + 1, dtype=complex)
    for k, bk in enumerate(b):
        sp, _ = sin_power_coeffs(2 * k + 1, M2)
        c += (2 / np.pi) * bk * sp
    return c


def identity_degree_formula(delta_u: float, eps2: float) -> tuple[int, int]:
    """K2 = ceil(ln(4/eps2)/ln(1/du)), M2 = ceil(ln(4/eps2) sqrt(1/(2 ln(1/du))))."""
    lg = np.log(1 / delta_u)
    return (
        int(np.ceil(np.log(4 / eps2) / lg)),
        int(np.ceil(np.log(4 / eps2) * np.sqrt(1 / (2 * lg)))),
    )


def _build_identity(lo: float, hi: float, eps: float, use_formula_floor: bool) -> FourierSeries:
    z_max = float(np.max(np.abs(np.sin(np.pi / 2 * np.array([lo, hi])))))
    pK, pM = identity_degree_formula(max(abs(lo), abs(hi)), eps) if use_formula_floor else (0, 1)
    K2, M2 = _identity_params(z_max, eps, pK, pM)
    c = _identity_coeffs(K2, M2)
    err = measure_sup_error(c, lambda x: x.astype(complex), lo, hi)
    s = FourierSeries(c, (lo, hi), err, 1.0, "identity", {"K2": K2, "M2": M2, "eps2": eps})
    if err > eps:
        raise CertificationError(
            f"identity series error {err:.3e} exceeds {eps:.3e}", err, eps
        )
    return s


def identity_fourier(delta_l: float, delta_u: float, eps2: float) -> FourierSeries:
    """Series approximating x on [delta_l, delta_u] to within eps2, l1 norm <= 1."""
    if not 0 < delta_l <= delta_u <= 0.5:
        raise ValidationError(
            f"identity series domain [{delta_l}, {delta_u}] must satisfy 0 < dl <= du <= 1/2"
        )
    if eps2 <= 0:
        raise ValueError("eps2 must be positive")
    return _build_identity(delta_l, delta_u, eps2, use_formula_floor=True)


def log_taylor_degree(delta_l: float, eps: float) -> int:
    """Smallest K with (1 - dl)^(K+1) / dl <= eps: the log(1+y) tail on y >= dl - 1."""
    q = 1 - delta_l
    return max(1, int(np.ceil(np.log(eps * delta_l) / np.log(q) - 1)))


def log_harmonic_cap(a_l1: float, delta: float, eps: float) -> int:
    """M = 2 ceil(ln(4 ||a||_1 / eps) / delta), the distance-to-boundary cap."""
    return 2 * int(np.ceil(np.log(4 * a_l1 / eps) / delta))


def log_fourier(
    delta_l: float,
    delta_u: float,
    eps1: float,
    M1: int | None = None,
    K1: int | None = None,
    max_enlarge: int = 6,
) -> FourierSeries:
    """Series approximating log x on [delta_l, delta_u] to within eps1.

    The budget splits as eps1/4 for the Taylor tail, eps1/5 for the identity
    series error amplified by |d log/dx| <= 1/dl, and the rest for the final
    harmonic truncation. ``M1`` defaults to the distance-to-boundary cap and
    is doubled (up to ``max_enlarge`` times) until grid certification
    passes; an explicit ``M1`` is used as-is.
    """
    if not 0 < delta_l <= delta_u < 1:
        raise ValidationError(f"log series domain [{delta_l}, {delta_u}] must lie in (0, 1)")
    if eps1 <= 0:
        raise ValueError("eps1 must be positive")
    K1 = K1 or log_taylor_degree(delta_l, eps1 / 4)
    a, a_l1 = log_taylor_coeffs(K1)
    ylo, yhi = delta_l - 1, delta_u - 1
    ident = _build_identity(ylo, yhi, eps1 * delta_l / 5, use_formula_floor=False)
    c_id = ident.coeffs
    # Horner in coefficient space: f = (...(a_K y + a_{K-1}) y + ...) y + a_0
    f = np.array([a[K1]], dtype=complex)
    for k in range(K1 - 1, -1, -1):
        f = _truncate(convolve_coeffs(f, c_id), MAX_HARMONIC)
        f[(len(f) - 1) // 2] += a[k]
    Mfull = (len(f) - 1) // 2
    f = f * np.exp(-1j * np.pi / 2 * np.arange(-Mfull, Mfull + 1))  # y = x - 1
    f = 0.5 * (f + np.conj(f[::-1]))  # exact conjugate symmetry (real target)

    explicit = M1 is not None
    M = M1 if explicit else log_harmonic_cap(a_l1, delta_l, eps1)
    tries = 0
    while True:
        c = _truncate(f, M)
        if len(c) < 2 * M + 1:
            c = np.pad(c, (M - (len(c) - 1) // 2,) * 2)
        err = measure_sup_error(c, lambda x: np.log(x).astype(complex), delta_l, delta_u)
        if err <= eps1 or explicit or M >= Mfull or tries >= max_enlarge:
            break
        M, tries = 2 * M, tries + 1
    meta = {
        "K1": K1, "M1": M, "eps1": eps1, "a_l1": a_l1, "identity_K2": ident.meta["K2"],
        "identity_M2": ident.meta["M2"], "full_M": Mfull, "enlargements": tries,
    }
    s = FourierSeries(c, (delta_l, delta_u), err, a_l1, "log", meta)
    if err > eps1 and not explicit:
        raise CertificationError(
            f"log series error {err:.3e} exceeds {eps1:.3e} at M1={M}", err, eps1
        )
    return s


def eval_fourier_matrix(series: FourierSeries, A, check_domain: bool = True, tol: float = 1e-12) -> np.ndarray:
    """sum_m c_m exp(i pi m A / 2) through the eigendecomposition of A."""
    eig = eigh_herm(A)
    lam = eig.eigenvalues
    lo, hi = series.domain
    if check_domain and (lam[0] < lo - tol or lam[-1] > hi + tol):
        warnings.warn(
            f"spectrum [{lam[0]:.4g}, {lam[-1]:.4g}] leaves series domain [{lo:.4g}, {hi:.4g}]",
            DomainWarning,
            stacklevel=2,
        )
    return eig.reconstruct(eval_fourier(series.coeffs, lam))


class ModelStats(NamedTuple):
    sigma_norm: float
    delta_l: float
    delta_u: float
    n_h: int
    lambda_max: float
    trh_exp_norm: float
    gamma: float
    sigma_m: float
    Delta: float


@dataclass
class ErrorBudget:
    epsilon_total: float
    K1: int
    K2: int
    L: int
    M1: int
    M2: int
    mu: int
    Delta: float
    eps1: float
    eps2: float
    eps_s: float
    eps_h: float
    eps_G: float
    gamma: float
    lambda_max: float
    sigma_m: float
    delta_l: float
    delta_u: float
    a_l1: float
    Lambda: float
    stats: ModelStats

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "stats"}
        d["stats"] = self.stats._asdict()
        return d


class GeneralEstimatorPrecondition(ValidationError):
    """Spectral precondition of the series gradient estimator is violated."""


def _ceil_pos(x: float) -> int:
    return max(1, int(math.ceil(x - 1e-12)))


def _odd_at_least(x: float, floor: int = 5) -> int:
    n = max(floor, int(math.ceil(x - 1e-12)))
    return n if n % 2 else n + 1


def k1_formula(sigma_norm: float, eps: float) -> int:
    """K1 = ceil(ln((1 - ||sigma||) eps / 9) / ln ||sigma||), the truncation degree of the budget."""
    if not 0 < sigma_norm < 1:
        raise ValueError("sigma_norm must lie in (0, 1)")
    return _ceil_pos(math.log((1 - sigma_norm) * eps / 9) / math.log(sigma_norm))


def select_params(eps_total: float, stats: ModelStats) -> ErrorBudget:
    """Smallest parameters meeting each lower bound of the series estimator."""
    eps = float(eps_total)
    if eps <= 0:
        raise ValueError("eps_total must be positive")
    s, dl, du = stats.sigma_norm, stats.delta_l, stats.delta_u
    if not 0 < dl <= du < 1:
        raise GeneralEstimatorPrecondition(f"need 0 < delta_l <= delta_u < 1, got [{dl}, {du}]")
    if du >= 1 / np.pi or s >= 1 / np.pi:
        raise GeneralEstimatorPrecondition(
            f"series gradient estimator requires ||sigma_v|| < 1/pi = {1/np.pi:.4f}; "
            f"got {max(du, s):.4f}"
        )
    if stats.Delta <= 0:
        raise ValueError("Delta must be positive")
    eg = math.exp(stats.gamma)
    K1 = k1_formula(s, eps)
    L = _ceil_pos(math.log(eps / (9 * math.pi * K1 * eg)) / math.log(s * math.pi))
    M1 = _ceil_pos(math.sqrt(L * max(math.log(9 * eg * K1 * L * math.pi / (2 * eps)), 1e-300)))
    _, a_l1 = log_taylor_coeffs(K1)
    Lam = 6 * a_l1 * EULER_E2 * abs(stats.lambda_max) * math.pi * stats.trh_exp_norm
    mu = _odd_at_least(stats.n_h + math.log(max(M1 * Lam / eps, 1.0)))
    poly = math.pi * mu**2
    scale = eps * stats.Delta / (M1 * a_l1)
    eps2 = scale / (15 * poly * math.log((mu - 1) / 2))
    K2 = _ceil_pos(math.log(4 / eps2) / math.log(1 / du))
    M2 = _ceil_pos(math.log(4 / eps2) * math.sqrt(1 / (2 * math.log(1 / du))))
    sm = max(stats.sigma_m, 1e-300)
    eps_s = scale / (15 * sm * poly * math.log(mu / 2))
    eps_h = scale / (5 * poly * math.log(mu / 2))
    eps_G = eps_h / (math.pi * max(M1, M2) / 2)
    return ErrorBudget(
        eps, K1, K2, L, M1, M2, mu, stats.Delta, eps / 3, eps2, eps_s, eps_h, eps_G,
        stats.gamma, stats.lambda_max, stats.sigma_m, dl, du, a_l1, Lam, stats,
    )


def check_budget(b: ErrorBudget) -> list[str]:
    """Re-evaluate every lower/upper bound independently; returns violations."""
    st = b.stats
    eps, s, du = b.epsilon_total, st.sigma_norm, b.delta_u
    eg = math.exp(b.gamma)
    out = []
    h_k1 = sum(1.0 / k for k in range(1, b.K1 + 1))

    def need(ok, msg):
        if not ok:
            out.append(msg)

    need(0 < b.delta_l <= du < 1 / math.pi, "spectral bounds violate 0 < dl <= du < 1/pi")
    need(b.K1 >= math.log((1 - s) * eps / 9) / math.log(s), "K1 below bound")
    need(b.L >= math.log(eps / (9 * math.pi * b.K1 * eg)) / math.log(s * math.pi), "L below bound")
    need(b.M1 >= math.sqrt(max(0.0, b.L * math.log(9 * eg * b.K1 * b.L * math.pi / (2 * eps)))), "M1 below bound")
    lam = 6 * h_k1 * EULER_E2 * abs(b.lambda_max) * math.pi * st.trh_exp_norm
    need(b.mu >= st.n_h + math.log(b.M1 * lam / eps) if lam > 0 else True, "mu below bound")
    need(b.mu >= 5 and b.mu % 2 == 1, "mu must be odd and >= 5")
    base = eps * b.Delta / (b.M1 * h_k1 * math.pi * b.mu**2)
    need(b.eps2 <= base / (15 * math.log((b.mu - 1) / 2)) * (1 + 1e-12), "eps2 above bound")
    need(b.K2 >= math.log(4 / b.eps2) / math.log(1 / du), "K2 below bound")
    need(b.M2 >= math.log(4 / b.eps2) * math.sqrt(1 / (2 * math.log(1 / du))), "M2 below bound")
    need(b.eps_s * max(b.sigma_m, 1e-300) <= base / (15 * math.log(b.mu / 2)) * (1 + 1e-12), "eps_s above bound")
    need(b.eps_h <= base / (5 * math.log(b.mu / 2)) * (1 + 1e-12), "eps_h above bound")
    need(b.eps_G <= b.eps_h / (math.pi * max(b.M1, b.M2) / 2) * (1 + 1e-12), "eps_G above bound")
    need(abs(b.eps1 - eps / 3) <= 1e-15 * eps, "eps1 must be eps/3")
    return out


def series_to_dict(s: FourierSeries) -> dict:
    return {
        "format": SERIES_FORMAT,
        "kind": s.kind,
        "domain": [float.hex(s.domain[0]), float.hex(s.domain[1])],
        "certified_error": float.hex(float(s.certified_error)),
        "l1_bound": float.hex(float(s.l1_bound)),
        "M": s.M,
        "re": [float.hex(float(v)) for v in s.coeffs.real],
        "im": [float.hex(float(v)) for v in s.coeffs.imag],
        "meta": s.meta,
    }


def series_from_dict(d: dict) -> FourierSeries:
    if d.get("format") != SERIES_FORMAT:
        raise ValidationError(f"unknown series format {d.get('format')!r}")
    re = np.array([float.fromhex(v) for v in d["re"]])
    im = np.array([float.fromhex(v) for v in d["im"]])
    if len(re) != 2 * d["M"] + 1:
        raise ValidationError("coefficient count does not match M")
    return FourierSeries(
        re + 1j * im,
        tuple(float.fromhex(v) for v in d["domain"]),
        float.fromhex(d["certified_error"]),
        float.fromhex(d["l1_bound"]),
        d.get("kind", "custom"),
        d.get("meta", {}),
    )


def export_series(path: str | os.PathLike, s: FourierSeries) -> None:
    with open(path, "w") as fh:
        json.dump(series_to_dict(s), fh, indent=1)
        fh.write("\n")


def import_series(path: str | os.PathLike) -> FourierSeries:
    with open(path) as fh:
        return series_from_dict(json.load(fh))
