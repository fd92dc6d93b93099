"""Series-based gradient estimator for general (non-restricted) QBM Hamiltonians.

For each parameter theta_p the derivative of Tr(rho log sigma_v) is
approximated by

    Re sum_m sum_m' (i c_m c~_m' m pi / 2) sum_j L'_j
        E_s Tr(rho e^{i s pi m sigma_v / 2} e^{i pi m' sigma_v(theta_j) / 2} e^{i (1-s) pi m sigma_v / 2})

with c the log series, c~ the identity series and L' a central stencil in
theta_p. Summing over m' and j first gives B = sum_j L'_j F~(sigma_v(theta_j)),
after which the m sum with the s integral is the Frechet derivative of the
log series at sigma_v in direction B. That closed form is used whenever
the readout is exact; otherwise s is sampled, and with noisy or LMR readout
each (m, m', j, s) term goes through ``term_value``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..densemath import ValidationError, check_density, eigh_herm, frechet_log, trace_inner
from ..model import GradientVector, QbmHamiltonian, _theta, assemble, sigma_v_derivatives, visible_marginal
from ..series import (
    ErrorBudget,
    FourierSeries,
    GeneralEstimatorPrecondition,
    ModelStats,
    eval_fourier,
    identity_fourier,
    log_fourier,
    log_taylor_degree,
    log_taylor_coeffs,
    select_params,
)
from ..variational import boosting_count, gibbs_noise_channel
from .emulators import ShotBudgetError, ShotModel, as_rng, exact_unitary_factor, lmr_unitary_factor, readout
from .stencil import Stencil, stencil_weights

PILOT_SAMPLES = 64
CHEBYSHEV_SUCCESS = 0.75
# below this the certification grid cannot resolve the error anyway
SERIES_FLOOR = 1e-10


def _factor(sigma, tau: float, shot_model: ShotModel) -> np.ndarray:
    """exp(i tau sigma), or its partial-swap emulation in LMR mode.

    Short times below |tau| = 6 pi eps_h still get ceil(6 tau^2 / eps_h) >= 1
    steps; the step-count bound keeps the error within eps_h there too.
    """
    if tau == 0:
        return np.eye(len(sigma), dtype=complex)
    if not shot_model.lmr:
        return exact_unitary_factor(sigma, -tau)
    return lmr_unitary_factor(sigma, -tau, shot_model.eps_h, strict=False)


def term_value(
    rho,
    sigma_v,
    sigma_v_at_node,
    m: int,
    m_prime: int,
    s: float,
    shot_model: ShotModel = ShotModel(),
    seed=None,
    precision: float | None = None,
) -> complex:
    """Tr(rho e^{i s pi m sigma_v/2} e^{i pi m' sigma_j/2} e^{i (1-s) pi m sigma_v/2}).

    With ``shot_model.lmr`` each exponential is replaced by the contraction a
    controlled sequence of partial swaps imprints on the Hadamard-test
    coherence; the readout then follows ``shot_model.mode``.
    """
    if not 0.0 <= s <= 1.0:
        raise ValidationError(f"s={s} outside [0, 1]")
    u1 = _factor(sigma_v, s * math.pi * m / 2, shot_model)
    u2 = _factor(sigma_v_at_node, math.pi * m_prime / 2, shot_model)
    u3 = _factor(sigma_v, (1 - s) * math.pi * m / 2, shot_model)
    val = complex(trace_inner(rho, u1 @ u2 @ u3))
    if shot_model.mode == "exact":
        return val
    rng = as_rng(seed)
    return complex(
        readout(val.real, shot_model, rng, precision),
        readout(val.imag, shot_model, rng, precision),
    )


def frechet_series(series: FourierSeries, sigma, direction) -> np.ndarray:
    """Directional derivative of the series function at sigma along a (complex) direction."""
    eig = eigh_herm(sigma)
    lam = eig.eigenvalues
    f = eval_fourier(series.coeffs, lam)
    df = eval_fourier(series.coeffs * (1j * np.pi / 2 * series.harmonics), lam)
    diff = lam[:, None] - lam[None, :]
    close = np.abs(diff) < 1e-9 * max(1.0, np.max(np.abs(lam)))
    with np.errstate(divide="ignore", invalid="ignore"):
        k = (f[:, None] - f[None, :]) / np.where(close, 1.0, diff)
    k = np.where(close, 0.5 * (df[:, None] + df[None, :]), k)
    v = eig.eigenvectors
    return v @ (k * (v.conj().T @ direction @ v)) @ v.conj().T


def model_stats(rho, model: QbmHamiltonian, theta, Delta: float, sigma_m: float = 1.0) -> ModelStats:
    """Spectral quantities of the current model that the budget formulas need."""
    h = assemble(model, theta)
    lam_h = np.linalg.eigvalsh(h)
    sigma, derivs = sigma_v_derivatives(model, theta)
    lam = np.linalg.eigvalsh(sigma)
    # ||Tr_h e^{-H}|| = Z ||sigma_v|| without forming e^{-H} unshifted
    log_z = float(-lam_h[0] + np.log(np.sum(np.exp(-(lam_h - lam_h[0])))))
    trh = float(np.exp(log_z) * lam[-1])
    dnorm = max((np.linalg.norm(d, 2) for d in derivs), default=1e-300)
    return ModelStats(
        sigma_norm=float(lam[-1]),
        delta_l=float(lam[0]),
        delta_u=float(lam[-1]),
        n_h=model.n_h,
        lambda_max=float(np.max(np.abs(lam_h))),
        trh_exp_norm=trh,
        gamma=float(np.log(max(dnorm, 1e-300))),
        sigma_m=float(sigma_m),
        Delta=float(Delta),
    )


@dataclass
class _Plan:
    budget: ErrorBudget
    log_series: FourierSeries
    id_series: FourierSeries
    mu: int
    Delta: float
    eps2_used: float


def _node_marginals(model, theta, p, stencil: Stencil) -> list[np.ndarray]:
    out = []
    for node in stencil.nodes:
        th = theta.copy()
        th[p] = node
        out.append(visible_marginal(model, th))
    return out


def _log_series(dl, du, eps1, M1) -> FourierSeries:
    if M1 is None:
        return log_fourier(dl, du, eps1)
    # Taylor degree consistent with the requested harmonic cap
    _, a1 = log_taylor_coeffs(log_taylor_degree(dl, eps1 / 4))
    eps_m = min(eps1, max(4 * a1 * math.exp(-dl * M1 / 2), SERIES_FLOOR))
    return log_fourier(dl, du, eps_m, M1=M1, K1=log_taylor_degree(dl, eps_m / 4))


def _series_plan(budget, mu, Delta, eps_total, M1, spectrum, node_spectrum) -> _Plan:
    dl, du = spectrum
    log_s = _log_series(dl, du, budget.eps1, M1)
    # identity precision from the budget, re-evaluated with the series actually used
    poly = math.pi * mu**2 * math.log((mu - 1) / 2)
    eps2_series = eps_total * Delta / (15 * max(log_s.M, 1) * log_s.l1_norm * poly)
    eps2 = min(budget.eps2, eps2_series)
    lo, hi = node_spectrum
    if hi > 0.5:
        raise GeneralEstimatorPrecondition(
            f"stencil nodes push ||sigma_v|| to {hi:.3f}; shrink Delta"
        )
    id_s = identity_fourier(lo, hi, eps2)
    return _Plan(budget, log_s, id_s, mu, Delta, eps2)


def _check_spectrum(sigma) -> tuple[float, float]:
    lam = np.linalg.eigvalsh(sigma)
    if lam[0] <= 0:
        raise GeneralEstimatorPrecondition("sigma_v must be positive definite")
    if lam[-1] >= 1 / math.pi:
        raise GeneralEstimatorPrecondition(
            f"series gradient estimator requires ||sigma_v|| < 1/pi; got {lam[-1]:.4f}"
        )
    return float(lam[0]), float(lam[-1])


def _mc_component(rho, sigma, series, B, n_boost, rng, tol):
    """Median of Chebyshev-sized antithetic means over s of the integrand."""
    eig = eigh_herm(sigma)
    lam = eig.eigenvalues
    v = eig.eigenvectors
    Bp = v.conj().T @ B @ v
    rp = v.conj().T @ rho @ v
    weights = rp.T * Bp  # rho'_ba B'_ab
    dc = series.coeffs * (1j * np.pi / 2 * series.harmonics)

    def integrand(s):
        s = np.atleast_1d(s)
        x = s[:, None, None] * lam[:, None] + (1 - s[:, None, None]) * lam[None, :]
        vals = eval_fourier(dc, x)
        return np.real(np.sum(vals * weights, axis=(1, 2)))

    def antithetic(n):
        s = rng.random(n)
        return 0.5 * (integrand(s) + integrand(1 - s))

    pilot = antithetic(PILOT_SAMPLES)
    var = float(np.var(pilot, ddof=1))
    k = max(PILOT_SAMPLES, int(math.ceil(4 * var / tol**2)))
    means = [float(np.mean(antithetic(k))) for _ in range(n_boost)]
    return float(np.median(means)), {"pilot_std": math.sqrt(var), "samples_per_mean": k, "means": n_boost}


def grad_general(
    rho,
    model: QbmHamiltonian,
    theta,
    eps_total: float,
    shot_model: ShotModel = ShotModel(),
    seed=None,
    Delta: float = 0.5,
    M1: int | None = None,
    mu: int | None = None,
    s_sampling: str = "auto",
    gibbs_noise: bool = False,
    diagnose: bool = False,
    max_terms: int = 200_000,
) -> GradientVector:
    """Gradient of the objective from the log/identity series and a theta stencil.

    ``s_sampling`` is "exact" (closed-form s integral), "mc" (Monte-Carlo with
    antithetic pairs and median boosting) or "auto": exact for noiseless
    non-LMR readout, per-term otherwise. ``M1``, ``mu`` and ``Delta`` override
    the budget for refinement sweeps. With ``diagnose`` the measured error
    is split into series, stencil+identity and sampling parts against the
    exact derivative of sigma_v.
    """
    rho = check_density(rho, "rho")
    theta = _theta(model, theta)
    if eps_total <= 0:
        raise ValueError("eps_total must be positive")
    rng = as_rng(seed)
    sigma = visible_marginal(model, theta)
    dl, du = _check_spectrum(sigma)

    per_term = shot_model.mode != "exact" or shot_model.lmr
    if s_sampling == "auto":
        s_sampling = "terms" if per_term else "exact"
    if s_sampling not in ("exact", "mc", "terms"):
        raise ValueError(f"unknown s_sampling {s_sampling!r}")

    budget = select_params(eps_total, model_stats(rho, model, theta, Delta))
    mu_used = mu or budget.mu
    stencils = [stencil_weights(mu_used, Delta, theta[p]) for p in range(model.D)]
    node_sigmas = [_node_marginals(model, theta, p, st) for p, st in enumerate(stencils)]
    if gibbs_noise:
        eps_g = min(budget.eps_G, 0.3)
        node_sigmas = [[gibbs_noise_channel(s, eps_g, rng) for s in ns] for ns in node_sigmas]
    spectra = [np.linalg.eigvalsh(s) for ns in node_sigmas for s in ns]
    node_lo = min(dl, min(s[0] for s in spectra))
    node_hi = max(du, max(s[-1] for s in spectra))
    if node_lo <= 0:
        raise GeneralEstimatorPrecondition("a stencil node has a singular sigma_v; shrink Delta")
    plan = _series_plan(budget, mu_used, Delta, eps_total, M1, (dl, du), (node_lo, node_hi))

    log_s, id_s = plan.log_series, plan.id_series
    n_boost = boosting_count(model.D, CHEBYSHEV_SUCCESS)
    values, comp_diag = [], []
    for p in range(model.D):
        st = stencils[p]
        F = [eig_apply(id_s, s) for s in node_sigmas[p]]
        B = st.apply(np.array(F))
        info: dict[str, Any] = {}
        if s_sampling == "exact":
            val = trace_inner(rho, frechet_series(log_s, sigma, B)).real
        elif s_sampling == "mc":
            val, info = _mc_component(rho, sigma, log_s, B, n_boost, rng, eps_total / 3)
        else:
            val, info = _term_component(
                rho, sigma, node_sigmas[p], st, log_s, id_s, shot_model, rng, eps_total, max_terms
            )
        values.append(-val)
        comp_diag.append(info)

    diagnostics: dict[str, Any] = {
        "budget": plan.budget.to_dict(),
        "mu": plan.mu,
        "Delta": Delta,
        "eps2_used": plan.eps2_used,
        "log_series": dict(plan.log_series.meta, certified_error=plan.log_series.certified_error, M=log_s.M),
        "identity_series": dict(plan.id_series.meta, certified_error=plan.id_series.certified_error, M=id_s.M),
        "node_spectrum": [node_lo, node_hi],
        "s_sampling": s_sampling,
        "components": comp_diag,
    }
    if diagnose:
        diagnostics["decomposition"] = _decompose(rho, model, theta, sigma, stencils, node_sigmas, log_s, id_s, values)
    return GradientVector(values, f"general[{s_sampling}]", diagnostics)


def eig_apply(series: FourierSeries, A) -> np.ndarray:
    eig = eigh_herm(A)
    return eig.reconstruct(eval_fourier(series.coeffs, eig.eigenvalues))


def _term_component(rho, sigma, node_sigmas, st, log_s, id_s, shot_model, rng, eps_total, max_terms):
    """Literal per-term evaluation with sampled s (noisy or LMR readout)."""
    ms = [m for m in range(-log_s.M, log_s.M + 1) if m != 0 and log_s.coeff(m) != 0]
    mps = [mp for mp in range(-id_s.M, id_s.M + 1) if id_s.coeff(mp) != 0]
    n_terms = len(ms) * len(mps) * st.mu
    if n_terms > max_terms:
        raise ShotBudgetError(
            f"per-term evaluation needs {n_terms} (m, m', j) terms (cap {max_terms}); "
            "use exact readout or a looser eps_total"
        )
    weight_sum = sum(abs(log_s.coeff(m)) * abs(m) * math.pi / 2 for m in ms)
    weight_sum *= sum(abs(id_s.coeff(mp)) for mp in mps) * float(np.sum(np.abs(st.dweights)))
    precision = eps_total / (3 * max(weight_sum, 1e-300)) if shot_model.mode != "exact" else None
    total = 0.0
    for m in ms:
        cm = log_s.coeff(m) * 1j * m * math.pi / 2
        for mp in mps:
            cmp_ = id_s.coeff(mp)
            for j, w in enumerate(st.dweights):
                if w == 0:
                    continue
                s = rng.random()
                tv = term_value(rho, sigma, node_sigmas[j], m, mp, s, shot_model, rng, precision)
                total += (cm * cmp_ * w * tv).real
    return float(total), {"terms": n_terms, "precision": precision}


def _decompose(rho, model, theta, sigma, stencils, node_sigmas, log_s, id_s, values):
    _, derivs = sigma_v_derivatives(model, theta)
    out = []
    for p, d in enumerate(derivs):
        exact = -trace_inner(rho, frechet_log(sigma, d)).real
        series_only = -trace_inner(rho, frechet_series(log_s, sigma, d.astype(complex))).real
        B = stencils[p].apply(np.array([eig_apply(id_s, s) for s in node_sigmas[p]]))
        closed = -trace_inner(rho, frechet_series(log_s, sigma, B)).real
        out.append({
            "exact": exact,
            "series_error": abs(series_only - exact),
            "stencil_identity_error": abs(closed - series_only),
            "sampling_error": abs(values[p] - closed),
            "total_error": abs(values[p] - exact),
        })
    return out
