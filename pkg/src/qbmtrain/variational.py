"""Variational upper bound on the relative entropy for restricted QBMs.

In a restricted model every hidden operator is diagonal in the computational
basis, so each hidden basis state |h> sees an effective visible energy
T[h] = sum_k theta_k E[h, k] Tr(rho v_k). The weights alpha = softmax(-T)
give the tightest bound of the Jensen family, and the gradient of that
bound only needs Hadamard-test estimates.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp, softmax

from .densemath import ValidationError, check_density, project_to_density, random_hermitian, trace_distance, trace_inner
from .estimator.emulators import SUCCESS_PROB, ShotBudgetError, ShotModel, as_rng, readout
from .model import GradientVector, QbmHamiltonian, _theta, assemble, entropy_term, gibbs_state

COMMUTE_TOL = 1e-10


class RestrictedReport(NamedTuple):
    ok: bool
    offending_pairs: list[tuple[int, int]]
    non_diagonal: list[int]

    def __bool__(self):
        return self.ok


class HiddenSpectrum(NamedTuple):
    E: np.ndarray  # shape (2**n_h, D)


class AlphaDistribution(NamedTuple):
    alpha: np.ndarray
    T: np.ndarray


def validate_restricted(model: QbmHamiltonian) -> RestrictedReport:
    """Check that hidden operators commute pairwise and are diagonal."""
    hidden = [t.hidden_op for t in model.terms]
    bad_pairs = []
    for j in range(len(hidden)):
        for k in range(j + 1, len(hidden)):
            c = hidden[j] @ hidden[k] - hidden[k] @ hidden[j]
            if np.linalg.norm(c) > COMMUTE_TOL:
                bad_pairs.append((j, k))
    non_diag = [
        k for k, h in enumerate(hidden)
        if np.linalg.norm(h - np.diag(np.diag(h))) > COMMUTE_TOL
    ]
    return RestrictedReport(not bad_pairs and not non_diag, bad_pairs, non_diag)


def _require_restricted(model: QbmHamiltonian) -> None:
    rep = validate_restricted(model)
    if not rep:
        raise ValidationError(
            f"model is not restricted: non-commuting pairs {rep.offending_pairs}, "
            f"non-diagonal hidden terms {rep.non_diagonal}"
        )


def hidden_spectrum(model: QbmHamiltonian) -> HiddenSpectrum:
    """E[h, k] = <h| h_k |h> for every hidden basis state h."""
    _require_restricted(model)
    return HiddenSpectrum(np.array([np.diag(t.hidden_op).real for t in model.terms]).T)


def visible_expectations(rho, model: QbmHamiltonian) -> np.ndarray:
    """Tr(rho v_k) for every term."""
    return np.array([trace_inner(rho, v).real for v in model.visible_operators])


def effective_energies(rho, model: QbmHamiltonian, theta, form: str = "hidden") -> np.ndarray:
    """T[h] from either textual form of the effective Hamiltonian.

    ``form="hidden"`` diagonalizes sum_k theta_k Tr(rho v_k) h_k on the hidden
    space; ``form="visible"`` traces sum_k E[h, k] theta_k v_k against rho for
    each h. The two agree identically for restricted models.
    """
    theta = _theta(model, theta)
    E = hidden_spectrum(model).E
    if form == "hidden":
        tv = visible_expectations(rho, model)
        dh = 2**model.n_h
        h_eff = np.zeros((dh, dh), dtype=complex)
        for th, t_k, term in zip(theta, tv, model.terms):
            h_eff += th * t_k * term.hidden_op
        return np.diag(h_eff).real.copy()
    if form == "visible":
        out = []
        for h in range(E.shape[0]):
            op = sum(E[h, k] * theta[k] * v for k, v in enumerate(model.visible_operators))
            out.append(trace_inner(rho, op).real if model.D else 0.0)
        return np.array(out)
    raise ValueError(f"unknown form {form!r}")


def alpha_distribution(rho, model: QbmHamiltonian, theta, check: bool = True) -> AlphaDistribution:
    rho = check_density(rho, "rho")
    T = effective_energies(rho, model, theta, "hidden")
    if check:
        T2 = effective_energies(rho, model, theta, "visible")
        if np.max(np.abs(T - T2)) > 1e-10 * max(1.0, np.max(np.abs(T))):
            raise AssertionError("effective-energy forms disagree")
    return AlphaDistribution(softmax(-T), T)


def _log_partition(model: QbmHamiltonian, theta) -> float:
    lam = np.linalg.eigvalsh(assemble(model, theta))
    return float(logsumexp(-lam))


def variational_bound(rho, model: QbmHamiltonian, theta) -> float:
    """Upper bound S~ >= S(rho | sigma_v) with alpha at its optimum."""
    rho = check_density(rho, "rho")
    ad = alpha_distribution(rho, model, theta)
    a = ad.alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.sum(np.where(a > 0, a * np.log(a), 0.0))
    return entropy_term(rho) + float(a @ ad.T) + float(ent) + _log_partition(model, theta)


def grad_variational(rho, model: QbmHamiltonian, theta) -> GradientVector:
    """E_h[E_{h,p}] Tr(rho v_p) - Tr((v_p (x) h_p) G)."""
    rho = check_density(rho, "rho")
    ad = alpha_distribution(rho, model, theta)
    E = hidden_spectrum(model).E
    tv = visible_expectations(rho, model)
    g = gibbs_state(assemble(model, theta))
    gibbs_exp = np.array([trace_inner(g, op).real for op in model.operators])
    return GradientVector((ad.alpha @ E) * tv - gibbs_exp, "variational")


def boosting_count(D: int, p: float = SUCCESS_PROB) -> int:
    """Repetitions n >= 2p/(p - 1/2)^2 ln(3D) for a median over D components."""
    if D < 1:
        raise ValueError("D must be positive")
    return int(np.ceil(2 * p / (p - 0.5) ** 2 * np.log(3 * D)))


def gibbs_noise_channel(state, epsilon_G: float, seed=None, max_tries: int = 60) -> np.ndarray:
    """Random valid state within trace distance ``epsilon_G`` of ``state``.

    A traceless Hermitian kick of trace-norm 2 epsilon_G is added and the
    result is projected back onto unit-trace PSD matrices; the kick is
    halved until the measured distance is within budget.
    """
    state = check_density(state, "state")
    if not 0 <= epsilon_G < 1 / 3:
        raise ValidationError("epsilon_G must lie in [0, 1/3)")
    if epsilon_G == 0:
        return state.copy()
    rng = as_rng(seed)
    d = len(state)
    x = random_hermitian(d, rng)
    x -= np.trace(x).real / d * np.eye(d)
    x /= np.sum(np.abs(np.linalg.eigvalsh(x)))
    scale = 2 * epsilon_G
    for _ in range(max_tries):
        out = project_to_density(state + scale * x)
        if trace_distance(out, state) <= epsilon_G:
            return out
        scale /= 2
    return state.copy()


def _check_epsilon(epsilon: float, e_max: float) -> None:
    hi = min(1 / 3, 4 * e_max) if e_max > 0 else 1 / 3
    if not 0 < epsilon < hi:
        raise ValidationError(f"epsilon={epsilon} outside (0, {hi:.4g})")


def grad_variational_sampled(
    rho,
    model: QbmHamiltonian,
    theta,
    epsilon: float,
    shot_model: ShotModel = ShotModel(),
    seed=None,
    epsilon_G: float = 0.0,
) -> GradientVector:
    """Shot-based estimate of the variational gradient.

    Budget: the visible expectations feeding alpha are read to precision
    delta_t / ||theta||_1 with delta_t = epsilon / (16 max|E|) so the
    effective energies err by at most delta_t (half of epsilon after
    propagation through the softmax). The alpha-weighted hidden
    expectation and the Gibbs expectation get epsilon / 4 each. Each
    AE/Bernoulli scalar is the median of ``boosting_count(D)`` repetitions.
    """
    rho = check_density(rho, "rho")
    theta = _theta(model, theta)
    E = hidden_spectrum(model).E
    e_max = float(np.max(np.abs(E))) if E.size else 0.0
    _check_epsilon(epsilon, e_max)
    rng = as_rng(seed)
    n_boost = boosting_count(model.D) if shot_model.mode != "exact" else 1
    theta_l1 = float(np.sum(np.abs(theta)))

    def precisions(eps):
        d_t = eps / (16 * e_max) if e_max > 0 else eps
        return d_t, (d_t / theta_l1 if theta_l1 > 0 else d_t), eps / 4

    def resources(eps):
        _, p_t, p_term = precisions(eps)
        return shot_model.resources_for(p_t), shot_model.resources_for(p_term)

    delta_t, prec_t, prec_term = precisions(epsilon)
    try:
        n_t, n_term = resources(epsilon)
    except ShotBudgetError as exc:
        hi = min(1 / 3, 4 * e_max) if e_max > 0 else 1 / 3
        for cand in epsilon * 1.25 ** np.arange(1, 200):
            if cand >= hi:
                break
            try:
                resources(cand)
            except ShotBudgetError:
                continue
            raise ShotBudgetError(f"{exc}; smallest feasible epsilon is about {cand:.3g}") from exc
        raise ShotBudgetError(f"{exc}; no epsilon below {hi:.3g} fits the query cap") from exc
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(rng.integers(2**63)).spawn(3)]

    def estimate(value, precision, stream):
        if shot_model.mode == "exact":
            return float(value)
        return float(np.median(readout(value, shot_model, stream, precision, size=n_boost)))

    tv_true = visible_expectations(rho, model)
    tv_hat = np.array([estimate(t, prec_t, streams[0]) for t in tv_true])

    T_hat = E @ (theta * tv_hat)
    alpha_hat = softmax(-T_hat)
    hidden_true = alpha_hat @ E
    hidden_hat = np.array([estimate(x, prec_term, streams[1]) for x in hidden_true])

    g = gibbs_state(assemble(model, theta))
    if epsilon_G > 0:
        g = gibbs_noise_channel(g, epsilon_G, streams[2])
    gibbs_true = np.array([trace_inner(g, op).real for op in model.operators])
    gibbs_hat = np.array([estimate(x, prec_term, streams[2]) for x in gibbs_true])

    values = hidden_hat * tv_hat - gibbs_hat
    per_estimate = [n_t] * model.D + [n_term] * (2 * model.D)
    diagnostics = {
        "epsilon": epsilon,
        "delta_t": delta_t,
        "precision_visible": prec_t,
        "precision_terms": prec_term,
        "boosting_count": n_boost,
        "shots_per_estimate": {"visible": n_t, "terms": n_term},
        "shots_total": int(sum(per_estimate) * n_boost),
        "shot_model": shot_model.mode,
    }
    return GradientVector(values, f"variational_sampled[{shot_model.mode}]", diagnostics)
