"""QBM Hamiltonians, Gibbs states, the relative-entropy objective and exact gradients.

A model is a list of Pauli-string terms ``v_k (x) h_k`` acting on visible
(left) and hidden (right) qubits; it is paired with a real parameter vector
``theta`` of the same length. Every state here is a dense matrix.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import cached_property, reduce
from itertools import combinations, product
from typing import Any, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .densemath import (
    ValidationError,
    check_density,
    check_hermitian,
    eigh_herm,
    frechet_exp,
    frechet_log,
    hermitize,
    logm_psd,
    partial_trace,
    random_density_matrix,
    trace_inner,
)

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
KINDS = ("visible", "hidden", "interaction")
MODEL_FORMAT = "qbm-model/1"


def pauli_matrix(label: str) -> np.ndarray:
    """Dense matrix of a Pauli string; the empty string is the 1x1 identity."""
    try:
        mats = [PAULI[c] for c in label.upper()]
    except KeyError as exc:
        raise ValidationError(f"bad Pauli label {label!r}") from exc
    return reduce(np.kron, mats, np.ones((1, 1), dtype=complex))


def _is_identity(label: str) -> bool:
    return set(label.upper()) <= {"I"}


@dataclass(frozen=True)
class OperatorTerm:
    """One Hamiltonian term ``visible (x) hidden`` given by Pauli labels."""

    visible: str
    hidden: str
    kind: str = ""

    def __post_init__(self):
        v, h = self.visible.upper(), self.hidden.upper()
        object.__setattr__(self, "visible", v)
        object.__setattr__(self, "hidden", h)
        inferred = (
            "hidden" if _is_identity(v) else
            "visible" if _is_identity(h) else "interaction"
        )
        if _is_identity(v) and _is_identity(h):
            raise ValidationError("term is proportional to the identity")
        if not self.kind:
            object.__setattr__(self, "kind", inferred)
        elif self.kind != inferred:
            raise ValidationError(
                f"term {v}|{h} tagged {self.kind!r} but its factors say {inferred!r}"
            )

    @property
    def visible_op(self) -> np.ndarray:
        return pauli_matrix(self.visible)

    @property
    def hidden_op(self) -> np.ndarray:
        return pauli_matrix(self.hidden)

    def to_dict(self) -> dict:
        return {"visible": self.visible, "hidden": self.hidden, "kind": self.kind}


@dataclass(frozen=True, eq=False)
class QbmHamiltonian:
    n_v: int
    n_h: int
    terms: tuple[OperatorTerm, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.n_v < 1 or self.n_h < 0:
            raise ValidationError("need n_v >= 1 and n_h >= 0")
        for t in self.terms:
            if len(t.visible) != self.n_v or len(t.hidden) != self.n_h:
                raise ValidationError(
                    f"term {t.visible}|{t.hidden} does not fit {self.n_v}+{self.n_h} qubits"
                )

    @property
    def D(self) -> int:
        return len(self.terms)

    @property
    def dim(self) -> int:
        return 2 ** (self.n_v + self.n_h)

    def counts(self) -> dict[str, int]:
        return {k: sum(t.kind == k for t in self.terms) for k in KINDS}

    @cached_property
    def operators(self) -> tuple[np.ndarray, ...]:
        """Full-space matrices ``v_k (x) h_k``, materialized once."""
        return tuple(np.kron(t.visible_op, t.hidden_op) for t in self.terms)

    @cached_property
    def visible_operators(self) -> tuple[np.ndarray, ...]:
        return tuple(t.visible_op for t in self.terms)

    def __eq__(self, other):
        return (
            isinstance(other, QbmHamiltonian)
            and (self.n_v, self.n_h, self.terms) == (other.n_v, other.n_h, other.terms)
        )

    def __hash__(self):
        return hash((self.n_v, self.n_h, self.terms))


@dataclass
class GradientVector:
    values: np.ndarray
    method: str
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def __len__(self):
        return len(self.values)


def _theta(model: QbmHamiltonian, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.D,):
        raise ValidationError(f"theta has shape {theta.shape}, model has D={model.D}")
    return theta


def assemble(model: QbmHamiltonian, theta) -> np.ndarray:
    theta = _theta(model, theta)
    h = np.zeros((model.dim, model.dim), dtype=complex)
    for th, op in zip(theta, model.operators):
        h += th * op
    return h


def _shifted_exp(h) -> tuple[np.ndarray, np.ndarray]:
    """Return (-H + lambda_min I, exp of it) so the exponential never overflows."""
    h = check_hermitian(h, "Hamiltonian")
    eig = eigh_herm(h)
    lam = eig.eigenvalues
    shifted = -(lam - lam[0])
    return -(h - lam[0] * np.eye(len(lam))), hermitize(eig.reconstruct(np.exp(shifted)))


def gibbs_state(h) -> np.ndarray:
    _, e = _shifted_exp(h)
    return e / np.trace(e).real


def visible_marginal(model: QbmHamiltonian, theta) -> np.ndarray:
    return partial_trace(gibbs_state(assemble(model, theta)), model.n_v, model.n_h)


def entropy_term(rho) -> float:
    """Tr(rho log rho) with the 0 log 0 = 0 convention."""
    lam = np.linalg.eigvalsh(hermitize(np.asarray(rho, dtype=complex)))
    lam = lam[lam > 0]
    return float(np.sum(lam * np.log(lam)))


def relative_entropy(rho, sigma, eigenfloor: float = 1e-12) -> float:
    """Quantum relative entropy S(rho | sigma) in nats."""
    rho = check_density(rho, "rho")
    sigma = check_density(sigma, "sigma")
    if rho.shape != sigma.shape:
        raise ValidationError("rho and sigma differ in dimension")
    log_sigma = logm_psd(sigma, eigenfloor).matrix
    return entropy_term(rho) - trace_inner(rho, log_sigma).real


def objective(rho, model: QbmHamiltonian, theta) -> float:
    """S(rho | sigma_v). Without hidden units log sigma_v = -H - log Z is used
    directly, which keeps full relative accuracy on tiny eigenvalues."""
    if model.n_h:
        return relative_entropy(rho, visible_marginal(model, theta))
    rho = check_density(rho, "rho")
    h = assemble(model, theta)
    if rho.shape != h.shape:
        raise ValidationError("rho and model differ in dimension")
    log_z = float(logsumexp(-np.linalg.eigvalsh(h)))
    return entropy_term(rho) + trace_inner(rho, h).real + log_z


def sigma_v_derivatives(model: QbmHamiltonian, theta) -> tuple[np.ndarray, list[np.ndarray]]:
    """Visible marginal and its partial derivatives with respect to each theta_p.

    Uses the Duhamel derivative of the unnormalized Gibbs operator and the
    quotient rule: d sigma_v = -Tr_h D exp(-H)[P] / Z + sigma_v Tr(G P).
    """
    neg_h, e = _shifted_exp(assemble(model, theta))
    z = np.trace(e).real
    g = e / z
    sigma = partial_trace(g, model.n_v, model.n_h)
    derivs = []
    for op in model.operators:
        d_e = frechet_exp(neg_h, op)
        d_sigma = -partial_trace(d_e, model.n_v, model.n_h) / z
        d_sigma += sigma * trace_inner(g, op).real
        derivs.append(hermitize(d_sigma))
    return sigma, derivs


def grad_exact(rho, model: QbmHamiltonian, theta) -> GradientVector:
    """Exact gradient of the objective via Frechet derivatives of exp and log."""
    rho = check_density(rho, "rho")
    sigma, derivs = sigma_v_derivatives(model, theta)
    lam_min = float(np.linalg.eigvalsh(sigma)[0])
    if lam_min <= 1e-12:
        raise ValidationError(
            f"visible marginal is numerically singular (min eigenvalue {lam_min:.3e}); "
            "shrink theta or use grad_fd, which clamps"
        )
    values = [-trace_inner(rho, frechet_log(sigma, d)).real for d in derivs]
    return GradientVector(values, "exact", {"sigma_v_min_eigenvalue": lam_min})


def grad_visible_closed(rho, model: QbmHamiltonian, theta) -> GradientVector:
    """Closed-form gradient Tr(rho v_p) - Tr(G v_p); valid only without hidden units."""
    if model.n_h != 0:
        raise ValidationError("closed-form gradient needs n_h = 0")
    rho = check_density(rho, "rho")
    g = gibbs_state(assemble(model, theta))
    values = [trace_inner(rho - g, op).real for op in model.operators]
    return GradientVector(values, "visible_closed")


def grad_fd(
    rho, model: QbmHamiltonian, theta, step: float = 1e-5, richardson: bool = False
) -> GradientVector:
    """Central finite differences of the objective, optionally Richardson-extrapolated."""
    if step <= 0:
        raise ValueError("step must be positive")
    theta = _theta(model, theta)

    def central(p, h):
        e = np.zeros_like(theta)
        e[p] = h
        return (objective(rho, model, theta + e) - objective(rho, model, theta - e)) / (2 * h)

    values = []
    for p in range(model.D):
        d = central(p, step)
        if richardson:
            d = (4 * central(p, step / 2) - d) / 3
        values.append(d)
    return GradientVector(values, "fd", {"step": step, "richardson": richardson})


def pauli_ising_model(n_v: int) -> QbmHamiltonian:
    """All-visible layout: X and Z fields on each qubit plus ZZ on every pair."""
    terms = []
    for n in range(n_v):
        for p in "XZ":
            label = ["I"] * n_v
            label[n] = p
            terms.append(OperatorTerm("".join(label), ""))
    for a, b in combinations(range(n_v), 2):
        label = ["I"] * n_v
        label[a] = label[b] = "Z"
        terms.append(OperatorTerm("".join(label), ""))
    return QbmHamiltonian(n_v, 0, terms)


class Instance(NamedTuple):
    model: QbmHamiltonian
    theta: np.ndarray
    rho_target: np.ndarray
    theta_truth: np.ndarray


def _labels(n: int, alphabet: str) -> list[str]:
    return ["".join(p) for p in product(alphabet, repeat=n) if not _is_identity("".join(p))]


def random_model(
    n_v: int, n_h: int, D: int, rng: np.random.Generator, restricted: bool = True
) -> QbmHamiltonian:
    """Random distinct Pauli terms; every kind appears when D and n_h allow it."""
    vis = _labels(n_v, "IXYZ")
    hid = _labels(n_h, "IZ" if restricted else "IXYZ")
    pools = {
        "visible": [(v, "I" * n_h) for v in vis],
        "hidden": [("I" * n_v, h) for h in hid],
        "interaction": [(v, h) for v in vis for h in hid],
    }
    total = sum(len(p) for p in pools.values())
    if D < 1 or D > total:
        raise ValidationError(f"D={D} outside [1, {total}] for {n_v}+{n_h} qubits")
    chosen: list[tuple[str, str]] = []
    for kind in KINDS:
        if len(chosen) < D and pools[kind]:
            pick = pools[kind].pop(rng.integers(len(pools[kind])))
            chosen.append(pick)
    rest = [t for k in KINDS for t in pools[k]]
    idx = rng.choice(len(rest), size=D - len(chosen), replace=False)
    chosen.extend(rest[i] for i in sorted(idx))
    return QbmHamiltonian(n_v, n_h, [OperatorTerm(v, h) for v, h in chosen])


def random_instance(
    n_v: int,
    n_h: int,
    D: int,
    seed: int | np.random.SeedSequence,
    restricted: bool = True,
    theta_scale: float = 1.0,
    spectrum: tuple[float, float] | None = None,
    arbitrary_target: bool = False,
) -> Instance:
    """Deterministic random instance with a realizable target.

    The target is the visible marginal of a ground-truth parameter vector
    drawn with the same distribution as the returned starting point. With
    ``spectrum=(lo, hi)`` both parameter vectors are shrunk until the
    visible marginal has its spectrum inside ``[lo, hi]``.
    ``arbitrary_target`` replaces the target by a random full-rank state.
    """
    rng = np.random.default_rng(seed)
    model = random_model(n_v, n_h, D, rng, restricted)

    def draw():
        th = rng.normal(scale=theta_scale, size=model.D)
        if spectrum is not None:
            lo, hi = spectrum
            d = 2**n_v
            if not lo < 1 / d < hi:
                raise ValidationError(f"spectrum window {spectrum} excludes 1/{d}")
            for _ in range(200):
                lam = np.linalg.eigvalsh(visible_marginal(model, th))
                if lam[0] >= lo and lam[-1] <= hi:
                    break
                th = 0.8 * th
        return th

    theta_truth = draw()
    theta = draw()
    if arbitrary_target:
        rho = random_density_matrix(2**n_v, rng)
    else:
        rho = visible_marginal(model, theta_truth)
    return Instance(model, theta, hermitize(rho), theta_truth)


def model_to_dict(model: QbmHamiltonian, theta=None) -> dict:
    out = {
        "format": MODEL_FORMAT,
        "n_v": model.n_v,
        "n_h": model.n_h,
        "terms": [t.to_dict() for t in model.terms],
    }
    if theta is not None:
        out["theta"] = [float(x) for x in _theta(model, theta)]
    return out


def model_from_dict(data: dict) -> tuple[QbmHamiltonian, np.ndarray | None]:
    if data.get("format") != MODEL_FORMAT:
        raise ValidationError(f"unknown model format {data.get('format')!r}")
    terms = [OperatorTerm(t["visible"], t["hidden"], t.get("kind", "")) for t in data["terms"]]
    model = QbmHamiltonian(int(data["n_v"]), int(data["n_h"]), terms)
    theta = data.get("theta")
    return model, None if theta is None else np.array(theta, dtype=float)


def save_model(path: str | os.PathLike, model: QbmHamiltonian, theta=None) -> None:
    """Write the JSON model schema; shortest-repr floats make the round-trip bit-exact."""
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, theta), fh, indent=2)
        fh.write("\n")


def load_model(path: str | os.PathLike) -> tuple[QbmHamiltonian, np.ndarray | None]:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def terms_from_labels(n_v: int, n_h: int, labels: Sequence[str]) -> QbmHamiltonian:
    """Build a model from ``"VIS|HID"`` label strings."""
    terms = []
    for lab in labels:
        v, _, h = lab.partition("|")
        terms.append(OperatorTerm(v, h))
    return QbmHamiltonian(n_v, n_h, terms)
