"""Central Lagrange-interpolation stencils for first derivatives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..densemath import ValidationError


@dataclass(frozen=True)
class Stencil:
    mu: int
    Delta: float
    theta_center: float
    nodes: np.ndarray
    dweights: np.ndarray

    @property
    def center_index(self) -> int:
        return (self.mu - 1) // 2

    @property
    def spacing(self) -> float:
        return self.Delta / self.mu

    def apply(self, values) -> np.ndarray:
        """sum_j L'_j f(theta_j) for scalar or array-valued samples stacked on axis 0."""
        values = np.asarray(values)
        return np.tensordot(self.dweights, values, axes=(0, 0))

    def norm_bound(self) -> float:
        """(5 mu / Delta) ln(mu / 2), the sup-norm bound on the weights."""
        return 5 * self.mu / self.Delta * math.log(self.mu / 2)

    def remainder_bound(self, deriv_sup: float) -> float:
        """|f'(c) - sum_j L'_j f(theta_j)| <= sup|f^(mu)| / mu! * prod_{k != c} |theta_c - theta_k|."""
        c = self.center_index
        gaps = np.abs(np.delete(self.nodes, c) - self.nodes[c])
        return deriv_sup / math.factorial(self.mu) * float(np.prod(gaps))


def stencil_weights(mu: int, Delta: float, theta_center: float = 0.0) -> Stencil:
    """Derivative weights of the Lagrange basis at the centre of mu equispaced nodes.

    Nodes are theta_c + (j - m) Delta / mu for j = 0..mu-1 with m = (mu-1)/2.
    For j != m the weight is prod_{k != j, m}(theta_m - theta_k) / prod_{k != j}(theta_j - theta_k);
    the centre weight is minus the sum of the others (exactness on constants).
    """
    if not isinstance(mu, (int, np.integer)) or mu < 5 or mu % 2 == 0:
        raise ValidationError(f"mu must be an odd integer >= 5, got {mu!r}")
    if not Delta > 0:
        raise ValidationError("Delta must be positive")
    m = (mu - 1) // 2
    offsets = np.arange(mu) - m
    nodes = theta_center + offsets * (Delta / mu)
    # work on integer offsets and rescale by the spacing to avoid cancellation
    w = np.zeros(mu)
    for j in range(mu):
        if j == m:
            continue
        others = [k for k in range(mu) if k != j]
        num = np.prod([offsets[m] - offsets[k] for k in others if k != m], dtype=float)
        den = np.prod([offsets[j] - offsets[k] for k in others], dtype=float)
        w[j] = num / den
    w[m] = -np.sum(np.delete(w, m))
    return Stencil(int(mu), float(Delta), float(theta_center), nodes, w / (Delta / mu))
