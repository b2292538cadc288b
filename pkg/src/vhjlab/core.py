"""Closed-form objects of the model: exponents, steady states, truncated
nonlinearities, and the analytic constants of the unit interval.

The underlying equation is

    u_t - u_xx = |u_x|^p   on (0,1),   u(0,t) = u(1,t) = 0,   p > 2.

Everything here is exact arithmetic on top of three derived quantities:

    alpha = (p-2)/(p-1),
    c_p   = (p-2)^(-1) (p-1)^((p-2)/(p-1)),
    U*(x) = c_p x^alpha        (singular steady state, infinite slope at 0).

All constants are computed from p at runtime; nothing is hard-coded, so any
p > 2 works.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Params",
    "TruncationVariant",
    "TruncationLevel",
    "AnalyticConstants1D",
    "singular_steady",
    "singular_steady_deriv",
    "regular_steady",
    "regular_steady_deriv",
    "truncated_nonlinearity",
    "truncated_nonlinearity_deriv",
    "cost_normalization",
    "control_constants",
]


@dataclass(frozen=True)
class Params:
    """Model exponent p > 2 and the derived constants alpha, c_p."""

    p: float
    alpha: float = field(init=False)
    c_p: float = field(init=False)

    def __post_init__(self):
        if not self.p > 2.0:
            raise ValueError(f"exponent must satisfy p > 2, got p={self.p}")
        object.__setattr__(self, "alpha", (self.p - 2.0) / (self.p - 1.0))
        object.__setattr__(
            self, "c_p", (self.p - 2.0) ** (-1.0) * (self.p - 1.0) ** ((self.p - 2.0) / (self.p - 1.0))
        )

    @property
    def q(self) -> float:
        """Conjugate exponent q = p/(p-1), the control-cost exponent."""
        return self.p / (self.p - 1.0)


class TruncationVariant(enum.Enum):
    PIECEWISE_MIN = "piecewise_min"
    SMOOTH = "smooth"


@dataclass(frozen=True)
class TruncationLevel:
    """Threshold k of the truncated gradient nonlinearity F_k.

    F_k acts on s = |u_x|^2; the slope threshold is sqrt(k): for |u_x| <= sqrt(k)
    both variants coincide with the untruncated |u_x|^p.
    """

    k: float
    variant: TruncationVariant = TruncationVariant.PIECEWISE_MIN

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"truncation threshold must be positive, got k={self.k}")

    @property
    def slope(self) -> float:
        return math.sqrt(self.k)


def singular_steady(params: Params, x):
    """U*(x) = c_p x^alpha for x > 0 (vectorized; domain error at x <= 0)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError("singular steady state is only evaluated for x > 0")
    return params.c_p * x**params.alpha


def singular_steady_deriv(params: Params, x):
    """U*'(x) = c_p alpha x^(alpha-1) = ((p-1) x)^(-1/(p-1)); infinite at 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError("U* has infinite slope at x=0; derivative requires x > 0")
    return params.c_p * params.alpha * x ** (params.alpha - 1.0)


def _shift(params: Params, a: float) -> float:
    # U_a(x) = U*(x+k) - U*(k) with k chosen so that U_a'(0) = a.
    if not a > 0:
        raise ValueError(f"regular steady state needs slope a > 0, got a={a}")
    return a ** (1.0 - params.p) / (params.p - 1.0)


def regular_steady(params: Params, a: float, x):
    """Regular steady state U_a, the shifted copy of U* with U_a(0)=0, U_a'(0)=a."""
    x = np.asarray(x, dtype=float)
    k = _shift(params, a)
    return params.c_p * ((x + k) ** params.alpha - k**params.alpha)


def regular_steady_deriv(params: Params, a: float, x):
    x = np.asarray(x, dtype=float)
    k = _shift(params, a)
    return params.c_p * params.alpha * (x + k) ** (params.alpha - 1.0)


def truncated_nonlinearity(level: TruncationLevel, params: Params, s):
    """F_k(s) for s = |gradient|^2 >= 0.

    piecewise_min: min(s^(p/2), k^((p-2)/2) s)
    smooth:        s^(p/2) for s <= k, linear continuation of slope
                   (p/2) k^((p-2)/2) beyond; C^1 and satisfies 2 s F' >= F.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("F_k takes the squared gradient, s >= 0")
    p, k = params.p, level.k
    if level.variant is TruncationVariant.PIECEWISE_MIN:
        return np.minimum(s ** (p / 2.0), k ** ((p - 2.0) / 2.0) * s)
    below = s ** (p / 2.0)
    above = k ** (p / 2.0) + (p / 2.0) * k ** ((p - 2.0) / 2.0) * (s - k)
    return np.where(s <= k, below, above)


def truncated_nonlinearity_deriv(level: TruncationLevel, params: Params, s):
    """dF_k/ds; the kink of the piecewise variant takes its linear-branch slope."""
    s = np.asarray(s, dtype=float)
    p, k = params.p, level.k
    inner = (p / 2.0) * s ** ((p - 2.0) / 2.0)
    if level.variant is TruncationVariant.PIECEWISE_MIN:
        return np.where(s <= k, inner, k ** ((p - 2.0) / 2.0))
    return np.where(s <= k, inner, (p / 2.0) * k ** ((p - 2.0) / 2.0))


@dataclass(frozen=True)
class AnalyticConstants1D:
    """Analytic constants of the unit interval used by the regularization and
    multibump machinery.

    psi_torsion solves -psi'' = 1 with zero boundary values; the remaining
    constants are the ones the comparison arguments extract from it.
    """

    kappa: float
    K2: float
    K3: float
    c1_hopf: float
    L: float
    k_p: float

    @staticmethod
    def psi_torsion(x):
        x = np.asarray(x, dtype=float)
        return x * (1.0 - x) / 2.0

    @staticmethod
    def psi_torsion_deriv(x):
        x = np.asarray(x, dtype=float)
        return (1.0 - 2.0 * x) / 2.0


def cost_normalization(p: float) -> float:
    """k_p = (q-1)^(q-1)/q^q with q = p/(p-1).

    Valid for any p > 1, which lets the p=2 one-variable-calculus sanity check
    run even though the model itself requires p > 2.
    """
    q = p / (p - 1.0)
    return (q - 1.0) ** (q - 1.0) / q**q


def control_constants(params: Params) -> AnalyticConstants1D:
    """Constants for Omega=(0,1): kappa, K2, K3, c1_hopf, L and the control
    cost normalization k_p.

    kappa = (2 sup|psi'|)^(-p/(p-1)) with sup|psi'| = 1/2, so kappa = 1 for
    every p; c1_hopf = inf psi/min(x,1-x) = 1/4; K3 = 1/kappa; K2 = 2 kappa
    c1_hopf; L = 2 K3.  k_p is the unique constant with
    sup_a (a z - k_p |a|^q) = |z|^p, q = p/(p-1), i.e.
    k_p = (q-1)^(q-1) / q^q.
    """
    p = params.p
    sup_grad_psi = 0.5
    kappa = (2.0 * sup_grad_psi) ** (-p / (p - 1.0))
    c1_hopf = 0.25
    K3 = 1.0 / kappa
    K2 = 2.0 * kappa * c1_hopf
    k_p = cost_normalization(p)
    return AnalyticConstants1D(kappa=kappa, K2=K2, K3=K3, c1_hopf=c1_hopf, L=2.0 * K3, k_p=k_p)
