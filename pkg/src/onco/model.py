"""Model coefficients and the constitutive functions of the tumor/drug system.

The concrete forms are

    V[w]    = kappa * w                          (nonlocal velocity)
    F(p)    = r * p * (1 - p / K)                (logistic growth)
    C(d, p) = delta * d * p                      (drug-induced kill)
    G(I, d) = gamma_ex * (I - d) - lambda_cl * d (blood/tissue exchange + clearance)

All functions accept scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import NamedTuple

from .errors import ValidationError

_POSITIVE = ("r_growth", "K_cap", "delta", "gamma_ex", "diff", "sigma", "m_tol", "t_final", "beta_w")
_NONNEGATIVE = ("lambda_cl", "kappa", "alpha_w", "gamma_w")


@dataclass(frozen=True)
class ModelParams:
    """Scalar coefficients of the model, the cost weights and the domain.

    Defaults are the reference experiment: r=1.2, K=1, delta=0.8,
    kappa=0.05, sigma=0.01, D=0.05, Gamma=2.5, lambda=0.3, alpha=1,
    beta=0.1, gamma=1, M_tol=4, T=1 on [0, 1].
    """

    r_growth: float = 1.2  # 1/time
    K_cap: float = 1.0  # cells/volume
    delta: float = 0.8  # volume/(drug*time)
    kappa: float = 0.05  # length/time per unit w
    sigma: float = 0.01  # length
    diff: float = 0.05  # length^2/time
    gamma_ex: float = 2.5  # 1/time
    lambda_cl: float = 0.3  # 1/time
    alpha_w: float = 1.0
    beta_w: float = 0.1
    gamma_w: float = 1.0
    m_tol: float = 4.0
    t_final: float = 1.0
    x_min: float = 0.0
    x_max: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(f.name, f"expected a number, got {value!r}")
            if not math.isfinite(value):
                raise ValidationError(f.name, "must be finite")
            object.__setattr__(self, f.name, float(value))
        for name in _POSITIVE:
            if getattr(self, name) <= 0:
                raise ValidationError(name, "must be > 0")
        for name in _NONNEGATIVE:
            if getattr(self, name) < 0:
                raise ValidationError(name, "must be >= 0")
        if self.x_max <= self.x_min:
            raise ValidationError("x_max", "must exceed x_min")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min


class Partials(NamedTuple):
    """Pointwise derivatives needed by the linearized and adjoint systems."""

    dF_dp: object  # F'(p)
    dC_dd: object  # d/dd C(d, p)
    dC_dp: object  # d/dp C(d, p)
    dG_di: object  # d/dI G(I, d)
    dG_dd: object  # d/dd G(I, d)
    dV_dw: object  # V'(w)


def velocity(w, params: ModelParams):
    return params.kappa * w


def eval_growth(p, params: ModelParams):
    return params.r_growth * p * (1.0 - p / params.K_cap)


def eval_kill(d, p, params: ModelParams):
    return params.delta * d * p


def eval_exchange(i, d, params: ModelParams):
    return params.gamma_ex * (i - d) - params.lambda_cl * d


def partials(d, p, i, params: ModelParams) -> Partials:
    """Evaluate all first partial derivatives at ``(d, p, i)``.

    ``i`` is accepted for symmetry with :func:`eval_exchange`; the exchange
    term is linear so its partials do not depend on it.
    """
    return Partials(
        dF_dp=params.r_growth * (1.0 - 2.0 * p / params.K_cap),
        dC_dd=params.delta * p,
        dC_dp=params.delta * d,
        dG_di=params.gamma_ex + 0.0 * i,
        dG_dd=-(params.gamma_ex + params.lambda_cl) + 0.0 * d,
        dV_dw=params.kappa,
    )
