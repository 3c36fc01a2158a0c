"""Pointwise reaction terms of the invasion models.

Covers cell proliferation (logistic or Gompertz), matrix degradation and
remodelling, the smooth onset switch for mutations, and the two closed-form
mutation laws used to manufacture synthetic measurements: one linear in the
primary cell density, one gated by a narrow matrix-density window.

All functions accept scalars or numpy arrays and are pure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# Relative floor on the total density inside the Gompertz logarithm.
GOMPERTZ_TOTAL_FLOOR = 1e-10


class ProliferationRule(enum.IntEnum):
    LOGISTIC = 0
    GOMPERTZ = 1


class TrueMutationLaw(enum.Enum):
    """Closed-form laws available for synthetic measurement generation."""

    LINEAR_IN_C1 = "linear_in_c1"
    ECM_WINDOW = "ecm_window"


@dataclass(frozen=True)
class KineticParams:
    """Reaction rates shared by both invasion models.

    ``kappa`` is the width of the matrix-density window (fraction of the
    carrying capacity) inside which window-gated mutations can occur;
    ``t_switch``/``t_steepness`` parametrise the mutation onset in time.
    """

    mu_c: float = 0.25
    k_c: float = 1.0
    rho: float = 2.0
    mu_v: float = 0.4
    delta_0: float = 0.3
    t_switch: float = 10.0
    t_steepness: float = 3.0
    kappa: float = 0.35

    def __post_init__(self):
        for name in ("mu_c", "k_c", "rho", "mu_v", "delta_0", "t_steepness"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must lie in (0,1), got {self.kappa}")


def omega(t, p: KineticParams):
    """Smooth mutation switch rising from 0 to 1 around ``t_switch``."""
    return 0.5 * (1.0 + np.tanh((t - p.t_switch) / p.t_steepness))


def proliferation(rule: ProliferationRule, c, total, p: KineticParams):
    """Growth rate of a population ``c`` given the total occupied density.

    Logistic: mu_c * c * (1 - total / k_c).  Gompertz: mu_c * c *
    log(k_c / total) with the total floored away from zero so the logarithm
    stays finite (a zero population always has zero rate).
    """
    if rule == ProliferationRule.LOGISTIC:
        return p.mu_c * c * (1.0 - total / p.k_c)
    floored = np.maximum(total, GOMPERTZ_TOTAL_FLOOR * p.k_c)
    return p.mu_c * c * np.log(p.k_c / floored)


def ecm_rate(c1, c2, v, p: KineticParams):
    """Matrix degradation by cells plus remodelling toward free capacity."""
    cells = c1 + c2
    return -p.rho * cells * v + p.mu_v * np.maximum(p.k_c - v - cells, 0.0)


def ecm_window_factor(v, kappa: float):
    """Smooth bump on the open window (1-kappa, 1), zero outside.

    The bump is exp(-1/(kappa^2 - (1-v)^2)) normalised to 1 at v = 1; the
    value at exactly v = 1 is taken as its one-sided limit 1 so the factor
    is continuous from inside the window.
    """
    v = np.asarray(v, dtype=float)
    inside = (v > 1.0 - kappa) & (v < 1.0)
    gap = np.where(inside, kappa**2 - (1.0 - v) ** 2, 1.0)
    bump = np.where(inside, np.exp(-1.0 / gap + 1.0 / kappa**2), 0.0)
    out = np.where(v == 1.0, 1.0, bump)
    return out if out.ndim else float(out)


def true_mutation(law: TrueMutationLaw, c1, v, p: KineticParams):
    """Mutation flux density of the chosen ground-truth law."""
    if law == TrueMutationLaw.LINEAR_IN_C1:
        return p.delta_0 * np.asarray(c1, dtype=float) * 1.0
    return p.delta_0 * np.asarray(c1, dtype=float) * ecm_window_factor(v, p.kappa)
