"""Closed-form mean-field formulas for the p-local spin model.

Static variational analysis: the single-spin trace identity, the variational
upper bound on the free energy, its p=3 optimal response value, the marginal
stability curve, and the crossing of the two — an estimate of where replica
symmetry breaks. Complexity side: lower bounds on the log-multiplicity of
self-consistent states from a log-Sobolev argument (sharpened and plain
Gaussian variants) and the smallest p at which the sharpened bound certifies
a non-glassy regime.

All functions are pure scalar maps; anything outside a formula's stated
domain raises DomainError rather than returning a junk number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.optimize import brentq, minimize_scalar

from .errors import DomainError

__all__ = [
    "AnalyticReport",
    "polarization_trace",
    "variational_free_energy",
    "g_opt",
    "g_opt_numeric",
    "marginal_G",
    "transition_estimate",
    "lsi_factor",
    "lsi_S_lower",
    "gaussian_lsi_S_lower",
    "nonglassy_p_threshold",
    "transition_report",
    "lsi_report",
]

_TRANSITION_BRACKET = (0.1, 100.0)
_TRANSITION_TOL = 1e-6
_LSI_SERIES_SWITCH = 1e-4  # direct evaluation loses ~6 digits below this
_P_SEARCH_CAP = 64


@dataclass(frozen=True)
class AnalyticReport:
    """Named inputs/outputs of a formula evaluation, JSON-friendly."""

    inputs: dict
    outputs: dict
    formulas: tuple[str, ...]


def polarization_trace(alpha: float) -> float:
    """Single-spin trace of the exponentiated squared net polarization.

    For one spin-1/2 with Gaussian-integrated couplings this trace has the
    closed form 2(1 + alpha/2) exp(alpha/4).
    """
    if alpha < 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")
    return 2.0 * (1.0 + alpha / 2.0) * math.exp(alpha / 4.0)


def _log_polarization_trace(alpha: float) -> float:
    return math.log(2.0) + math.log1p(alpha / 2.0) + alpha / 4.0


def variational_free_energy(G: float, betaJ: float, p: int, J: float = 1.0) -> float:
    """Annealed variational upper bound on the free energy per spin.

    F(G) = (beta J^2 / 2)(1 - 1/p) G^p
           - (1/beta) log[ 2 (1 + (betaJ)^2 G^{p-1}/4) exp((betaJ)^2 G^{p-1}/8) ]

    The log term is the single-spin trace identity at
    alpha = (betaJ)^2 G^{p-1} / 2, evaluated in log-domain so large betaJ
    stays finite.
    """
    if G < 0:
        raise DomainError(f"G must be nonnegative, got {G}")
    if betaJ <= 0 or J <= 0:
        raise DomainError("betaJ and J must be positive")
    if p < 2:
        raise DomainError(f"p must be at least 2, got {p}")
    beta = betaJ / J
    alpha = betaJ**2 * G ** (p - 1) / 2.0
    energy = 0.5 * beta * J * J * (1.0 - 1.0 / p) * G**p
    return energy - _log_polarization_trace(alpha) / beta


def g_opt(betaJ: float) -> float:
    """Optimal response value for p=3, in closed form.

    A = (betaJ)^3 + 24 sqrt(9 (betaJ)^4 + 9024 (betaJ)^2 + 12288) + 2304 betaJ
    G = ((betaJ)^2 + betaJ A^{1/3} + A^{2/3} - 192) / (12 betaJ A^{1/3})
    """
    if betaJ <= 0:
        raise DomainError(f"betaJ must be positive, got {betaJ}")
    x = betaJ
    a = x**3 + 24.0 * math.sqrt(9.0 * x**4 + 9024.0 * x**2 + 12288.0) + 2304.0 * x
    cb = a ** (1.0 / 3.0)
    return (x * x + x * cb + cb * cb - 192.0) / (12.0 * x * cb)


def g_opt_numeric(betaJ: float, p: int, J: float = 1.0) -> float:
    """Numeric minimizer of the variational bound for generic p (utility)."""
    res = minimize_scalar(
        lambda g: variational_free_energy(g, betaJ, p, J),
        bounds=(0.0, 3.0),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return float(res.x)


def marginal_G(betaJ: float, p: int, q0: float) -> float:
    """Response value at which the replica-symmetric solution turns marginal.

    G = (1/betaJ) sqrt(6 (p-1) / (p q0^{p-2})).
    """
    if betaJ <= 0:
        raise DomainError(f"betaJ must be positive, got {betaJ}")
    if p < 3:
        raise DomainError(f"p must be at least 3, got {p}")
    if q0 <= 0:
        raise DomainError(f"q0 must be positive (expression is singular at 0), got {q0}")
    return math.sqrt(6.0 * (p - 1) / (p * q0 ** (p - 2))) / betaJ


def transition_estimate(p: int, q0: float) -> float:
    """betaJ at which the marginal-stability curve crosses the optimal response.

    Solves marginal_G(betaJ, 3, q0) = g_opt(betaJ) by bracketed root finding
    on [0.1, 100] to 1e-6. Only p=3 is supported (g_opt is p=3-specific).
    """
    if p != 3:
        raise DomainError(f"transition estimate uses the p=3 closed form, got p={p}")
    lo, hi = _TRANSITION_BRACKET

    def h(x: float) -> float:
        return marginal_G(x, 3, q0) - g_opt(x)

    h_lo, h_hi = h(lo), h(hi)
    if h_lo == 0.0:
        return lo
    if h_hi == 0.0:
        return hi
    if h_lo * h_hi > 0:
        raise DomainError(
            f"no sign change on [{lo}, {hi}] for q0={q0}; curves do not cross"
        )
    return float(brentq(h, lo, hi, xtol=_TRANSITION_TOL))


def lsi_factor(lam: float) -> float:
    """(1 - lam + lam log lam) / (1 - lam)^2, stable through lam = 1.

    Near lam = 1 the direct quotient is 0/0; the series in x = 1 - lam,
    sum_k x^k / ((k+1)(k+2)), takes over (limit 1/2).
    """
    if lam <= 0:
        raise DomainError(f"factor defined for positive lam, got {lam}")
    x = 1.0 - lam
    if abs(x) < _LSI_SERIES_SWITCH:
        return 0.5 + x / 6.0 + x * x / 12.0 + x**3 / 20.0
    return (1.0 - lam + lam * math.log(lam)) / (x * x)


def lsi_S_lower(betaJ: float, q1: float, p: int) -> float:
    """Sharpened log-Sobolev lower bound on the state-count exponent.

    S >= ((betaJ)^2 q1^p / 2) (1 - 1/p - lsi_factor(lam)) with
    lam = 1 - (betaJ)^2 q1^{p-1}. Applicable only while lam > 0; outside
    that regime the bound says nothing and a DomainError is raised.
    """
    if p < 3:
        raise DomainError(f"p must be at least 3, got {p}")
    if not 0.0 <= q1 <= 3.0:
        raise DomainError(f"q1 must lie in [0, 3], got {q1}")
    if q1 == 0.0:
        return 0.0
    lam = 1.0 - betaJ**2 * q1 ** (p - 1)
    if lam <= 0:
        raise DomainError(
            f"bound out of regime: lam = {lam:.6g} <= 0 at betaJ={betaJ}, q1={q1}, p={p}"
        )
    return 0.5 * betaJ**2 * q1**p * (1.0 - 1.0 / p - lsi_factor(lam))


def gaussian_lsi_S_lower(betaJ: float, q1: float, p: int) -> float:
    """Plain Gaussian log-Sobolev bound, -(betaJ)^2 q1^p / (2p).

    Never positive for q1 > 0 — kept as the comparison point showing why the
    sharpened bound is needed.
    """
    if p < 1:
        raise DomainError(f"p must be positive, got {p}")
    return -(betaJ**2) * q1**p / (2.0 * p)


def nonglassy_p_threshold(betaJ: float, q1: float) -> float:
    """Smallest p >= 3 whose sharpened bound certifies a positive exponent.

    Scans p = 3..64 for lam(p) > 0 and lsi_S_lower(...) > 0; returns the
    first such p, or math.inf if none qualifies.
    """
    for p in range(3, _P_SEARCH_CAP + 1):
        lam = 1.0 - betaJ**2 * q1 ** (p - 1)
        if lam <= 0:
            continue
        if lsi_S_lower(betaJ, q1, p) > 0:
            return p
    return math.inf


# --- report builders (CLI artifacts) ----------------------------------------


def transition_report(p: int, q0: float) -> AnalyticReport:
    x = transition_estimate(p, q0)
    return AnalyticReport(
        inputs={"p": p, "q0": q0},
        outputs={
            "betaJ_transition": x,
            "g_opt": g_opt(x),
            "marginal_G": marginal_G(x, p, q0),
        },
        formulas=("transition_estimate", "g_opt", "marginal_G"),
    )


def lsi_report(betaJ: float, q1: float, p_max: int = 16) -> AnalyticReport:
    rows = []
    for p in range(3, p_max + 1):
        lam = 1.0 - betaJ**2 * q1 ** (p - 1)
        row = {
            "p": p,
            "lam": lam,
            "gaussian_S_lower": gaussian_lsi_S_lower(betaJ, q1, p),
            "S_lower": lsi_S_lower(betaJ, q1, p) if lam > 0 and q1 >= 0 else None,
        }
        rows.append(row)
    threshold = nonglassy_p_threshold(betaJ, q1)
    return AnalyticReport(
        inputs={"betaJ": betaJ, "q1": q1, "p_max": p_max},
        outputs={
            "table": rows,
            "nonglassy_p_threshold": threshold if math.isfinite(threshold) else None,
        },
        formulas=("lsi_S_lower", "gaussian_lsi_S_lower", "nonglassy_p_threshold"),
    )
