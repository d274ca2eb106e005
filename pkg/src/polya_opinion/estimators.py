"""Estimators of bias parameters and inherent beliefs, and convergence-time predictors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import DomainError, EmptyHistory, InvalidRegimeParams, TooEarly
from .likelihood import DeclarationHistory, nll_gradient, nll_hessian

CHI_CLAMP = 40.0
MLE_TOL = 1e-10
EQ_GUARD = 1e-12


class Belief(IntEnum):
    ZERO = 0
    ONE = 1
    TIE = -1

    @classmethod
    def from_sign(cls, value):
        if value > 0:
            return cls.ONE
        if value < 0:
            return cls.ZERO
        return cls.TIE


@dataclass(frozen=True)
class BiasEstimate:
    chi_hat: float
    gamma_hat: float
    phi_hat: int
    iterations: int
    identifiable: bool


def mle_bias(h: DeclarationHistory, tol=MLE_TOL, chi0=0.0, max_iter=200) -> BiasEstimate:
    """Maximum-likelihood bias estimate by safeguarded Newton on the score.

    The score is increasing in ``chi`` (strict convexity), so a Newton step
    that leaves the current sign-change bracket is replaced by bisection.
    One-sided histories have no finite minimizer; they are reported as not
    identifiable with ``chi_hat`` pinned at ``+-CHI_CLAMP``.
    """
    if len(h) == 0:
        raise EmptyHistory("cannot estimate from an empty history")
    if not h.identifiable:
        chi = CHI_CLAMP if h.count_ones else -CHI_CLAMP
        return BiasEstimate(chi, math.exp(chi), int(chi > 0), 0, False)

    lo, hi = -CHI_CLAMP, CHI_CLAMP
    while nll_gradient(h, lo) > 0:
        lo *= 2
    while nll_gradient(h, hi) < 0:
        hi *= 2
    x = min(max(chi0, lo), hi)
    it = 0
    for it in range(1, max_iter + 1):
        g = nll_gradient(h, x)
        if abs(g) <= tol:
            break
        if g > 0:
            hi = x
        else:
            lo = x
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(x)):
            break
        x_new = x - g / nll_hessian(h, x)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        x = x_new
    return BiasEstimate(x, math.exp(x), int(x > 0), it, True)


def mle_bias_batch(mu_prev, psi, tol=MLE_TOL, chi0=None):
    """``mle_bias`` for each column of aligned ``(T, n)`` histories.

    Returns ``(chi_hat, identifiable)`` arrays of length ``n``.
    """
    n = mu_prev.shape[1]
    chi = np.empty(n)
    ident = np.empty(n, dtype=bool)
    for i in range(n):
        h = DeclarationHistory.from_arrays(mu_prev[:, i], psi[:, i])
        est = mle_bias(h, tol=tol, chi0=0.0 if chi0 is None else chi0[i])
        chi[i] = est.chi_hat
        ident[i] = est.identifiable
    return chi, ident


@dataclass(frozen=True)
class BeliefEstimate:
    statistic: float
    phi_hat: Belief


def belief_statistic(ones, mu_cumsum):
    """``(t-1) beta_bar(t) - sum_{tau<t} mu(tau)``, the negated score at ``chi = 0``."""
    return np.asarray(ones, dtype=float) - np.asarray(mu_cumsum, dtype=float)


def inherent_belief(state, agent) -> BeliefEstimate:
    """Sign test on the agent's ones count against its accumulated pressure."""
    if state.t < 2:
        raise TooEarly("no declarations before t = 2")
    stat = float(state.ones[agent]) - float(state.mu_cumsum[agent])
    return BeliefEstimate(stat, Belief.from_sign(stat))


def belief_from_statistic(stat):
    """Vectorized sign map: 1, 0, or -1 for a tie."""
    stat = np.asarray(stat, dtype=float)
    return np.where(stat > 0, 1, np.where(stat < 0, 0, int(Belief.TIE))).astype(np.int8)


def _check_interior(beta, mu):
    b = np.asarray(beta, dtype=float)
    m = np.asarray(mu, dtype=float)
    for name, arr in (("beta", b), ("mu", m)):
        if not ((arr > EQ_GUARD) & (arr < 1 - EQ_GUARD)).all():
            raise DomainError(f"{name} is at the boundary; the equilibrium estimator is undefined under consensus")
    return b, m


def equilibrium_bias_estimate(beta, mu):
    """Invert the equilibrium relation: ``beta/(1-beta) * (1-mu)/mu``."""
    b, m = _check_interior(beta, mu)
    out = (b / (1 - b)) * ((1 - m) / m)
    return float(out) if out.ndim == 0 else out


def equilibrium_belief_estimate(beta, mu):
    """1 when ``beta > mu``, 0 when ``beta < mu``, tie when equal."""
    b = np.asarray(beta, dtype=float)
    m = np.asarray(mu, dtype=float)
    out = belief_from_statistic(b - m)
    return Belief(int(out)) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# convergence-time predictions

REGIMES = ("worst_case", "interior", "consensus")


@dataclass(frozen=True)
class RatePrediction:
    regime: str
    xi: float
    t_star: float
    t0: float
    inputs: dict = field(default_factory=dict)

    @property
    def log_t_star(self):
        return self.inputs.get("log_t_star", math.log(self.t_star))


def xi_constant(gamma):
    """``1 / (4c + 2/3)`` with ``c = g/(g-1)`` and ``g = max(gamma, 1/gamma)``."""
    g = max(gamma, 1.0 / gamma)
    c = g / (g - 1.0)
    return 1.0 / (4.0 * c + 2.0 / 3.0)


def _exp(x):
    return math.exp(x) if x < 709.0 else math.inf


def predict_convergence_time(gamma, delta, regime, kappa=None, K=None, c1=None, lam=None, eps=None) -> RatePrediction:
    """Time after which the belief estimator is right forever with prob. ``>= 1 - delta``.

    The drift floor ``g(t)`` of the estimator's compensator depends on the
    regime: ``(g-1)/(4g) kappa log t`` (worst case), ``K t`` (interior), or
    ``c1 t^(lam - eps)`` (consensus). The prediction is
    ``t* = g^-1((1/xi) log(1/(delta (e^xi - 1))))``; ``t0`` is the time at
    which ``g`` first reaches 2.
    """
    if not 0 < delta < 1:
        raise InvalidRegimeParams("delta must lie in (0, 1)")
    if gamma <= 0 or abs(gamma - 1) < 1e-9:
        raise InvalidRegimeParams("gamma must be positive and different from 1")
    g = max(gamma, 1.0 / gamma)
    xi = xi_constant(gamma)
    level = math.log(1.0 / (delta * math.expm1(xi))) / xi
    inputs = {"gamma": gamma, "delta": delta}
    if regime == "worst_case":
        if kappa is None or kappa <= 0:
            raise InvalidRegimeParams("worst_case needs kappa > 0")
        rate = (g - 1.0) / (4.0 * g) * kappa
        # exp(level/rate) overflows for small kappa; keep the exponent as well
        t_star = _exp(level / rate)
        t0 = _exp(2.0 / rate)
        inputs.update(kappa=kappa, log_t_star=level / rate)
    elif regime == "interior":
        if K is None or K <= 0:
            raise InvalidRegimeParams("interior needs K > 0")
        t_star = level / K
        t0 = 2.0 / K
        inputs["K"] = K
    elif regime == "consensus":
        if c1 is None or lam is None or eps is None or c1 <= 0 or not 0 <= eps < lam:
            raise InvalidRegimeParams("consensus needs c1 > 0 and 0 <= eps < lam")
        power = 1.0 / (lam - eps)
        t_star = (level / c1) ** power
        t0 = (2.0 / c1) ** power
        inputs.update(c1=c1, lam=lam, eps=eps)
    else:
        raise InvalidRegimeParams(f"unknown regime {regime!r}; expected one of {REGIMES}")
    return RatePrediction(regime=regime, xi=xi, t_star=t_star, t0=t0, inputs=inputs)
