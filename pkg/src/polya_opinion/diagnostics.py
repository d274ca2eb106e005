"""Likelihood-ratio martingale diagnostics for a pair of bias hypotheses.

For data generated under ``gamma1`` and an alternative ``gamma2`` the loss
difference ``Z = L(gamma2) - L(gamma1)`` splits as ``Z = X - Y`` with ``X``
the predictable drift (a sum of Bernoulli KL divergences), ``Y`` a
martingale, and ``W`` the predictable quadratic variation of ``Y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError, EqualHypotheses, OutOfRange
from .likelihood import DeclarationHistory, hellinger_x_lower_bound

# slack for comparisons that can hold with equality in exact arithmetic
FLOAT_SLACK = 1e-12


def _softplus(x):
    return np.logaddexp(0.0, x)


def pair_constants(gamma1, gamma2):
    """``(c0, c1)`` with ``x >= 2 c0 mu (1 - mu)`` and ``w <= c1 x`` for every ``mu``."""
    gap = (math.sqrt(gamma1) - math.sqrt(gamma2)) ** 2
    scale = max((gamma1 + gamma2) / 2.0, 1.0) ** 2
    c0 = 0.5 * gap / scale
    c1 = gamma1 * math.log(gamma1 / gamma2) ** 2 / min(1.0, gamma1) ** 2 * scale / gap
    return c0, c1


@dataclass(frozen=True)
class MartingaleTrace:
    """Per-step and cumulative quantities over declaration times ``2..t``.

    Index ``j`` of every array corresponds to time ``tau = j + 2``.
    """

    gamma1: float
    gamma2: float
    mu: np.ndarray
    z: np.ndarray
    x: np.ndarray
    w: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    alpha_step: float
    c0: float
    c1: float

    @property
    def times(self):
        return np.arange(2, self.z.size + 2)

    @property
    def y(self):
        return self.x - self.z

    def floor_x(self):
        return hellinger_x_lower_bound(self.mu, self.gamma1, self.gamma2)

    def bound_w(self):
        return self.c1 * self.x


def build_trace(h: DeclarationHistory, gamma1, gamma2) -> MartingaleTrace:
    if gamma1 <= 0 or gamma2 <= 0:
        raise DomainError("hypotheses must be positive")
    if gamma1 == gamma2:
        raise EqualHypotheses("gamma1 and gamma2 coincide")
    a = math.log(gamma1) + h.nu
    b = math.log(gamma2) + h.nu
    s = h.psi_tilde
    z = _softplus(-s * b) - _softplus(-s * a)
    p = expit(a)
    # E[z] under gamma1, written with the same softplus terms as z
    x = p * (_softplus(-b) - _softplus(-a)) + (1.0 - p) * (_softplus(b) - _softplus(a))
    x = np.maximum(x, 0.0)
    step = math.log(gamma1 / gamma2)
    w = p * expit(-a) * step**2
    c0, c1 = pair_constants(gamma1, gamma2)
    Z = np.cumsum(z)
    X = np.cumsum(x)
    return MartingaleTrace(
        gamma1=float(gamma1),
        gamma2=float(gamma2),
        mu=expit(h.nu),
        z=z,
        x=x,
        w=w,
        Z=Z,
        X=X,
        Y=X - Z,
        W=np.cumsum(w),
        alpha_step=abs(step),
        c0=c0,
        c1=c1,
    )


def decision(trace: MartingaleTrace, t):
    """``(selected gamma, tie)``: ``gamma1`` when ``Z(t) >= 0``, ``gamma2`` when negative."""
    if not 2 <= t <= trace.z.size + 1:
        raise OutOfRange(f"t={t} outside the trace range [2, {trace.z.size + 1}]")
    zt = trace.Z[t - 2]
    if zt < 0:
        return trace.gamma2, False
    return trace.gamma1, bool(zt == 0)


def freedman_bound(s, sigma_sq, alpha):
    """``exp(-(s^2/2) / (sigma^2 + alpha s / 3))``: bounds ``P(Y >= s, W <= sigma^2)``."""
    if s <= 0 or sigma_sq < 0 or alpha <= 0:
        raise DomainError("need s > 0, sigma_sq >= 0, alpha > 0")
    return math.exp(-(s * s / 2.0) / (sigma_sq + alpha * s / 3.0))


@dataclass(frozen=True)
class BoundReport:
    steps: int
    dz_violations: int
    dy_violations: int
    w_violations: int
    x_violations: int
    monotone_violations: int

    @property
    def total(self):
        return self.dz_violations + self.dy_violations + self.w_violations + self.x_violations + self.monotone_violations

    @property
    def ok(self):
        return self.total == 0

    def __add__(self, other):
        return BoundReport(*(getattr(self, f) + getattr(other, f) for f in self.__dataclass_fields__))


def check_bounds(trace: MartingaleTrace) -> BoundReport:
    """Count violations of the four per-step inequalities and of monotonicity of X and W."""
    a = trace.alpha_step * (1.0 + FLOAT_SLACK)
    floor = trace.floor_x()
    return BoundReport(
        steps=int(trace.z.size),
        dz_violations=int((np.abs(trace.z) > a).sum()),
        dy_violations=int((np.abs(trace.y) > a).sum()),
        w_violations=int((trace.w > trace.bound_w() * (1.0 + FLOAT_SLACK)).sum()),
        x_violations=int((trace.x < floor * (1.0 - FLOAT_SLACK)).sum()),
        monotone_violations=int((np.diff(trace.X) < 0).sum() + (np.diff(trace.W) < 0).sum()),
    )


@dataclass(frozen=True)
class DriftReport:
    violations: int
    min_ratio: float
    tail_constant: float
    growth: float
    growth_floor: float

    @property
    def ok(self):
        return self.violations == 0 and self.growth > 0.9 * self.growth_floor


def drift_floor_check(trace: MartingaleTrace, kappa) -> DriftReport:
    """Check ``x(tau) >= c0 kappa / tau`` at every step and summarize the growth of ``X``.

    ``min_ratio`` is ``min x(tau) tau / (c0 kappa)`` (at least 1 when the
    floor holds); ``tail_constant`` is ``min X(t)/log(t)`` over the last
    decade of the trace; ``growth`` compares ``X(T) - X(T/2)`` with the
    increment implied by the floor.
    """
    tau = trace.times.astype(float)
    floor = trace.c0 * kappa / tau
    violations = int((trace.x < floor * (1.0 - FLOAT_SLACK)).sum())
    ratio = float((trace.x / floor).min()) if trace.x.size else float("nan")
    T = int(tau[-1])
    tail = tau >= max(T / 10.0, 2.0)
    tail &= tau > 1
    tail_constant = float((trace.X[tail] / np.log(tau[tail])).min())
    half = max(T // 2, 2)
    growth = float(trace.X[-1] - trace.X[half - 2])
    growth_floor = float(floor[half - 1 :].sum())
    return DriftReport(violations, ratio, tail_constant, growth, growth_floor)


def freedman_envelope(traces, t):
    """Mean over traces of the Freedman bound on ``P(Z(t) <= 0)``, using the realized ``X(t)`` and ``W(t)``."""
    vals = []
    for tr in traces:
        j = t - 2
        s = tr.X[j]
        vals.append(freedman_bound(s, tr.W[j], tr.alpha_step) if s > 0 else 1.0)
    return float(np.mean(vals))


DIAG_COLUMNS = ("rep", "agent", "t", "Z", "X", "Y", "W", "x", "w", "floor_x", "bound_w")


def trace_rows(trace: MartingaleTrace, rep, agent, times):
    """Diagnostic CSV rows at the given times (``t >= 2``)."""
    floor = trace.floor_x()
    bound = trace.bound_w()
    for t in times:
        if t < 2:
            continue
        j = int(t) - 2
        yield (
            rep,
            agent,
            int(t),
            trace.Z[j],
            trace.X[j],
            trace.Y[j],
            trace.W[j],
            trace.x[j],
            trace.w[j],
            floor[j],
            bound[j],
        )
