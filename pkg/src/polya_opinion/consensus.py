"""Consensus regimes, the Perron functional and the linearized comparison process."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import stats
from scipy.special import betaln

from . import dynamics
from .dynamics import BiasProfile, _f, init_state, step
from .errors import DomainError, InsufficientData, NonPositiveValue, RegimeMismatch
from .graph import perron_robust, scaled_matrix


class Regime(str, Enum):
    TO_ZERO = "ToZero"
    TO_ONE = "ToOne"
    INTERIOR = "Interior"
    BOUNDARY = "Boundary"


@dataclass(frozen=True)
class RegimeReport:
    lambda_zero: float
    lambda_one: float
    regime: Regime
    tolerance: float
    v_zero: np.ndarray = field(repr=False)
    v_one: np.ndarray = field(repr=False)

    def to_dict(self, with_vectors=True):
        out = {
            "lambda_zero": self.lambda_zero,
            "lambda_one": self.lambda_one,
            "regime": self.regime.value,
            "tolerance": self.tolerance,
        }
        if with_vectors:
            out["v_zero"] = self.v_zero.tolist()
            out["v_one"] = self.v_one.tolist()
        return out


def classify(net, bias: BiasProfile, tolerance=1e-9) -> RegimeReport:
    """Compare the spectral radii of ``Gamma W`` (consensus at 0) and ``Gamma^-1 W`` (at 1) with 1."""
    if tolerance < 0:
        raise DomainError("tolerance must be nonnegative")
    zero = perron_robust(scaled_matrix(net, bias.gamma))
    one = perron_robust(scaled_matrix(net, bias.gamma, inverse=True))
    lz, lo = zero.radius, one.radius
    below_z, above_z = lz <= 1 - tolerance, lz > 1 + tolerance
    below_o, above_o = lo <= 1 - tolerance, lo > 1 + tolerance
    if below_z and above_o:
        regime = Regime.TO_ZERO
    elif below_o and above_z:
        regime = Regime.TO_ONE
    elif above_z and above_o:
        regime = Regime.INTERIOR
    else:
        regime = Regime.BOUNDARY
    return RegimeReport(lz, lo, regime, tolerance, zero.left_vector, one.left_vector)


@dataclass(frozen=True)
class PerronFunctional:
    """``V(beta) = v . beta`` (target zero) or ``v . (1 - beta)`` (target one)."""

    lam: float
    v: np.ndarray
    target: str

    def __call__(self, beta):
        beta = np.asarray(beta, dtype=float)
        x = beta if self.target == "zero" else 1.0 - beta
        return x @ self.v


def perron_functional(net, bias: BiasProfile, target="zero") -> PerronFunctional:
    if target not in ("zero", "one"):
        raise DomainError("target must be 'zero' or 'one'")
    res = perron_robust(scaled_matrix(net, bias.gamma, inverse=(target == "one")))
    return PerronFunctional(res.radius, res.left_vector, target)


def ratio_R(t, eta):
    """``R(t, eta) = prod_{tau<t} (tau + eta)/(tau + 1) = Gamma(t+eta) / (Gamma(eta) Gamma(t+1))``."""
    if t < 1 or int(t) != t:
        raise DomainError("t must be a positive integer")
    if not 0 < eta <= 1:
        raise DomainError("eta must lie in (0, 1]")
    if eta == 1:
        return 1.0
    # Gamma(t+eta) / (Gamma(eta) Gamma(t+1)) = 1 / (t B(t, eta)); log-beta stays accurate for large t
    return math.exp(-math.log(t) - betaln(t, eta))


def gautschi_bounds(t, eta):
    """``(lower, upper)`` with ``lower <= R(t, eta) <= upper`` for ``eta`` in (0, 1)."""
    g = math.gamma(eta)
    return 1.0 / (g * (t + 1) ** (1 - eta)), 1.0 / (g * t ** (1 - eta))


# ---------------------------------------------------------------------------
# coupled linearized process


def alpha_bounds(bias: BiasProfile, radius):
    """Constants with ``a_lo gamma mu <= f(mu, gamma) <= a_hi gamma mu`` for ``mu <= radius``.

    ``f(mu, gamma)/(gamma mu) = 1/(1 + (gamma - 1) mu)`` is monotone in
    ``mu``, so its extremes over ``(0, radius]`` sit at the endpoints.
    """
    if not 0 < radius < 1:
        raise DomainError("radius must lie in (0, 1)")
    edge = 1.0 / (1.0 + (bias.gamma - 1.0) * radius)
    return float(min(1.0, edge.min())), float(max(1.0, edge.max()))


def coupled_linearized_step(state, bias, v, alpha, mass, rng):
    """One step of the main process together with linearized processes.

    ``alpha`` and ``mass`` are arrays (one entry per linearized process);
    ``mass`` is ``t * h`` so the comparison with ``t * V(beta)`` involves the
    same sums as the main process. Each agent draws one shared uniform
    ``u``: the main declaration is ``u < f(mu, gamma)`` and the linearized
    one is ``u < zeta gamma mu`` (or ``zeta gamma mu`` itself when that
    exceeds 1), with ``zeta = alpha h / V``. Sharing ``u`` is the maximal
    coupling of the two Bernoulli variables.

    Returns ``(state, new_mass, psi_bar)``. Only consensus towards zero is
    supported; apply the 0/1 symmetry for the other direction.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    mass = np.atleast_1d(np.asarray(mass, dtype=float))
    t = state.t
    v_mass = float(v @ (state.init.b1 + state.ones))
    zeta = alpha * mass / v_mass
    rate = zeta[:, None] * bias.gamma * state.mu
    u = rng.random(state.net.n)
    psi = (u < _f(state.mu, bias.gamma)).astype(np.int8)
    psi_bar = np.where(rate > 1.0, rate, (u < rate).astype(float))
    dynamics._advance(state, psi)
    assert state.t == t + 1
    return state, mass + psi_bar @ v, psi_bar


@dataclass
class CoupledRun:
    """Result of :func:`simulate_coupled`.

    ``t_start`` is the time the linearized processes were started (``None``
    if ``max(beta)`` never dropped to the radius at a checkpoint);
    ``visited_radius`` is the largest ``mu_i`` seen from then on, the disc
    over which ``alpha_lo``/``alpha_hi`` are valid.
    """

    t_start: int | None
    visited_radius: float
    alpha_lo: float
    alpha_hi: float
    left_disc: bool
    violations: int
    steps_checked: int
    times: np.ndarray
    V: np.ndarray
    h_lo: np.ndarray
    h_hi: np.ndarray


def simulate_coupled(net, bias, init, horizon, seed, radius=0.2, checkpoints=None, target="zero"):
    """Run the main process together with the two bounding linearized processes.

    The coupling starts at the first checkpoint where ``max(beta) <= radius``.
    Since the main path does not depend on the linearized ones, a first pass
    simulates it alone to find the disc ``mu <= r_visited`` it actually
    occupies from the start on; ``alpha_lo``/``alpha_hi`` are taken over that
    disc and a second pass replays the same stream with the linearized
    processes attached. ``left_disc`` reports ``r_visited > radius``.
    """
    from .rng import make_rng

    if target not in ("zero", "one"):
        raise DomainError("target must be 'zero' or 'one'")
    if target == "one":
        # the 0/1 symmetry: run on reciprocal biases and complemented settings
        bias = bias.reciprocal()
        init = dynamics.InitialSettings.from_b1(net, init.b0)
    pf = perron_functional(net, bias, "zero")
    if pf.lam >= 1.0:
        raise RegimeMismatch(f"no consensus at {target}: spectral radius {pf.lam:.6g} >= 1")
    v = pf.v
    times = dynamics.geometric_checkpoints(horizon) if checkpoints is None else np.asarray(checkpoints)

    first = dynamics.simulate(net, bias, init, horizon, [seed], checkpoints=times, keep_history=True)
    below = np.flatnonzero(first.beta[0].max(axis=1) <= radius)
    if below.size == 0:
        empty = np.empty(0)
        return CoupledRun(None, math.nan, math.nan, math.nan, False, 0, 0, times[:0], empty, empty, empty)
    t_start = int(times[below[0]])
    # history row k holds mu(k+1); the disc must cover mu(t_start), ..., mu(horizon-1)
    visited = float(first.history_mu[0, t_start - 1 :].max()) if t_start < horizon else radius
    final_ones = first.ones[0, -1].copy()
    del first
    a_lo, a_hi = alpha_bounds(bias, max(visited, np.finfo(float).tiny))
    alphas = np.array([a_lo, a_hi])

    rng = make_rng(seed)
    state = init_state(net, init)
    rec_V, rec_lo, rec_hi, rec_t = [], [], [], []
    mass = None
    violations = 0
    checked = 0
    k = 0
    while True:
        if state.t == t_start:
            v_mass = float(v @ (init.b1 + state.ones))
            mass = np.array([v_mass, v_mass])
        while k < times.size and times[k] <= state.t:
            if times[k] == state.t:
                rec_t.append(state.t)
                rec_V.append(pf(state.beta))
                rec_lo.append(np.nan if mass is None else mass[0] / state.t)
                rec_hi.append(np.nan if mass is None else mass[1] / state.t)
            k += 1
        if state.t >= horizon:
            break
        if mass is None:
            step(state, bias, rng)
            continue
        before = state.ones.copy()
        state, mass, _ = coupled_linearized_step(state, bias, v, alphas, mass, rng)
        # accumulate t V(beta) the same way as the linearized masses so that
        # equal declarations give bit-identical sums
        v_mass = v_mass + (state.ones - before).astype(float) @ v
        checked += 1
        if not (mass[0] <= v_mass <= mass[1]):
            violations += 1
    if not np.array_equal(state.ones, final_ones):
        raise AssertionError("coupled replay diverged from the main path")
    return CoupledRun(
        t_start=t_start,
        visited_radius=visited,
        alpha_lo=a_lo,
        alpha_hi=a_hi,
        left_disc=visited > radius,
        violations=violations,
        steps_checked=checked,
        times=np.array(rec_t, dtype=np.int64),
        V=np.array(rec_V),
        h_lo=np.array(rec_lo),
        h_hi=np.array(rec_hi),
    )


# ---------------------------------------------------------------------------
# empirical decay exponents


@dataclass(frozen=True)
class RateFit:
    exponent: float
    intercept: float
    window: tuple
    r_squared: float
    target: float = float("nan")


def fit_rate(times, values, window=None, target=float("nan"), min_points=10) -> RateFit:
    """Least-squares slope of ``log(value)`` against ``log(t)`` inside ``window``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        window = (times.max() / 10.0, times.max())
    lo, hi = window
    sel = (times >= lo) & (times <= hi)
    if sel.sum() < min_points:
        raise InsufficientData(f"{int(sel.sum())} checkpoints in window {window}, need {min_points}")
    if not (values[sel] > 0).all():
        raise NonPositiveValue("power-law fit needs positive values")
    res = stats.linregress(np.log(times[sel]), np.log(values[sel]))
    r2 = min(max(res.rvalue**2, 0.0), 1.0) if np.isfinite(res.rvalue) else 1.0
    return RateFit(float(res.slope), float(res.intercept), (float(lo), float(hi)), float(r2), float(target))
