"""Simulation engine for the interacting Polya urn opinion model.

Time convention: ``t = 1`` holds the initial settings only and agents
declare at ``t = 2, 3, ...``. At each step agent ``i`` declares 1 with
probability ``f(mu_i(t), gamma_i)``, one uniform variate per agent in
ascending agent order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DomainError, NoConvergence
from .graph import Network
from .rng import make_rng

GAMMA_ONE_GUARD = 1e-9


def conformity_probability(mu, gamma):
    """``f(mu, gamma) = gamma*mu / (1 + (gamma - 1)*mu)``; works elementwise."""
    mu_a = np.asarray(mu, dtype=float)
    gamma_a = np.asarray(gamma, dtype=float)
    if not ((mu_a > 0) & (mu_a < 1)).all():
        raise DomainError("mu must lie strictly inside (0, 1)")
    if not (gamma_a > 0).all():
        raise DomainError("gamma must be positive")
    out = _f(mu_a, gamma_a)
    return float(out) if out.ndim == 0 else out


def _f(mu, gamma):
    # unchecked version for the hot loop; gamma*mu + (1 - mu) keeps 0 and 1 fixed
    g = gamma * mu
    return g / (g + (1.0 - mu))


@dataclass(frozen=True)
class BiasProfile:
    gamma: np.ndarray
    phi: np.ndarray
    chi: np.ndarray

    @classmethod
    def from_gamma(cls, gamma) -> "BiasProfile":
        g = np.array(gamma, dtype=float).reshape(-1)
        if not (g > 0).all():
            raise DomainError("bias parameters must be positive")
        if (np.abs(g - 1.0) < GAMMA_ONE_GUARD).any():
            raise DomainError("bias parameters must differ from 1")
        chi = np.log(g)
        return cls(gamma=g, phi=(chi > 0).astype(np.int8), chi=chi)

    @property
    def n(self):
        return self.gamma.size

    def reciprocal(self) -> "BiasProfile":
        return BiasProfile.from_gamma(1.0 / self.gamma)


@dataclass(frozen=True)
class InitialSettings:
    b0: np.ndarray
    b1: np.ndarray
    m0: np.ndarray
    m1: np.ndarray

    @classmethod
    def from_b1(cls, net: Network, b1=0.5) -> "InitialSettings":
        b1 = np.broadcast_to(np.asarray(b1, dtype=float), (net.n,)).copy()
        if not ((b1 > 0) & (b1 < 1)).all():
            raise DomainError("initial ratios must lie strictly inside (0, 1)")
        b0 = 1.0 - b1
        b1 = 1.0 - b0
        return cls(b0=b0, b1=b1, m0=net.weights @ b0, m1=net.weights @ b1)


def band_constant(net: Network, init: InitialSettings) -> float:
    """kappa with ``mu_i(t) in [kappa/t, 1 - kappa/t]`` for all i and t."""
    lo = np.minimum(init.m0, init.m1).min()
    hi = np.maximum(init.m0 + init.m1, net.degrees).max()
    return float(lo / hi)


def neighborhood(net: Network, beta):
    """``mu = W beta`` for a vector or a stack of vectors (last axis = agents).

    Explicit product-and-sum instead of BLAS so every row is reduced the
    same way regardless of how many replications are stacked.
    """
    return (net.normalized * beta[..., None, :]).sum(axis=-1)


class _Buffer:
    """Append-only 2-D buffer with amortized doubling."""

    def __init__(self, width, dtype):
        self._data = np.empty((16, width), dtype=dtype)
        self._len = 0

    def append(self, row):
        if self._len == self._data.shape[0]:
            grown = np.empty((2 * self._len, self._data.shape[1]), dtype=self._data.dtype)
            grown[: self._len] = self._data
            self._data = grown
        self._data[self._len] = row
        self._len += 1

    def view(self):
        return self._data[: self._len]

    def copy(self):
        other = _Buffer.__new__(_Buffer)
        other._data = self._data.copy()
        other._len = self._len
        return other


@dataclass
class SimState:
    net: Network
    init: InitialSettings
    t: int
    ones: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    mu_cumsum: np.ndarray
    kappa: float
    _hist_mu: _Buffer = field(repr=False)
    _hist_psi: _Buffer = field(repr=False)

    @property
    def beta_bar(self):
        if self.t < 2:
            raise DomainError("beta_bar is defined from t = 2 on")
        return self.ones / (self.t - 1)

    @property
    def M(self):
        return self.init.m0 + self.init.m1 + (self.t - 1) * self.net.degrees

    @property
    def history_mu(self):
        """Row ``k`` holds ``mu(k+1)``, the pressure seen before declaration ``k+2``."""
        return self._hist_mu.view()

    @property
    def history_psi(self):
        return self._hist_psi.view()

    def history(self, agent):
        """``[(mu_i(tau-1), psi_i,tau) for tau = 2..t]``."""
        return list(zip(self.history_mu[:, agent].tolist(), self.history_psi[:, agent].tolist()))

    def copy(self):
        return SimState(
            net=self.net,
            init=self.init,
            t=self.t,
            ones=self.ones.copy(),
            beta=self.beta.copy(),
            mu=self.mu.copy(),
            mu_cumsum=self.mu_cumsum.copy(),
            kappa=self.kappa,
            _hist_mu=self._hist_mu.copy(),
            _hist_psi=self._hist_psi.copy(),
        )

    def in_band(self):
        lo = self.kappa / self.t
        return bool(((self.mu >= lo) & (self.mu <= 1.0 - lo)).all())


def init_state(net: Network, init: InitialSettings) -> SimState:
    if init.b1.shape != (net.n,):
        raise DimensionMismatch(f"initial settings have length {init.b1.size}, network has {net.n}")
    beta = init.b1.copy()
    return SimState(
        net=net,
        init=init,
        t=1,
        ones=np.zeros(net.n, dtype=np.int64),
        beta=beta,
        mu=neighborhood(net, beta),
        mu_cumsum=np.zeros(net.n),
        kappa=band_constant(net, init),
        _hist_mu=_Buffer(net.n, float),
        _hist_psi=_Buffer(net.n, np.int8),
    )


def _advance(state: SimState, psi):
    state._hist_mu.append(state.mu)
    state._hist_psi.append(psi)
    state.mu_cumsum += state.mu
    state.ones += psi
    state.t += 1
    state.beta = (state.init.b1 + state.ones) / state.t
    state.mu = neighborhood(state.net, state.beta)
    return state


def step(state: SimState, bias: BiasProfile, rng) -> SimState:
    """Advance one synchronous step in place and return the state."""
    u = rng.random(state.net.n)
    psi = (u < _f(state.mu, bias.gamma)).astype(np.int8)
    return _advance(state, psi)


def step_with(state: SimState, psi) -> SimState:
    """Advance with externally supplied declarations (testing and replay)."""
    psi = np.asarray(psi, dtype=np.int8)
    if psi.shape != (state.net.n,):
        raise DimensionMismatch("one declaration per agent is required")
    return _advance(state, psi)


def expected_update(beta, net: Network, bias: BiasProfile):
    """``F(beta, gamma)_i = f((W beta)_i, gamma_i)``."""
    beta = np.asarray(beta, dtype=float)
    if not ((beta > 0) & (beta < 1)).all():
        raise DomainError("beta must lie strictly inside (0, 1)")
    return _f(neighborhood(net, beta), bias.gamma)


def equilibrium_residual(beta, net: Network, bias: BiasProfile):
    beta = np.asarray(beta, dtype=float)
    mu = neighborhood(net, beta)
    g = bias.gamma
    return (g - 1.0) * beta * mu + beta - g * mu


@dataclass(frozen=True)
class Equilibrium:
    beta: np.ndarray
    interior: bool
    iterations: int


def find_interior_equilibrium(net, bias, tol=1e-12, max_iter=1_000_000, damping=0.5) -> Equilibrium:
    """Damped fixed-point iteration of the expected dynamics from ``beta = 1/2``.

    Converges to whichever equilibrium attracts the damped map; the result
    says whether that point is interior (every component at least
    ``max(1e-6, sqrt(tol))`` away from 0 and 1) or on the boundary.
    """
    beta = np.full(net.n, 0.5)
    # near a boundary point the fixed-point gap is ~ distance to the boundary,
    # so classify with a margin well above tol
    margin = max(1e-6, np.sqrt(tol))
    for it in range(1, max_iter + 1):
        fb = _f(neighborhood(net, beta), bias.gamma)
        gap = np.max(np.abs(beta - fb))
        if gap <= tol:
            interior = bool(((beta > margin) & (beta < 1 - margin)).all())
            return Equilibrium(beta=beta, interior=interior, iterations=it)
        beta = (1.0 - damping) * beta + damping * fb
    raise NoConvergence(f"fixed-point iteration did not converge in {max_iter} iterations")


# ---------------------------------------------------------------------------
# batched engine


@dataclass
class Trajectory:
    """Output of :func:`simulate` for ``R`` replications.

    Checkpoint arrays have shape ``(R, C, n)``. History arrays, when kept,
    have shape ``(R, T-1, n)``; row ``k`` corresponds to declaration time
    ``k + 2`` and holds ``mu(k+1)`` and ``psi(k+2)``. ``drift_cumsum`` is
    the running sum of ``f(mu, gamma) - mu`` over past declaration steps.
    """

    times: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    ones: np.ndarray
    mu_cumsum: np.ndarray
    kappa: float
    band_violations: np.ndarray
    drift_cumsum: np.ndarray | None = None
    history_mu: np.ndarray | None = None
    history_psi: np.ndarray | None = None

    @property
    def reps(self):
        return self.beta.shape[0]


def geometric_checkpoints(horizon, count=50, start=2):
    """Strictly increasing integer times from ``start`` to ``horizon``, roughly log-spaced."""
    if horizon < start:
        raise DomainError(f"horizon must be at least {start}")
    raw = np.geomspace(start, horizon, num=max(count, 1))
    times = np.unique(np.round(raw).astype(np.int64))
    times = times[(times >= start) & (times <= horizon)]
    if times.size == 0 or times[-1] != horizon:
        times = np.append(times, horizon)
    return times


def simulate(net, bias, init, horizon, seeds, checkpoints=None, keep_history=False, block=4096):
    """Run ``len(seeds)`` independent replications to time ``horizon``.

    Replications are stacked and advanced together, but each draws from its
    own stream in exactly the order :func:`step` would, so the result for a
    seed does not depend on the other seeds in the batch.
    """
    seeds = list(seeds)
    if horizon < 2:
        raise DomainError("horizon must be at least 2")
    times = geometric_checkpoints(horizon) if checkpoints is None else np.asarray(checkpoints, dtype=np.int64)
    if times.size and (times[0] < 1 or times[-1] > horizon or (np.diff(times) <= 0).any()):
        raise DomainError("checkpoints must be strictly increasing within [1, horizon]")
    n = net.n
    r = len(seeds)
    rngs = [make_rng(s) for s in seeds]
    gamma = bias.gamma
    b1 = init.b1
    kappa = band_constant(net, init)

    ones = np.zeros((r, n), dtype=np.int64)
    beta = np.broadcast_to(b1, (r, n)).copy()
    mu = neighborhood(net, beta)
    mu_cumsum = np.zeros((r, n))
    violations = np.zeros(r, dtype=np.int64)

    c = times.size
    out_beta = np.empty((r, c, n))
    out_mu = np.empty((r, c, n))
    out_ones = np.empty((r, c, n), dtype=np.int64)
    out_cum = np.empty((r, c, n))
    out_drift = np.empty((r, c, n))
    drift = np.zeros((r, n))
    hist_mu = np.empty((r, horizon - 1, n)) if keep_history else None
    hist_psi = np.empty((r, horizon - 1, n), dtype=np.int8) if keep_history else None

    def record(t, k):
        out_beta[:, k] = beta
        out_mu[:, k] = mu
        out_ones[:, k] = ones
        out_cum[:, k] = mu_cumsum
        out_drift[:, k] = drift

    k = 0
    if c and times[0] == 1:
        record(1, 0)
        k = 1
    t = 1
    uniforms = np.empty((0, r, n))
    pos = 0
    while t < horizon:
        if pos == uniforms.shape[0]:
            width = min(block, horizon - t)
            uniforms = np.stack([g.random((width, n)) for g in rngs], axis=1)
            pos = 0
        u = uniforms[pos]
        pos += 1
        fmu = _f(mu, gamma)
        psi = u < fmu
        drift += fmu - mu
        if keep_history:
            hist_mu[:, t - 1] = mu
            hist_psi[:, t - 1] = psi
        mu_cumsum += mu
        ones += psi
        t += 1
        beta = (b1 + ones) / t
        mu = neighborhood(net, beta)
        lo = kappa / t
        violations += ((mu < lo) | (mu > 1.0 - lo)).any(axis=1)
        if k < c and times[k] == t:
            record(t, k)
            k += 1
    return Trajectory(
        times=times,
        beta=out_beta,
        mu=out_mu,
        ones=out_ones,
        mu_cumsum=out_cum,
        kappa=kappa,
        band_violations=violations,
        drift_cumsum=out_drift,
        history_mu=hist_mu,
        history_psi=hist_psi,
    )


def run(net, bias, init, horizon, seed, checkpoints=None, keep_history=True):
    """Single replication; see :func:`simulate`."""
    return simulate(net, bias, init, horizon, [seed], checkpoints=checkpoints, keep_history=keep_history)
