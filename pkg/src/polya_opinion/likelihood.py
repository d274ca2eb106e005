"""Negative log-likelihood of one agent's declarations in ``chi = log(gamma)``.

A declaration at time ``tau`` made under pressure ``mu = mu_i(tau-1)`` has
probability ``sigmoid(chi + nu)`` of being 1, where ``nu = logit(mu)``.
Hence each step contributes ``softplus(-psi~ (chi + nu))`` with
``psi~ = 2 psi - 1``, a strictly convex function of ``chi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dynamics import _f
from .errors import DomainError, EmptyHistory


def logit(mu):
    mu_a = np.asarray(mu, dtype=float)
    if not ((mu_a > 0) & (mu_a < 1)).all():
        raise DomainError("logit needs arguments strictly inside (0, 1)")
    out = np.log(mu_a) - np.log1p(-mu_a)
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    out = expit(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DeclarationHistory:
    nu: np.ndarray
    psi_tilde: np.ndarray
    count_ones: int
    count_zeros: int
    mu_sum: float

    @classmethod
    def from_arrays(cls, mu_prev, psi) -> "DeclarationHistory":
        """Build from aligned ``mu_i(tau-1)`` and ``psi_i,tau`` sequences."""
        mu_prev = np.asarray(mu_prev, dtype=float)
        psi = np.asarray(psi).astype(np.int8)
        if mu_prev.shape != psi.shape or mu_prev.ndim != 1:
            raise DomainError("mu and psi sequences must be 1-D and aligned")
        if not np.isin(psi, (0, 1)).all():
            raise DomainError("declarations must be 0 or 1")
        ones = int(psi.sum())
        return cls(
            nu=logit(mu_prev) if mu_prev.size else np.empty(0),
            psi_tilde=(2 * psi - 1).astype(np.int8),
            count_ones=ones,
            count_zeros=int(psi.size - ones),
            mu_sum=float(mu_prev.sum()),
        )

    @classmethod
    def from_state(cls, state, agent) -> "DeclarationHistory":
        return cls.from_arrays(state.history_mu[:, agent], state.history_psi[:, agent])

    @classmethod
    def from_trajectory(cls, traj, rep, agent, t=None) -> "DeclarationHistory":
        """History of ``agent`` in replication ``rep`` up to time ``t`` (default: horizon)."""
        if traj.history_mu is None:
            raise DomainError("trajectory was simulated without keep_history")
        stop = traj.history_mu.shape[1] if t is None else t - 1
        return cls.from_arrays(traj.history_mu[rep, :stop, agent], traj.history_psi[rep, :stop, agent])

    def __len__(self):
        return self.nu.size

    @property
    def identifiable(self):
        return self.count_ones > 0 and self.count_zeros > 0


def single_step_nll(chi, nu, psi_tilde):
    """``log(1 + exp(-psi~ (chi + nu)))`` evaluated without overflow."""
    out = np.logaddexp(0.0, -np.asarray(psi_tilde) * (np.asarray(chi) + np.asarray(nu)))
    return float(out) if np.ndim(out) == 0 else out


def total_nll(h: DeclarationHistory, chi) -> float:
    if len(h) == 0:
        return 0.0
    return float(np.sum(np.logaddexp(0.0, -h.psi_tilde * (chi + h.nu))))


def nll_gradient(h: DeclarationHistory, chi) -> float:
    """``sum(sigmoid(chi + nu) - 1{psi = 1})``; equals ``mu_sum - count_ones`` at 0."""
    if len(h) == 0:
        return 0.0
    return float(expit(chi + h.nu).sum() - h.count_ones)


def nll_hessian(h: DeclarationHistory, chi) -> float:
    if len(h) == 0:
        raise EmptyHistory("curvature of an empty history is zero")
    x = chi + h.nu
    return float((expit(x) * expit(-x)).sum())


def kl_bernoulli(p, q):
    """KL divergence between Bernoulli(p) and Bernoulli(q); interior arguments only."""
    p_a = np.asarray(p, dtype=float)
    q_a = np.asarray(q, dtype=float)
    for name, arr in (("p", p_a), ("q", q_a)):
        if not ((arr > 0) & (arr < 1)).all():
            raise DomainError(f"{name} must lie strictly inside (0, 1)")
    out = p_a * (np.log(p_a) - np.log(q_a)) + (1 - p_a) * (np.log1p(-p_a) - np.log1p(-q_a))
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def hellinger_x_lower_bound(mu, gamma1, gamma2):
    """Closed-form floor on ``KL(f(mu, gamma1) || f(mu, gamma2))``.

    ``(sqrt(g1) - sqrt(g2))^2 mu (1 - mu) / max((g1 + g2)/2, 1)^2``, from
    ``KL >= 2 H^2`` and an AM-GM bound on the Hellinger affinity.
    """
    mu_a = np.asarray(mu, dtype=float)
    if not ((mu_a > 0) & (mu_a < 1)).all():
        raise DomainError("mu must lie strictly inside (0, 1)")
    if gamma1 <= 0 or gamma2 <= 0:
        raise DomainError("gamma values must be positive")
    scale = max((gamma1 + gamma2) / 2.0, 1.0) ** 2
    out = (np.sqrt(gamma1) - np.sqrt(gamma2)) ** 2 * mu_a * (1 - mu_a) / scale
    return float(out) if out.ndim == 0 else out


def step_kl(mu, gamma1, gamma2):
    """Expected one-step loss difference when ``gamma1`` generates the data."""
    return kl_bernoulli(_f(np.asarray(mu, dtype=float), gamma1), _f(np.asarray(mu, dtype=float), gamma2))
