import math

import mpmath
import numpy as np
import pytest

from oracles import grid_argmin_chi, random_history
from polya_opinion.dynamics import (
    BiasProfile,
    conformity_probability,
    find_interior_equilibrium,
    init_state,
    neighborhood,
    simulate,
    step,
    step_with,
)
from polya_opinion.errors import DomainError, EmptyHistory, InvalidRegimeParams, TooEarly
from polya_opinion.estimators import (
    CHI_CLAMP,
    Belief,
    belief_from_statistic,
    equilibrium_belief_estimate,
    equilibrium_bias_estimate,
    inherent_belief,
    mle_bias,
    predict_convergence_time,
    xi_constant,
)
from polya_opinion.graph import load_network
from polya_opinion.likelihood import DeclarationHistory, nll_gradient, total_nll
from polya_opinion.rng import make_rng, replication_seed
from polya_opinion.dynamics import InitialSettings


def hist(mu, psi):
    return DeclarationHistory.from_arrays(np.asarray(mu, float), np.asarray(psi))


def test_mle_examples():
    est = mle_bias(hist([0.5, 0.5], [1, 0]))
    assert est.chi_hat == 0 and est.gamma_hat == 1 and est.identifiable
    est = mle_bias(hist([0.5] * 3, [1, 1, 0]))
    assert est.chi_hat == pytest.approx(math.log(2), abs=1e-10)
    assert est.gamma_hat == pytest.approx(2.0, rel=1e-9)
    assert est.phi_hat == 1
    assert abs(est.chi_hat - grid_argmin_chi(hist([0.5] * 3, [1, 1, 0]))) <= 1e-5


def test_mle_one_sided():
    est = mle_bias(hist([0.3, 0.6], [1, 1]))
    assert not est.identifiable and est.phi_hat == 1 and est.chi_hat == CHI_CLAMP
    est = mle_bias(hist([0.3, 0.6], [0, 0]))
    assert not est.identifiable and est.phi_hat == 0 and est.chi_hat == -CHI_CLAMP
    with pytest.raises(EmptyHistory):
        mle_bias(hist([], []))


def test_mle_extreme_bracket():
    # the minimizer lies outside the initial [-40, 40] bracket
    h = hist([1e-40, 1e-20], [1, 0])
    est = mle_bias(h)
    assert est.identifiable and est.chi_hat > 40
    assert abs(nll_gradient(h, est.chi_hat)) <= 1e-10


def test_mle_against_grid_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        h = random_history(rng)
        est = mle_bias(h)
        assert abs(nll_gradient(h, est.chi_hat)) <= 1e-10
        if abs(est.chi_hat) < 9.9:
            assert abs(est.chi_hat - grid_argmin_chi(h)) <= 1e-5
        base = total_nll(h, est.chi_hat)
        assert total_nll(h, est.chi_hat + 0.01) > base and total_nll(h, est.chi_hat - 0.01) > base
        assert est.phi_hat == int(est.chi_hat > 0)


def test_mle_warm_start_agrees():
    rng = np.random.default_rng(5)
    for _ in range(20):
        h = random_history(rng)
        a = mle_bias(h).chi_hat
        b = mle_bias(h, chi0=3.0).chi_hat
        assert abs(a - b) <= 1e-8


def test_inherent_belief_examples():
    net = load_network("complete:2")
    state = init_state(net, InitialSettings.from_b1(net))
    with pytest.raises(TooEarly):
        inherent_belief(state, 0)
    step_with(state, [1, 1])
    est = inherent_belief(state, 0)
    assert est.statistic == 0.5 and est.phi_hat == Belief.ONE
    state = init_state(net, InitialSettings.from_b1(net))
    step_with(state, [1, 0])
    step_with(state, [0, 1])
    # agent 1 saw mu = 0.5 and then 0.75 (its neighbor's ratio after a 1)
    assert inherent_belief(state, 1).statistic == pytest.approx(1 - 0.5 - 0.75)
    assert inherent_belief(state, 1).phi_hat == Belief.ZERO


def test_inherent_belief_tie():
    # star center with two leaves: leaves declaring (1, 0) keep its pressure at 1/2
    net = load_network("star:3")
    state = init_state(net, InitialSettings.from_b1(net))
    step_with(state, [1, 1, 0])
    step_with(state, [0, 1, 0])
    assert state.t == 3
    est = inherent_belief(state, 0)
    assert est.statistic == 0 and est.phi_hat == Belief.TIE
    assert belief_from_statistic([0.0, 1e-300, -1e-300]).tolist() == [-1, 1, 0]
    assert Belief.from_sign(0.0) == Belief.TIE


def test_belief_matches_negative_gradient_sign(interior_setup):
    net, bias, init = interior_setup
    traj = simulate(net, bias, init, 3000, [replication_seed(8, 0)], keep_history=True)
    state_stat = traj.ones[0, -1] - traj.mu_cumsum[0, -1]
    for i in range(net.n):
        h = DeclarationHistory.from_trajectory(traj, 0, i)
        assert np.sign(state_stat[i]) == np.sign(-nll_gradient(h, 0.0))
        est = mle_bias(h)
        if abs(est.chi_hat) > 1e-9:
            assert int(state_stat[i] > 0) == int(est.chi_hat > 0)


def test_agreement_on_step_history(star_setup):
    net, bias, init = star_setup
    state = init_state(net, init)
    rng = make_rng(4)
    for _ in range(400):
        step(state, bias, rng)
    for i in range(net.n):
        be = inherent_belief(state, i)
        est = mle_bias(DeclarationHistory.from_state(state, i))
        if be.phi_hat != Belief.TIE and abs(est.chi_hat) > 1e-9:
            assert int(be.phi_hat) == int(est.chi_hat > 0)


def test_equilibrium_estimators():
    assert equilibrium_bias_estimate(0.3, 0.3) == pytest.approx(1.0)
    assert equilibrium_bias_estimate(0.5, 0.25) == pytest.approx(3.0)
    assert equilibrium_belief_estimate(0.5, 0.25) == Belief.ONE
    assert equilibrium_belief_estimate(0.4, 0.4) == Belief.TIE
    assert equilibrium_belief_estimate(0.2, 0.6) == Belief.ZERO
    assert equilibrium_bias_estimate(0.2, 0.6) < 1
    with pytest.raises(DomainError):
        equilibrium_bias_estimate(1e-13, 0.5)
    with pytest.raises(DomainError):
        equilibrium_bias_estimate(0.5, 1.0)


def test_equilibrium_round_trip_grid():
    mu, g = np.meshgrid(np.linspace(0.01, 0.99, 99), np.geomspace(0.1, 10, 41))
    est = equilibrium_bias_estimate(conformity_probability(mu, g), mu)
    assert (np.abs(est / g - 1) <= 1e-12).all()


def test_equilibrium_estimate_at_solver_output():
    net = load_network("complete:4")
    bias = BiasProfile.from_gamma([2.0, 3.0, 0.5, 0.4])
    eq = find_interior_equilibrium(net, bias)
    mu = neighborhood(net, eq.beta)
    np.testing.assert_allclose(equilibrium_bias_estimate(eq.beta, mu), bias.gamma, rtol=1e-8)
    assert (equilibrium_belief_estimate(eq.beta, mu) == bias.phi).all()


def test_xi_constant():
    assert xi_constant(2.0) == pytest.approx(3 / 26)
    assert xi_constant(0.5) == xi_constant(2.0)
    for g in np.geomspace(1.001, 1000, 30):
        assert 0 < xi_constant(g) < 1.5


def test_prediction_interior_closed_form():
    # independent high-precision evaluation of the same closed form
    mpmath.mp.dps = 40
    xi = mpmath.mpf(3) / 26
    ref = 10 * (1 / xi) * mpmath.log(1 / (mpmath.mpf("0.01") * (mpmath.e**xi - 1)))
    pred = predict_convergence_time(2.0, 0.01, "interior", K=0.1)
    assert pred.t_star == pytest.approx(float(ref), rel=1e-13)
    assert pred.t_star == pytest.approx(581.221979472701, rel=1e-13)
    assert pred.t0 == pytest.approx(20.0)


def test_prediction_monotone_in_delta():
    kw = {
        "worst_case": {"kappa": 0.5},
        "interior": {"K": 0.1},
        "consensus": {"c1": 0.2, "lam": 0.8, "eps": 0.05},
    }
    for regime, params in kw.items():
        for g in (2.0, 0.5, 1.2):
            # compare logs: the worst-case bound overflows a double
            ts = [predict_convergence_time(g, d, regime, **params).log_t_star for d in (0.5, 0.25, 0.125, 0.01)]
            assert all(b > a for a, b in zip(ts, ts[1:]))


def test_prediction_consensus_scaling():
    lam, eps = 0.8, 0.1
    a = predict_convergence_time(2.0, 1e-3, "consensus", c1=1.0, lam=lam, eps=eps)
    b = predict_convergence_time(2.0, 1e-6, "consensus", c1=1.0, lam=lam, eps=eps)
    level = lambda d: math.log(1 / (d * math.expm1(a.xi))) / a.xi  # noqa: E731
    assert b.t_star / a.t_star == pytest.approx((level(1e-6) / level(1e-3)) ** (1 / (lam - eps)), rel=1e-12)


def test_prediction_worst_case_overflow_is_infinite():
    pred = predict_convergence_time(1.2, 0.01, "worst_case", kappa=0.01)
    assert pred.t_star == math.inf and pred.log_t_star > 709


def test_prediction_errors():
    with pytest.raises(InvalidRegimeParams):
        predict_convergence_time(2.0, 0.0, "interior", K=0.1)
    with pytest.raises(InvalidRegimeParams):
        predict_convergence_time(1.0, 0.1, "interior", K=0.1)
    with pytest.raises(InvalidRegimeParams):
        predict_convergence_time(2.0, 0.1, "interior")
    with pytest.raises(InvalidRegimeParams):
        predict_convergence_time(2.0, 0.1, "consensus", c1=1.0, lam=0.5, eps=0.5)
    with pytest.raises(InvalidRegimeParams):
        predict_convergence_time(2.0, 0.1, "nope")
