"""Acceptance criteria 1-11.

Every test records one ``PASS``/``FAIL`` line that is printed in the
terminal summary (and also to stdout, visible with ``-s``). The Monte Carlo
runs are shared through module-scoped fixtures; thresholds marked as pilot
calibrated were fixed once from a pilot with a different base seed.
"""

import math
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import grid_argmin_chi, random_history
from polya_opinion.consensus import Regime, classify, gautschi_bounds, perron_functional, ratio_R
from polya_opinion.dynamics import BiasProfile, InitialSettings, _f, simulate
from polya_opinion.estimators import equilibrium_bias_estimate, mle_bias
from polya_opinion.graph import load_network
from polya_opinion.harness import parse_config, run_experiment, sweep_delta
from polya_opinion.likelihood import DeclarationHistory, nll_gradient, nll_hessian, total_nll

pytestmark = pytest.mark.slow

INTERIOR = """
graph = "complete:10"
horizon = 200000
replications = 20
base_seed = 2024
checkpoints = 50

[[gamma]]
count = 5
value = 2.0

[[gamma]]
count = 5
value = 0.5

[diagnostics]
martingale_ratio = 2.0
"""

STAR = """
graph = "star:5"
gamma = [1.2, 0.5, 0.5, 0.5, 0.5]
horizon = 100000
replications = 50
base_seed = 505
checkpoints = 100
estimators = ["belief"]

[diagnostics]
martingale_ratio = 2.0
rate_fit = true
"""

COUPLED = """
graph = "star:5"
gamma = [1.2, 0.5, 0.5, 0.5, 0.5]
horizon = 100000
replications = 30
base_seed = 909
checkpoints = 50
estimators = ["belief"]

[diagnostics]
coupled_radius = 0.2
"""

INTERIOR_SWEEP = """
graph = "complete:10"
gamma = [2.0, 2.0, 2.0, 2.0, 2.0, 0.5, 0.5, 0.5, 0.5, 0.5]
horizon = 3000
replications = 1000
base_seed = 1111
checkpoints = 300
estimators = ["belief"]

[sweep]
deltas = [0.5, 0.3, 0.2, 0.1, 0.05, 0.03, 0.02, 0.01]
"""

STAR_SWEEP = """
graph = "star:5"
gamma = [1.2, 0.5, 0.5, 0.5, 0.5]
horizon = 100000
replications = 200
base_seed = 2222
checkpoints = 200
estimators = ["belief"]

[sweep]
deltas = [0.5, 0.3, 0.2, 0.1, 0.05]
"""


@contextmanager
def criterion(number, title):
    """Record a PASS/FAIL line for the enclosed checks; ``info`` collects the measured values."""
    info = {}
    try:
        yield info
    except BaseException:
        line = f"criterion {number}: FAIL  {title}  {_fmt(info)}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    line = f"criterion {number}: PASS  {title}  {_fmt(info)}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _fmt(info):
    return " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items())


@pytest.fixture(scope="module")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def interior_run(out_root):
    cfg = parse_config(INTERIOR)
    return run_experiment(cfg, out_dir=out_root / "interior", strict=False)


@pytest.fixture(scope="module")
def star_run(out_root):
    cfg = parse_config(STAR)
    return run_experiment(cfg, out_dir=out_root / "star", strict=False)


@pytest.fixture(scope="module")
def coupled_run(out_root):
    cfg = parse_config(COUPLED)
    return run_experiment(cfg, parts=("trajectory", "diagnostics"), out_dir=out_root / "coupled", strict=False)


@pytest.fixture(scope="module")
def interior_sweep(out_root):
    return sweep_delta(parse_config(INTERIOR_SWEEP), out_dir=out_root / "interior_sweep")


@pytest.fixture(scope="module")
def star_sweep(out_root):
    return sweep_delta(parse_config(STAR_SWEEP), out_dir=out_root / "star_sweep")


def test_criterion_01_model_identities():
    with criterion(1, "model identities") as info:
        mu = np.linspace(0.01, 0.99, 99)[:, None]
        gamma = np.linspace(0.1, 10.0, 100)[None, :]
        recip = np.abs(_f(mu, gamma) + _f(1 - mu, 1 / gamma) - 1).max()
        info["reciprocity"] = float(recip)
        assert recip <= 1e-12

        round_trip = np.abs(equilibrium_bias_estimate(_f(mu, gamma), np.broadcast_to(mu, (99, 100))) / gamma - 1).max()
        info["round_trip"] = float(round_trip)
        assert round_trip <= 1e-12

        net = load_network("complete:10")
        bias = BiasProfile.from_gamma([2.0] * 5 + [0.5] * 5)
        times = np.array([2, 10, 100, 500])
        traj = simulate(net, bias, InitialSettings.from_b1(net), 500, [1, 2], checkpoints=times, keep_history=True)
        worst = 0.0
        for r in range(2):
            for i in range(net.n):
                for k, t in enumerate(times):
                    h = DeclarationHistory.from_trajectory(traj, r, i, int(t))
                    ident = traj.mu_cumsum[r, k, i] - traj.ones[r, k, i]
                    worst = max(worst, abs(nll_gradient(h, 0.0) - ident))
        info["gradient_identity"] = worst
        assert worst <= 1e-9


def test_criterion_02_band_invariant(interior_run, star_run, coupled_run, interior_sweep, star_sweep):
    with criterion(2, "mu band on every step") as info:
        counts = [interior_run.band_violations, star_run.band_violations, coupled_run.band_violations]
        counts += [interior_sweep.band_violations, star_sweep.band_violations]
        info["violations"] = sum(counts)
        info["runs"] = len(counts)
        assert sum(counts) == 0


def test_criterion_03_mle_against_grid():
    with criterion(3, "convex MLE against grid oracle") as info:
        rng = np.random.default_rng(303)
        worst = worst_fd = 0.0
        min_hess = np.inf
        for _ in range(100):
            h = random_history(rng, 200)
            est = mle_bias(h)
            worst = max(worst, abs(est.chi_hat - grid_argmin_chi(h)))
            for chi in np.linspace(-5, 5, 11):
                min_hess = min(min_hess, nll_hessian(h, chi))
                eps = 1e-6
                fd = (total_nll(h, chi + eps) - total_nll(h, chi - eps)) / (2 * eps)
                g = nll_gradient(h, chi)
                worst_fd = max(worst_fd, abs(fd - g) / max(abs(g), 1.0))
        info["max_chi_error"] = worst
        info["min_hessian"] = float(min_hess)
        info["max_fd_rel"] = worst_fd
        assert worst <= 1e-5 and min_hess > 0 and worst_fd <= 1e-6


def test_criterion_04_mle_consistency_interior(interior_run):
    with criterion(4, "MLE consistency, interior regime") as info:
        final = interior_run.final
        info["regime"] = interior_run.regime.regime.value
        info["median_abs_chi_error"] = final["mle_abs_error_median"]
        info["reps_all_correct"] = final["mle_all_correct"]
        info["belief_reps_all_correct"] = final["belief_all_correct"]
        assert interior_run.regime.regime == Regime.INTERIOR
        assert final["mle_abs_error_median"] <= 0.1
        assert final["mle_all_correct"] >= 19


def _upticks(e, n_paths):
    """Raw up-ticks, and increases beyond two binomial standard errors between any two checkpoints."""
    raw = int((np.diff(e) > 0).sum())
    significant = 0
    for k in range(e.size):
        later = e[k + 1 :]
        p = np.maximum(later, e[k])
        se = np.sqrt(p * (1 - p) / n_paths)
        significant += int((later - e[k] > 2 * se).sum())
    return raw, significant


def test_criterion_05_belief_under_consensus(star_run):
    with criterion(5, "belief estimation under consensus") as info:
        reg = star_run.regime
        R = len(star_run.seeds)
        e = np.asarray(star_run.error_fractions["belief"])
        raw, significant = _upticks(e, R * 5)
        info["regime"] = reg.regime.value
        info["lambda"] = reg.lambda_zero
        info["reps_all_correct"] = f"{star_run.final['belief_all_correct']}/{R}"
        info["raw_upticks"] = raw
        info["significant_upticks"] = significant
        info["max_uptick"] = float(np.diff(e).max())
        assert reg.regime == Regime.TO_ZERO and reg.lambda_zero <= 1
        assert star_run.final["belief_all_correct"] >= math.ceil(0.9 * R)
        assert significant == 0


def test_criterion_06_consensus_rate(star_run):
    with criterion(6, "consensus rate exponents") as info:
        target = star_run.regime.lambda_zero - 1
        fits = [(r, q, f) for r, q, f in star_run.rate_fits if r < 20]
        v = [f.exponent for _, q, f in fits if q == "V"]
        per_agent = np.array([f.exponent for _, q, f in fits if q != "V"])
        info["target"] = target
        info["mean_V_exponent"] = float(np.mean(v))
        info["agent_exponent_range"] = f"[{per_agent.min():.4g}, {per_agent.max():.4g}]"
        assert len(v) == 20
        # reduced horizon T = 1e5: the wider tolerance applies
        assert abs(np.mean(v) - target) <= 0.15
        assert (np.abs(per_agent - target) <= 0.15).all()


def test_criterion_07_martingale_bounds(interior_run, star_run):
    with criterion(7, "martingale hard bounds and statistics") as info:
        hard = ys = 0
        for run in (interior_run, star_run):
            m = run.martingale
            hard += m["hard_violations"]
            info[f"{run.regime.regime.value}_steps"] = m["steps_checked"]
            z = abs(m["y_mean"]) / m["y_mean_se"]
            info[f"{run.regime.regime.value}_y_mean_sigmas"] = z
            ys += int(z > 3)
            wrong, env = m["z_final_wrong_fraction"], m["freedman_envelope"][-1]
            info[f"{run.regime.regime.value}_wrong_vs_envelope"] = f"{wrong:.3g}<={10 * env:.3g}"
            assert wrong <= 10 * env
        info["hard_violations"] = hard
        assert hard == 0 and ys == 0


def test_criterion_08_gautschi():
    with criterion(8, "R(t, eta) Gautschi sandwich") as info:
        bad = 0
        cells = 0
        for t in [1, 2, 3, 5, 10, 100, 10**3, 10**4, 10**6, 10**9]:
            for eta in np.linspace(0.01, 0.99, 99):
                lo, hi = gautschi_bounds(t, eta)
                bad += int(not lo <= ratio_R(t, eta) <= hi)
                cells += 1
        info["cells"] = cells
        info["violations"] = bad
        assert bad == 0


def test_criterion_09_coupled_sandwich(coupled_run):
    with criterion(9, "coupled linearized sandwich") as info:
        c = coupled_run.coupled
        info.update({k: c[k] for k in ("runs_started", "steps_checked", "violations", "runs_beyond_radius")})
        # the sandwich is only defined once max(beta) has entered the disc; some paths need
        # far longer than T to get there, so more replications are run than required
        assert c["runs_started"] >= 20
        assert c["violations"] == 0


def test_criterion_10_determinism(interior_run, out_root):
    with criterion(10, "byte-identical re-run") as info:
        again = run_experiment(parse_config(INTERIOR), out_dir=out_root / "interior_again", strict=False)
        info["files"] = len(again.files)
        assert again.files == interior_run.files
        for name in again.files:
            assert (out_root / "interior" / name).read_bytes() == (out_root / "interior_again" / name).read_bytes()


def test_criterion_11_delta_sweep(interior_sweep, star_sweep):
    with criterion(11, "delta sweep shape") as info:
        info["interior_r2"] = interior_sweep.fit["affine_r2"]
        info["consensus_loglog_slope"] = star_sweep.fit.get("loglog_slope", float("nan"))
        info["consensus_target"] = star_sweep.fit.get("loglog_target", float("nan"))
        assert interior_sweep.regime == "Interior" and star_sweep.regime == "ToZero"
        assert interior_sweep.fit["affine_r2"] >= 0.8
        for table in (interior_sweep, star_sweep):
            emp = [row[1] for row in table.rows]
            # deltas are decreasing, so t*(delta) must not decrease along the rows
            assert all(b >= a for a, b in zip(emp, emp[1:]))
