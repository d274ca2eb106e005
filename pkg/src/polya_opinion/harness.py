"""Experiment orchestration: config parsing, replication fan-out, estimators and file output.

Configs are TOML documents. Every key is optional except ``graph``,
``gamma`` and ``horizon``::

    graph = "complete:10"          # generator spec or path to an edge list
    gamma = [2.0, 2.0, 0.5]        # scalar, per-agent list, or [[gamma]] groups
    horizon = 100000
    init_b1 = 0.5                  # scalar or per-agent list
    checkpoints = 50               # number of geometric checkpoints in [2, T]
    replications = 20
    base_seed = 0
    estimators = ["mle", "belief", "equilibrium"]
    output_dir = "out"
    memory_budget_mb = 1024

    [diagnostics]
    martingale_ratio = 2.0         # alternative hypothesis gamma2 = ratio * gamma1
    coupled_radius = 0.2           # start of the linearized coupling (consensus regimes)
    rate_fit = true
    rate_window = [0.1, 1.0]       # fit window as fractions of T

    [sweep]
    deltas = [0.5, 0.2, 0.1]

Group assignments use an array of tables, filled in agent order::

    [[gamma]]
    count = 5
    value = 2.0
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import tomli
from scipy import stats

from . import __version__
from .consensus import Regime, classify, fit_rate, perron_functional, simulate_coupled
from .diagnostics import DIAG_COLUMNS, build_trace, check_bounds, drift_floor_check, freedman_envelope, trace_rows
from .dynamics import (
    BiasProfile,
    InitialSettings,
    _f,
    band_constant,
    find_interior_equilibrium,
    geometric_checkpoints,
    neighborhood,
    simulate,
)
from .errors import (
    AssertionFailure,
    ConfigError,
    DomainError,
    InsufficientReplications,
    ParseError,
    PolyaError,
    ValidationError,
)
from .estimators import belief_from_statistic, mle_bias, predict_convergence_time
from .graph import load_network
from .likelihood import DeclarationHistory
from .rng import MASK64, replication_seed

ESTIMATORS = ("mle", "belief", "equilibrium")
PARTS = ("trajectory", "estimates", "rates", "diagnostics")
_TOP_KEYS = {
    "graph",
    "gamma",
    "init_b1",
    "horizon",
    "checkpoints",
    "replications",
    "base_seed",
    "estimators",
    "output_dir",
    "memory_budget_mb",
    "diagnostics",
    "sweep",
}
_DIAG_KEYS = {"martingale_ratio", "coupled_radius", "rate_fit", "rate_window"}
_SWEEP_KEYS = {"deltas"}
_GROUP_KEYS = {"count", "value"}


@dataclass(frozen=True)
class Diagnostics:
    martingale_ratio: float | None = None
    coupled_radius: float | None = None
    rate_fit: bool = False
    rate_window: tuple = (0.1, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    graph: str
    gamma: tuple
    horizon: int
    init_b1: tuple = (0.5,)
    checkpoints: int = 50
    replications: int = 1
    base_seed: int = 0
    estimators: tuple = ESTIMATORS
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    deltas: tuple = ()
    output_dir: str = "out"
    memory_budget_mb: float = 1024.0

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["diagnostics"] = dataclasses.asdict(self.diagnostics)
        return out

    def override(self, **changes):
        """Copy with CLI-style overrides; ``None`` values are ignored."""
        changes = {k: v for k, v in changes.items() if v is not None}
        cfg = dataclasses.replace(self, **changes)
        problems = _validate(cfg)
        if problems:
            raise ValidationError(problems)
        return cfg

    def network(self):
        return load_network(self.graph)

    def bias(self, net=None):
        """Per-agent profile; a single value applies to every agent."""
        g = self.gamma
        if len(g) == 1:
            g = g * (net or self.network()).n
        return BiasProfile.from_gamma(g)

    def initial(self, net=None):
        net = net or self.network()
        b1 = self.init_b1[0] if len(self.init_b1) == 1 else self.init_b1
        return InitialSettings.from_b1(net, b1)


def _line_of(text, key):
    pat = re.compile(rf"^\s*(\[\[?\s*)?{re.escape(key)}\b")
    for no, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return no
    return None


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def parse_config(text, base_dir=None) -> ExperimentConfig:
    """Parse and validate a TOML experiment description.

    Syntax problems and unknown keys raise :class:`ParseError` (with the
    line number where available); semantic problems are collected and
    raised together as a :class:`ValidationError`.
    """
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(getattr(exc, "msg", str(exc)), line=getattr(exc, "lineno", None)) from None

    for key in raw:
        if key not in _TOP_KEYS:
            raise ParseError("unknown key", line=_line_of(text, key), field=key)
    for section, allowed in (("diagnostics", _DIAG_KEYS), ("sweep", _SWEEP_KEYS)):
        sub = raw.get(section, {})
        if not isinstance(sub, dict):
            raise ParseError("expected a table", line=_line_of(text, section), field=section)
        for key in sub:
            if key not in allowed:
                raise ParseError("unknown key", line=_line_of(text, key), field=f"{section}.{key}")

    problems = []
    for key in ("graph", "gamma", "horizon"):
        if key not in raw:
            problems.append(f"{key}: required")
    if problems:
        raise ValidationError(problems)

    graph = raw["graph"]
    if isinstance(graph, str) and base_dir is not None and ":" not in graph:
        path = Path(base_dir) / graph
        if path.exists():
            graph = str(path)

    gamma = raw["gamma"]
    if _is_number(gamma):
        gamma = (float(gamma),)
    elif isinstance(gamma, list) and gamma and all(isinstance(g, dict) for g in gamma):
        values = []
        for k, grp in enumerate(gamma):
            extra = set(grp) - _GROUP_KEYS
            if extra:
                raise ParseError("unknown key", line=_line_of(text, sorted(extra)[0]), field=f"gamma[{k}].{sorted(extra)[0]}")
            count, value = grp.get("count"), grp.get("value")
            if not isinstance(count, int) or count < 1 or not _is_number(value):
                problems.append(f"gamma[{k}]: groups need an integer count >= 1 and a numeric value")
                continue
            values.extend([float(value)] * count)
        gamma = tuple(values)
    elif isinstance(gamma, list) and all(_is_number(g) for g in gamma):
        gamma = tuple(float(g) for g in gamma)
    else:
        problems.append("gamma: expected a number, a list of numbers, or [[gamma]] groups")
        gamma = ()

    b1 = raw.get("init_b1", 0.5)
    if _is_number(b1):
        b1 = (float(b1),)
    elif isinstance(b1, list) and all(_is_number(x) for x in b1):
        b1 = tuple(float(x) for x in b1)
    else:
        problems.append("init_b1: expected a number or a list of numbers")
        b1 = (0.5,)

    diag_raw = raw.get("diagnostics", {})
    window = diag_raw.get("rate_window", [0.1, 1.0])
    diag = Diagnostics(
        martingale_ratio=diag_raw.get("martingale_ratio"),
        coupled_radius=diag_raw.get("coupled_radius"),
        rate_fit=diag_raw.get("rate_fit", False),
        rate_window=tuple(window) if isinstance(window, list) else window,
    )
    estimators = raw.get("estimators", list(ESTIMATORS))
    deltas = raw.get("sweep", {}).get("deltas", [])
    cfg = ExperimentConfig(
        graph=graph,
        gamma=gamma,
        horizon=raw["horizon"],
        init_b1=b1,
        checkpoints=raw.get("checkpoints", 50),
        replications=raw.get("replications", 1),
        base_seed=raw.get("base_seed", 0),
        estimators=tuple(estimators) if isinstance(estimators, list) else estimators,
        diagnostics=diag,
        deltas=tuple(deltas) if isinstance(deltas, list) else deltas,
        output_dir=raw.get("output_dir", "out"),
        memory_budget_mb=raw.get("memory_budget_mb", 1024.0),
    )
    problems.extend(_validate(cfg, skip_gamma=not cfg.gamma))
    if problems:
        raise ValidationError(problems)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)


def _validate(cfg, skip_gamma=False):
    problems = []

    def is_int(x):
        return isinstance(x, (int, np.integer)) and not isinstance(x, bool)

    if not isinstance(cfg.graph, str):
        problems.append("graph: expected a generator spec or a path")
        n = None
    else:
        try:
            n = load_network(cfg.graph).n
        except (PolyaError, OSError, ValueError) as exc:
            problems.append(f"graph: {exc}")
            n = None
    if not skip_gamma:
        for i, g in enumerate(cfg.gamma):
            if g <= 0:
                problems.append(f"gamma[{i}] = {g}: must be positive")
            elif abs(g - 1.0) < 1e-9:
                problems.append(f"gamma[{i}] = {g}: every agent needs a preference (gamma != 1)")
        if n is not None and len(cfg.gamma) not in (1, n):
            problems.append(f"gamma: {len(cfg.gamma)} values for a network of {n} agents")
    for i, b in enumerate(cfg.init_b1):
        if not 0 < b < 1:
            problems.append(f"init_b1[{i}] = {b}: must lie strictly inside (0, 1)")
    if n is not None and len(cfg.init_b1) not in (1, n):
        problems.append(f"init_b1: {len(cfg.init_b1)} values for a network of {n} agents")
    if not is_int(cfg.horizon) or cfg.horizon < 2:
        problems.append("horizon: must be an integer >= 2")
    if not is_int(cfg.checkpoints) or cfg.checkpoints < 1:
        problems.append("checkpoints: must be an integer >= 1")
    if not is_int(cfg.replications) or cfg.replications < 1:
        problems.append("replications: must be an integer >= 1")
    if not is_int(cfg.base_seed) or not 0 <= cfg.base_seed <= MASK64:
        problems.append("base_seed: must be an integer in [0, 2^64)")
    if not isinstance(cfg.estimators, tuple) or not set(cfg.estimators) <= set(ESTIMATORS):
        problems.append(f"estimators: must be a subset of {list(ESTIMATORS)}")
    if not isinstance(cfg.output_dir, str):
        problems.append("output_dir: expected a path")
    if not _is_number(cfg.memory_budget_mb) or cfg.memory_budget_mb <= 0:
        problems.append("memory_budget_mb: must be positive")
    d = cfg.diagnostics
    if d.martingale_ratio is not None and (
        not _is_number(d.martingale_ratio) or d.martingale_ratio <= 0 or d.martingale_ratio == 1
    ):
        problems.append("diagnostics.martingale_ratio: must be positive and different from 1")
    if d.coupled_radius is not None and (not _is_number(d.coupled_radius) or not 0 < d.coupled_radius < 1):
        problems.append("diagnostics.coupled_radius: must lie in (0, 1)")
    if not isinstance(d.rate_fit, bool):
        problems.append("diagnostics.rate_fit: expected true or false")
    w = d.rate_window
    if not (isinstance(w, tuple) and len(w) == 2 and all(_is_number(x) for x in w) and 0 < w[0] < w[1] <= 1):
        problems.append("diagnostics.rate_window: expected [lo, hi] with 0 < lo < hi <= 1")
    dl = cfg.deltas
    if not isinstance(dl, tuple) or not all(_is_number(x) and 0 < x <= 1 for x in dl):
        problems.append("sweep.deltas: values must lie in (0, 1]")
    elif list(dl) != sorted(dl, reverse=True) or len(set(dl)) != len(dl):
        problems.append("sweep.deltas: must be strictly decreasing")
    return problems


# ---------------------------------------------------------------------------
# output helpers


def fmt(x):
    """Shortest round-trip text for a number (``repr`` of the float)."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return repr(float(x))


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, Regime):
        return o.value
    raise TypeError(type(o))


# ---------------------------------------------------------------------------
# experiment


@dataclass
class RunReport:
    config: ExperimentConfig
    regime: object
    seeds: list
    times: np.ndarray
    kappa: float
    band_violations: int
    final: dict
    error_fractions: dict
    rate_fits: list
    martingale: dict | None
    coupled: dict | None
    files: dict
    wall_clock: float
    summary: dict = field(default_factory=dict, repr=False)
    belief_statistic: np.ndarray | None = field(default=None, repr=False)
    chi_hat: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self):
        bad = self.band_violations > 0
        if self.martingale:
            bad |= self.martingale["hard_violations"] > 0
        if self.coupled:
            bad |= self.coupled["violations"] > 0
        return not bad


def _rep_bytes(cfg, n, needs_history):
    """Approximate memory held per replication: uniform block, checkpoint arrays and history."""
    need = 4096 * n * 8 + 8 * cfg.checkpoints * n * 8
    if needs_history:
        need += (cfg.horizon - 1) * n * (8 + 1)
    return need


def _chunks(cfg, n, needs_history):
    """Replication index ranges processed together under the memory budget."""
    reps = cfg.replications
    need = _rep_bytes(cfg, n, needs_history)
    budget = cfg.memory_budget_mb * 2**20
    if need > budget:
        raise ConfigError(
            f"one replication keeps {need / 2**20:.1f} MiB of history (n={n}, T={cfg.horizon}), "
            f"over the memory budget of {cfg.memory_budget_mb} MiB; raise memory_budget_mb or shorten the run"
        )
    per = max(1, int(budget // need))
    return [range(s, min(s + per, reps)) for s in range(0, reps, per)]


def _mle_path(mu_col, psi_col, times):
    """MLE of one agent at every checkpoint, warm-started from the previous one."""
    nu = np.log(mu_col) - np.log1p(-mu_col)
    s = (2 * psi_col.astype(np.int8) - 1).astype(np.int8)
    ones = np.concatenate([[0], np.cumsum(psi_col, dtype=np.int64)])
    musum = np.concatenate([[0.0], np.cumsum(mu_col)])
    chi = np.full(times.size, np.nan)
    ident = np.zeros(times.size, dtype=bool)
    prev = 0.0
    for k, t in enumerate(times):
        m = int(t) - 1
        if m < 1:
            continue
        h = DeclarationHistory(nu[:m], s[:m], int(ones[m]), int(m - ones[m]), float(musum[m]))
        est = mle_bias(h, chi0=prev)
        chi[k] = est.chi_hat
        ident[k] = est.identifiable
        if est.identifiable:
            prev = est.chi_hat
    return chi, ident


def run_experiment(cfg: ExperimentConfig, parts=PARTS, out_dir=None, strict=True) -> RunReport:
    """Run every configured replication and write the requested outputs.

    ``parts`` selects among trajectory rows, estimates, rate fits and
    martingale/coupling diagnostics. With ``strict`` a violated hard
    invariant raises :class:`AssertionFailure` after the files are written.
    """
    start = time.perf_counter()
    parts = set(parts)
    net = cfg.network()
    bias = cfg.bias(net)
    init = cfg.initial(net)
    regime = classify(net, bias)
    T = cfg.horizon
    times = geometric_checkpoints(T, cfg.checkpoints)
    n, R, C = net.n, cfg.replications, times.size
    seeds = [replication_seed(cfg.base_seed, r) for r in range(R)]
    kappa = band_constant(net, init)
    diag = cfg.diagnostics
    want_est = "estimates" in parts
    want_mart = "diagnostics" in parts and diag.martingale_ratio is not None
    want_mle = want_est and "mle" in cfg.estimators
    needs_history = want_mle or want_mart
    consensus = regime.regime in (Regime.TO_ZERO, Regime.TO_ONE)
    target = "zero" if regime.regime == Regime.TO_ZERO else "one"
    pf = perron_functional(net, bias, target) if consensus else None

    beta = np.empty((R, C, n))
    mu = np.empty((R, C, n))
    ones = np.empty((R, C, n), dtype=np.int64)
    cum = np.empty((R, C, n))
    chi = np.full((R, C, n), np.nan)
    ident = np.zeros((R, C, n), dtype=bool)
    band = 0
    diag_rows = []
    hard = None
    drift_violations = 0
    tail_constants = []
    growth_ok = 0
    y_sum = y_sq = 0.0
    y_count = 0
    qv_ratio = []
    z_final = np.empty((R, n)) if want_mart else None
    z_check = np.empty((R, C, n)) if want_mart else None
    env_by_agent = [[] for _ in range(n)]

    for chunk in _chunks(cfg, n, needs_history):
        sub = [seeds[r] for r in chunk]
        traj = simulate(net, bias, init, T, sub, checkpoints=times, keep_history=needs_history)
        sl = slice(chunk.start, chunk.stop)
        beta[sl], mu[sl], ones[sl], cum[sl] = traj.beta, traj.mu, traj.ones, traj.mu_cumsum
        band += int(traj.band_violations.sum())
        for j, r in enumerate(chunk):
            for i in range(n):
                try:
                    if want_mle:
                        chi[r, :, i], ident[r, :, i] = _mle_path(traj.history_mu[j, :, i], traj.history_psi[j, :, i], times)
                    if want_mart:
                        h = DeclarationHistory.from_arrays(traj.history_mu[j, :, i], traj.history_psi[j, :, i])
                        g1 = float(bias.gamma[i])
                        tr = build_trace(h, g1, g1 * diag.martingale_ratio)
                        rep_bounds = check_bounds(tr)
                        hard = rep_bounds if hard is None else hard + rep_bounds
                        dr = drift_floor_check(tr, kappa)
                        drift_violations += dr.violations
                        tail_constants.append(dr.tail_constant)
                        growth_ok += int(dr.growth > 0.9 * dr.growth_floor)
                        y = tr.y
                        y_sum += float(y.sum())
                        y_sq += float((y * y).sum())
                        y_count += y.size
                        qv_ratio.append(float((y * y).sum() / tr.W[-1]))
                        z_final[r, i] = tr.Z[-1]
                        z_check[r, :, i] = [tr.Z[t - 2] if t >= 2 else 0.0 for t in times]
                        env_by_agent[i].append(tr)
                        diag_rows.extend(trace_rows(tr, r, i, times))
                except PolyaError as exc:
                    raise type(exc)(f"rep {r}, agent {i}: {exc}") from exc
        del traj
    # keep the traces only as long as needed for the envelope
    envelope = None
    if want_mart:
        envelope = [float(np.mean([freedman_envelope(env_by_agent[i], int(t)) for i in range(n)])) if t >= 2 else 1.0 for t in times]
    del env_by_agent

    # estimators at checkpoints
    phi = bias.phi
    stat = ones - cum
    phi_belief = belief_from_statistic(stat)
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = (beta > 1e-12) & (beta < 1 - 1e-12) & (mu > 1e-12) & (mu < 1 - 1e-12)
        gamma_eq = np.where(inside, beta / (1 - beta) * (1 - mu) / mu, np.nan)
    phi_eq = np.where(inside, belief_from_statistic(beta - mu), -1)
    errors = {}
    if "belief" in cfg.estimators:
        errors["belief"] = (phi_belief != phi).mean(axis=(0, 2))
    if want_mle:
        errors["mle"] = ((chi > 0).astype(np.int8) != phi).mean(axis=(0, 2))
    if "equilibrium" in cfg.estimators:
        errors["equilibrium"] = (phi_eq != phi).mean(axis=(0, 2))

    final = {
        "phi": phi.tolist(),
        "belief_phi_hat": phi_belief[:, -1].tolist(),
        "belief_all_correct": int((phi_belief[:, -1] == phi).all(axis=1).sum()),
    }
    if want_mle:
        final["chi_hat"] = chi[:, -1].tolist()
        final["mle_abs_error_median"] = float(np.median(np.abs(chi[:, -1] - bias.chi)))
        final["mle_all_correct"] = int(((chi[:, -1] > 0) == (phi == 1)).all(axis=1).sum())

    # rates
    rate_rows, rate_fits = [], []
    want_rate = "rates" in parts and diag.rate_fit and consensus
    if want_rate:
        lo, hi = diag.rate_window
        window = (lo * T, hi * T)
        tgt = pf.lam - 1.0
        x = beta if target == "zero" else 1.0 - beta
        V = x @ pf.v
        for r in range(R):
            for k, t in enumerate(times):
                rate_rows.append((r, "V", int(t), V[r, k]))
                for i in range(n):
                    rate_rows.append((r, f"beta_{i}", int(t), x[r, k, i]))
            fits = [("V", fit_rate(times, V[r], window, tgt))]
            fits += [(f"beta_{i}", fit_rate(times, x[r, :, i], window, tgt)) for i in range(n)]
            rate_fits.extend((r, q, f) for q, f in fits)

    coupled = None
    coupled_rows = []
    if "diagnostics" in parts and diag.coupled_radius is not None and consensus:
        runs = [
            simulate_coupled(net, bias, init, T, seeds[r], radius=diag.coupled_radius, checkpoints=times, target=target)
            for r in range(R)
        ]
        for r, run in enumerate(runs):
            for t, v, a, b in zip(run.times, run.V, run.h_lo, run.h_hi):
                coupled_rows.append((r, int(t), v, a, b))
        started = [run for run in runs if run.t_start is not None]
        coupled = {
            "radius": diag.coupled_radius,
            "runs_started": len(started),
            "runs_beyond_radius": sum(run.left_disc for run in started),
            "visited_radius_max": max((run.visited_radius for run in started), default=None),
            "alpha_lo_min": min((run.alpha_lo for run in started), default=None),
            "alpha_hi_max": max((run.alpha_hi for run in started), default=None),
            "steps_checked": sum(run.steps_checked for run in started),
            "violations": sum(run.violations for run in started),
        }

    martingale = None
    if want_mart:
        mean_y = y_sum / y_count
        se = math.sqrt(max(y_sq / y_count - mean_y**2, 0.0) / y_count)
        z_wrong = (z_check < 0).mean(axis=(0, 2))
        martingale = {
            "ratio": diag.martingale_ratio,
            "steps_checked": hard.steps,
            "dz_violations": hard.dz_violations,
            "dy_violations": hard.dy_violations,
            "w_violations": hard.w_violations,
            "x_violations": hard.x_violations,
            "monotone_violations": hard.monotone_violations,
            "hard_violations": hard.total,
            "drift_floor_violations": drift_violations,
            "drift_growth_ok": growth_ok,
            "tail_constant_min": float(min(tail_constants)),
            "y_mean": mean_y,
            "y_mean_se": se,
            "qv_ratio_min": float(min(qv_ratio)),
            "qv_ratio_max": float(max(qv_ratio)),
            "z_wrong_fraction": z_wrong.tolist(),
            "freedman_envelope": envelope,
            "z_final_wrong_fraction": float((z_final < 0).mean()),
        }

    # ---- files
    out = Path(out_dir or cfg.output_dir)
    files = {}

    def emit(name, text):
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
        files[name] = hashlib.sha256(text.encode()).hexdigest()

    emit("regime.json", _json_text(regime.to_dict()))
    if "trajectory" in parts:
        rows = ((r, int(t), i, beta[r, k, i], mu[r, k, i], ones[r, k, i]) for r in range(R) for k, t in enumerate(times) for i in range(n))
        emit("trajectory.csv", _csv_text(("rep", "t", "agent", "beta", "mu", "ones"), rows))
    if want_est:
        use_b = "belief" in cfg.estimators
        use_e = "equilibrium" in cfg.estimators

        def est_rows():
            for r in range(R):
                for k, t in enumerate(times):
                    for i in range(n):
                        pb = int(phi_belief[r, k, i])
                        pe = int(phi_eq[r, k, i])
                        c = chi[r, k, i]
                        yield (
                            r,
                            int(t),
                            i,
                            c if want_mle else "",
                            math.exp(c) if want_mle and np.isfinite(c) else "",
                            (pb if pb >= 0 else "") if use_b else "",
                            (pe if pe >= 0 else "") if use_e else "",
                            gamma_eq[r, k, i] if use_e and np.isfinite(gamma_eq[r, k, i]) else "",
                            bool(ident[r, k, i]) if want_mle else "",
                            bool(pb < 0) if use_b else "",
                        )

        emit(
            "estimates.csv",
            _csv_text(
                ("rep", "t", "agent", "chi_hat", "gamma_hat", "phi_hat", "phi_eq_hat", "gamma_eq_hat", "identifiable", "tie"),
                est_rows(),
            ),
        )
        names = sorted(errors)
        emit("errors.csv", _csv_text(("t",) + tuple(names), ((int(t),) + tuple(errors[e][k] for e in names) for k, t in enumerate(times))))
    if want_rate:
        emit("rates.csv", _csv_text(("rep", "quantity", "t", "value"), rate_rows))
        fit_rows = [(r, q, f.exponent, f.intercept, f.r_squared, f.window[0], f.window[1], f.target) for r, q, f in rate_fits]
        emit(
            "rate_fits.csv",
            _csv_text(("rep", "quantity", "exponent", "intercept", "r_squared", "t_lo", "t_hi", "target"), fit_rows),
        )
    if want_mart:
        emit("diagnostics.csv", _csv_text(DIAG_COLUMNS, diag_rows))
    if coupled is not None:
        emit("coupled.csv", _csv_text(("rep", "t", "V", "h_lo", "h_hi"), coupled_rows))

    summary = {
        "regime": regime.regime.value,
        "lambda_zero": regime.lambda_zero,
        "lambda_one": regime.lambda_one,
        "kappa": kappa,
        "band_violations": band,
        "final": final,
        "error_fractions": {k: v.tolist() for k, v in errors.items()},
        "checkpoints": times.tolist(),
    }
    if want_rate:
        summary["rate"] = {
            "target": pf.lam - 1.0,
            "mean_V_exponent": float(np.mean([f.exponent for _, q, f in rate_fits if q == "V"])),
        }
    if martingale is not None:
        summary["martingale"] = martingale
    if coupled is not None:
        summary["coupled"] = coupled
    emit("summary.json", _json_text(summary))
    manifest = {
        "config": cfg.to_dict(),
        "seeds": {"base_seed": cfg.base_seed, "mix": "splitmix64(splitmix64(base) + rep)", "replications": seeds},
        "versions": {"polya_opinion": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "files": dict(sorted(files.items())),
    }
    emit("manifest.json", _json_text(manifest))

    report = RunReport(
        config=cfg,
        regime=regime,
        seeds=seeds,
        times=times,
        kappa=kappa,
        band_violations=band,
        final=final,
        error_fractions=errors,
        rate_fits=rate_fits,
        martingale=martingale,
        coupled=coupled,
        files=files,
        wall_clock=time.perf_counter() - start,
        summary=summary,
        belief_statistic=stat,
        chi_hat=chi,
    )
    if strict and not report.ok:
        raise AssertionFailure(
            f"hard invariant violated: band={band}, martingale={martingale and martingale['hard_violations']}, "
            f"coupled={coupled and coupled['violations']}"
        )
    return report


# ---------------------------------------------------------------------------
# delta sweep


@dataclass
class SweepTable:
    regime: str
    rows: list
    fit: dict
    times: np.ndarray
    band_violations: int = 0


def _convergence_index(wrong):
    """For paths ``(P, C)`` of error flags, the first checkpoint index after the last error."""
    C = wrong.shape[1]
    any_wrong = wrong.any(axis=1)
    last = C - 1 - np.argmax(wrong[:, ::-1], axis=1)
    return np.where(any_wrong, last + 1, 0)


def empirical_t_star(wrong, times, delta):
    """Earliest checkpoint after which at most a ``delta`` fraction of paths is ever wrong.

    Returns ``inf`` when even the last checkpoint does not qualify.
    """
    idx = _convergence_index(wrong)
    for k in range(times.size):
        if (idx > k).mean() <= delta:
            return float(times[k])
    return math.inf


def sweep_delta(cfg: ExperimentConfig, deltas=None, out_dir=None) -> SweepTable:
    """Empirical and predicted convergence times of the belief estimator across ``deltas``.

    The empirical ``t*(delta)`` treats every (replication, agent) pair as a
    path and returns the earliest checkpoint from which at most a ``delta``
    fraction of paths is ever wrong again (ties count as wrong).
    """
    deltas = tuple(cfg.deltas if deltas is None else deltas)
    if not deltas:
        raise ConfigError("no deltas given")
    if list(deltas) != sorted(deltas, reverse=True) or not all(0 < d <= 1 for d in deltas):
        raise DomainError("deltas must be strictly decreasing values in (0, 1]")
    R = cfg.replications
    if min(deltas) * R < 10:
        raise InsufficientReplications(f"delta={min(deltas)} needs at least {math.ceil(10 / min(deltas))} replications, got {R}")

    net = cfg.network()
    bias = cfg.bias(net)
    init = cfg.initial(net)
    regime = classify(net, bias)
    T = cfg.horizon
    times = geometric_checkpoints(T, cfg.checkpoints)
    seeds = [replication_seed(cfg.base_seed, r) for r in range(R)]
    wrong_parts = []
    drift_T = []
    band = 0
    for chunk in _chunks(cfg, net.n, False):
        traj = simulate(net, bias, init, T, [seeds[r] for r in chunk], checkpoints=times)
        phi_hat = belief_from_statistic(traj.ones - traj.mu_cumsum)
        w = phi_hat != bias.phi
        wrong_parts.append(w.transpose(0, 2, 1).reshape(-1, times.size))
        drift_T.append(np.abs(traj.drift_cumsum[:, -1]))
        band += int(traj.band_violations.sum())
    wrong = np.concatenate(wrong_parts)
    drift_T = np.concatenate(drift_T)

    # regime-specific drift-floor constants
    kappa = band_constant(net, init)
    g_worst = float(bias.gamma[np.argmin(np.abs(bias.chi))])
    params = {"kappa": kappa}
    if regime.regime == Regime.INTERIOR:
        eq = find_interior_equilibrium(net, bias)
        m = neighborhood(net, eq.beta)
        K_i = np.abs(_f(m, bias.gamma) - m)
        params["K"] = float(K_i.min())
        kind = "interior"
    elif regime.regime in (Regime.TO_ZERO, Regime.TO_ONE):
        lam = regime.lambda_zero if regime.regime == Regime.TO_ZERO else regime.lambda_one
        params.update(lam=lam, eps=0.0, c1=float(np.median(drift_T, axis=0).min() / T**lam))
        kind = "consensus"
    else:
        kind = "worst_case"

    rows = []
    for d in deltas:
        emp = empirical_t_star(wrong, times, d)
        pred = worst = math.nan
        if d < 1:
            worst = predict_convergence_time(g_worst, d, "worst_case", kappa=kappa).t_star
            if kind == "interior":
                pred = predict_convergence_time(g_worst, d, "interior", K=params["K"]).t_star
            elif kind == "consensus":
                pred = predict_convergence_time(g_worst, d, "consensus", c1=params["c1"], lam=params["lam"], eps=0.0).t_star
            else:
                pred = worst
        rows.append((d, emp, pred, worst))

    fit = {"kind": kind, **params}
    fin = [(d, t) for d, t, _, _ in rows if d < 1 and math.isfinite(t)]
    if len(fin) >= 3:
        x = np.log(1.0 / np.array([d for d, _ in fin]))
        y = np.array([t for _, t in fin])
        res = stats.linregress(x, y)
        fit["affine_slope"] = float(res.slope)
        fit["affine_intercept"] = float(res.intercept)
        fit["affine_r2"] = float(res.rvalue**2) if np.isfinite(res.rvalue) else float("nan")
        sel = x > 0
        if kind == "consensus" and sel.sum() >= 3 and (y[sel] > 0).all():
            res2 = stats.linregress(np.log(x[sel]), np.log(y[sel]))
            fit["loglog_slope"] = float(res2.slope)
            fit["loglog_target"] = 1.0 / params["lam"]
    table = SweepTable(regime=regime.regime.value, rows=rows, fit=fit, times=times, band_violations=band)

    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = _csv_text(("delta", "t_star_empirical", "t_star_predicted", "t_star_worst_case"), rows)
    (out / "sweep.csv").write_text(text)
    (out / "sweep_fit.json").write_text(_json_text(fit))
    return table


def write_regime(cfg, out_dir=None):
    net = cfg.network()
    report = classify(net, cfg.bias(net))
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "regime.json").write_text(_json_text(report.to_dict()))
    return report
