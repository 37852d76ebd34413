"""Forward-Euler simulation and the two Monte Carlo price bound estimators.

One path batch drives everything: the hitting-time lower bound implied by the
projected exercise boundary, the dual-martingale upper bound built from the
projected value function's delta, and the European put estimate.  Both bounds
see the same Brownian increments.  Increments are keyed by (seed, step, path
chunk), so results do not depend on scheduling or batch composition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .model import ModelKind, ModelSpec, Portfolio, PutPayoff
from .rng import normal_matrix

DEFAULT_CI_LEVEL = 0.95


@dataclass(frozen=True)
class PriceBounds:
    """Lower/upper estimators with standard errors and optional bias diagnostics."""

    a_minus: float
    a_plus: float
    se_minus: float
    se_plus: float
    ci_level: float
    n_t: int
    m: int
    bias_minus: float | None = None
    bias_plus: float | None = None

    def interval(self) -> tuple[float, float]:
        z = norm.ppf(0.5 + 0.5 * self.ci_level)
        return self.a_minus - z * self.se_minus, self.a_plus + z * self.se_plus

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.a_minus + self.a_plus)

    @property
    def relative_gap(self) -> float:
        if self.midpoint == 0.0:
            return 0.0  # worthless option, both bounds exactly zero
        return (self.a_plus - self.a_minus) / self.midpoint


@dataclass(frozen=True)
class BoundsResult:
    """Full per-strike output of one batch: bounds plus auxiliary functionals."""

    bounds: PriceBounds
    european: float
    se_european: float
    mean_hit_time: float
    se_hit_time: float
    mean_running_max: float
    se_running_max: float


@dataclass
class BoundTask:
    """Per-strike inputs for the bound estimators, as plain arrays.

    boundary_levels[n] is the basket level at grid time n below which the path
    stops (-inf when the exercise region is empty there); delta_rows[n] holds
    the finite-difference delta of the projected value function on s_nodes.
    """

    payoff: PutPayoff
    boundary_levels: np.ndarray
    delta_rows: np.ndarray
    s_nodes: np.ndarray


def wiener_increments(stream_seed: int, step: int, m: int, k: int, dt: float) -> np.ndarray:
    """Brownian increments over one step: N(0, dt) per component."""
    return normal_matrix(stream_seed, step, m, k) * np.sqrt(dt)


@dataclass(frozen=True)
class PathBatch:
    """A batch of forward-Euler paths, materialized on demand.

    Path i is a deterministic function of (seed, i): increments come from
    counter-based streams keyed by (seed, step, path chunk), so neither the
    batch size nor the evaluation order changes a path's draws.
    """

    seed: int
    m: int
    t_grid: np.ndarray

    @property
    def n_t(self) -> int:
        return self.t_grid.size - 1

    def increments(self, step: int, k: int) -> np.ndarray:
        dt = self.t_grid[step + 1] - self.t_grid[step]
        return wiener_increments(self.seed, step, self.m, k, dt)

    def states(self, model: ModelSpec):
        """Yield (step, x) sweeping the batch forward; x is the (m, d) state at t_grid[step]."""
        x = np.tile(model.x0, (self.m, 1))
        for n in range(self.n_t + 1):
            yield n, x
            if n < self.n_t:
                x = step(model, x, self.t_grid[n + 1] - self.t_grid[n],
                         self.increments(n, model.k))


def step(model: ModelSpec, x: np.ndarray, dt: float, dw: np.ndarray) -> np.ndarray:
    """One forward-Euler step x + r x dt + b(t, x) dW, vectorized over paths.

    Black-Scholes states are floored at zero; drift and diffusion vanish there,
    so the boundary is absorbing.
    """
    x = np.asarray(x, dtype=float)
    dw = np.asarray(dw, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    dws = np.atleast_2d(dw) @ model.sigma.T
    if model.kind is ModelKind.BACHELIER:
        out = x2 + model.r * x2 * dt + dws
    else:
        out = x2 + model.r * x2 * dt + x2 * dws
        np.maximum(out, 0.0, out=out)
    return out[0] if single else out


def discounted_payoff(g: PutPayoff, r: float, t: float, s):
    """e^{-r t} g(s)."""
    return np.exp(-r * t) * g(s)


def confidence_interval(mean: float, se: float, level: float = DEFAULT_CI_LEVEL) -> tuple[float, float]:
    """Gaussian CLT interval at the given two-sided level."""
    z = norm.ppf(0.5 + 0.5 * level)
    return mean - z * se, mean + z * se


def bias_estimate(run_coarse: PriceBounds, run_fine: PriceBounds) -> tuple[float, float]:
    """|A(2 N_t) - A(N_t)| per bound; callers supply runs with identical physical inputs."""
    return (abs(run_fine.a_minus - run_coarse.a_minus),
            abs(run_fine.a_plus - run_coarse.a_plus))


class _TaskState:
    """Streaming accumulators for one strike on one batch."""

    def __init__(self, task: BoundTask, m: int):
        self.task = task
        self.mart = np.zeros(m)
        self.umax = np.full(m, -np.inf)
        self.zmax = np.full(m, -np.inf)
        self.stopped = np.zeros(m, dtype=bool)
        self.lowval = np.zeros(m)
        self.tau = np.zeros(m)
        self._delta_now = None

    def evaluate(self, n: int, t: float, r: float, basket: np.ndarray):
        z = np.exp(-r * t) * self.task.payoff(basket)
        np.maximum(self.umax, z - self.mart, out=self.umax)
        np.maximum(self.zmax, z, out=self.zmax)
        newly = ~self.stopped & (basket <= self.task.boundary_levels[n])
        self.lowval[newly] = z[newly]
        self.tau[newly] = t
        self.stopped |= newly
        self._z = z
        self._delta_now = np.interp(basket, self.task.s_nodes, self.task.delta_rows[n])

    def accumulate_martingale(self, t: float, r: float, pbdw: np.ndarray):
        self.mart += np.exp(-r * t) * self._delta_now * pbdw

    def finish(self, t_final: float, ci_level: float, n_t: int, m: int) -> BoundsResult:
        open_paths = ~self.stopped
        self.lowval[open_paths] = self._z[open_paths]  # exercise at maturity
        self.tau[open_paths] = t_final
        low, se_low = _mean_se(self.lowval)
        up, se_up = _mean_se(self.umax)
        euro, se_euro = _mean_se(self._z)
        tau, se_tau = _mean_se(self.tau)
        zmax, se_zmax = _mean_se(self.zmax)
        bounds = PriceBounds(a_minus=low, a_plus=up, se_minus=se_low, se_plus=se_up,
                             ci_level=ci_level, n_t=n_t, m=m)
        return BoundsResult(bounds=bounds, european=euro, se_european=se_euro,
                            mean_hit_time=tau, se_hit_time=se_tau,
                            mean_running_max=zmax, se_running_max=se_zmax)


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def _pbdw(model: ModelSpec, p: Portfolio, x: np.ndarray, dws: np.ndarray) -> np.ndarray:
    """P b(t, x) dW for every path; dws is dW @ sigma^T."""
    if model.kind is ModelKind.BACHELIER:
        return dws @ p.weights
    return ((x * p.weights) * dws).sum(axis=1)


def simulate_bounds(model: ModelSpec, p: Portfolio, tasks: list[BoundTask],
                    n_t: int, m: int, seed: int,
                    ci_level: float = DEFAULT_CI_LEVEL) -> list[BoundsResult]:
    """One forward-Euler batch evaluating all strikes' bounds on shared paths."""
    dt = model.T / n_t
    sqdt = np.sqrt(dt)
    x = np.tile(model.x0, (m, 1))
    states = [_TaskState(task, m) for task in tasks]
    for n in range(n_t + 1):
        t = n * dt
        basket = x @ p.weights
        for st in states:
            st.evaluate(n, t, model.r, basket)
        if n == n_t:
            break
        dws = normal_matrix(seed, n, m, model.k) * sqdt @ model.sigma.T
        pb = _pbdw(model, p, x, dws)
        for st in states:
            st.accumulate_martingale(t, model.r, pb)
        if model.kind is ModelKind.BACHELIER:
            x = x + model.r * x * dt + dws
        else:
            x = x + model.r * x * dt + x * dws
            np.maximum(x, 0.0, out=x)
    return [st.finish(model.T, ci_level, n_t, m) for st in states]


def lower_bound(model: ModelSpec, p: Portfolio, payoff: PutPayoff, boundary,
                m: int, seed: int, delta_rows=None, s_nodes=None,
                ci_level: float = DEFAULT_CI_LEVEL) -> BoundsResult:
    """Hitting-time estimator alone; boundary is any object with .levels on the grid."""
    levels = np.asarray(boundary.levels, dtype=float)
    n_t = levels.size - 1
    if s_nodes is None:
        s_nodes = np.array([0.0, 1.0])
        delta_rows = np.zeros((n_t + 1, 2))
    task = BoundTask(payoff=payoff, boundary_levels=levels,
                     delta_rows=np.asarray(delta_rows, dtype=float),
                     s_nodes=np.asarray(s_nodes, dtype=float))
    return simulate_bounds(model, p, [task], n_t, m, seed, ci_level)[0]


def upper_bound(model: ModelSpec, p: Portfolio, payoff: PutPayoff, vg,
                m: int, seed: int, ci_level: float = DEFAULT_CI_LEVEL) -> BoundsResult:
    """Dual-martingale estimator alone; vg is a solved projected value grid."""
    from .hjb import delta_array  # local import to keep the module graph acyclic

    rows = delta_array(vg)
    n_t = rows.shape[0] - 1
    task = BoundTask(payoff=payoff,
                     boundary_levels=np.full(n_t + 1, -np.inf),
                     delta_rows=rows, s_nodes=vg.grid.s_nodes)
    return simulate_bounds(model, p, [task], n_t, m, seed, ci_level)[0]


@dataclass
class TierTask:
    """One refinement level of a coupled convergence run."""

    n_t: int
    tasks: list[BoundTask]


def simulate_tiers_coupled(model: ModelSpec, p: Portfolio, tiers: list[TierTask],
                           m: int, seed: int,
                           ci_level: float = DEFAULT_CI_LEVEL) -> list[list[BoundsResult]]:
    """Evaluate several time-step tiers on one shared fine Brownian path.

    Coarser tiers consume sums of the fine increments, so tier differences
    estimate pure discretization bias with far lower variance than independent
    batches.  Tier step counts must divide the finest count.
    """
    n_fine = max(t.n_t for t in tiers)
    for t in tiers:
        if n_fine % t.n_t != 0:
            raise ValueError(f"tier n_t={t.n_t} does not divide the finest tier {n_fine}")
    dt_fine = model.T / n_fine
    sq = np.sqrt(dt_fine)
    sig_t = model.sigma.T
    runs = []
    for tier in tiers:
        runs.append({
            "tier": tier,
            "stride": n_fine // tier.n_t,
            "dt": model.T / tier.n_t,
            "x": np.tile(model.x0, (m, 1)),
            "acc": np.zeros((m, model.k)),
            "states": [_TaskState(task, m) for task in tier.tasks],
        })
    for nf in range(n_fine):
        for run in runs:
            if nf % run["stride"] == 0:
                n = nf // run["stride"]
                t = n * run["dt"]
                basket = run["x"] @ p.weights
                for st in run["states"]:
                    st.evaluate(n, t, model.r, basket)
        dw = normal_matrix(seed, nf, m, model.k) * sq
        for run in runs:
            run["acc"] += dw
            if (nf + 1) % run["stride"] == 0:
                n = nf // run["stride"]
                t = n * run["dt"]
                dws = run["acc"] @ sig_t
                pb = _pbdw(model, p, run["x"], dws)
                for st in run["states"]:
                    st.accumulate_martingale(t, model.r, pb)
                x = run["x"]
                if model.kind is ModelKind.BACHELIER:
                    x = x + model.r * x * run["dt"] + dws
                else:
                    x = x + model.r * x * run["dt"] + x * dws
                    np.maximum(x, 0.0, out=x)
                run["x"] = x
                run["acc"][:] = 0.0
    out = []
    for run in runs:
        n = run["tier"].n_t
        basket = run["x"] @ p.weights
        for st in run["states"]:
            st.evaluate(n, model.T, model.r, basket)
        out.append([st.finish(model.T, ci_level, n, m) for st in run["states"]])
    return out
