"""Experiment pipeline: project, solve, simulate, report.

Wires the stages together for the CLI: envelope -> Laplace surface -> HJB
American/European solves -> boundary and delta extraction -> Monte Carlo
bounds per strike per time-step tier, with machine-readable CSV output.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import __version__, hjb, mc, oracle, surface as surface_mod
from .config import ExperimentConfig, config_hash, serialize_config
from .density import ExpansionCoords
from .model import ModelSpec, Portfolio, PutPayoff
from .projection import projected_vol_sq
from .rng import derive_seed

log = logging.getLogger(__name__)

RESULTS_COLUMNS = ["strike", "n_t", "m", "euro_mc", "se_euro", "a_minus", "se_minus",
                   "a_plus", "se_plus", "bias_minus", "bias_plus",
                   "hjb_american", "hjb_european", "rel_gap"]

CONVERGENCE_COLUMNS = ["n_t", "a_minus", "se_minus", "a_plus", "se_plus",
                       "bias_minus", "bias_plus", "bias_hit_time", "bias_running_max"]


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage tag for diagnostics."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


@dataclass
class ReportRow:
    strike: float
    n_t: int
    m: int
    euro_mc: float
    se_euro: float
    a_minus: float
    se_minus: float
    a_plus: float
    se_plus: float
    bias_minus: float | None
    bias_plus: float | None
    hjb_american: float
    hjb_european: float

    @property
    def rel_gap(self) -> float:
        mid = 0.5 * (self.a_plus + self.a_minus)
        if mid == 0.0:
            return 0.0  # worthless option, both bounds exactly zero
        return (self.a_plus - self.a_minus) / mid

    def as_list(self) -> list:
        return [self.strike, self.n_t, self.m, self.euro_mc, self.se_euro,
                self.a_minus, self.se_minus, self.a_plus, self.se_plus,
                "" if self.bias_minus is None else self.bias_minus,
                "" if self.bias_plus is None else self.bias_plus,
                self.hjb_american, self.hjb_european, self.rel_gap]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class RunReport:
    rows: list
    checks: list
    config_hash: str
    seed: int
    version: str
    passed: bool


@dataclass
class _TierOutput:
    n_t: int
    results: list          # mc.BoundsResult per strike
    hjb_american: list
    hjb_european: list


def build_surface_from_config(cfg: ExperimentConfig, model, p):
    """The surface stage with every numerics knob taken from the config."""
    return surface_mod.build_surface(
        model, p, seed=derive_seed(cfg.seed, "pilot"),
        n_slices=cfg.surface_slices, n_abscissae=cfg.surface_abscissae,
        degree=cfg.surface_degree, floor=cfg.floor_value(model, p),
        coords=cfg.coords_value(), m_pilot=cfg.m_pilot, pilot_steps=cfg.pilot_steps,
        newton_tol=cfg.newton_tol, newton_max_iter=cfg.newton_max_iter)


def _build_tier_tasks(surf, payoffs, grid):
    tasks = []
    hjb_a = []
    hjb_e = []
    for g in payoffs:
        vg_a = hjb.solve(surf, g, grid, hjb.Flavor.AMERICAN)
        vg_e = hjb.solve(surf, g, grid, hjb.Flavor.EUROPEAN)
        bnd = hjb.exercise_boundary(vg_a)
        tasks.append(mc.BoundTask(payoff=g, boundary_levels=bnd.levels,
                                  delta_rows=hjb.delta_array(vg_a),
                                  s_nodes=grid.s_nodes))
        hjb_a.append(vg_a)
        hjb_e.append(vg_e)
    return tasks, hjb_a, hjb_e


def _run_tier(model, p, surf, payoffs, n_t, cfg: ExperimentConfig) -> _TierOutput:
    grid = hjb.make_grid(surf.s_min, surf.s_max, model.T, n_t, c=cfg.c_coupling)
    tasks, vgs_a, vgs_e = _build_tier_tasks(surf, payoffs, grid)
    seed = derive_seed(cfg.seed, "bounds", n_t)
    results = mc.simulate_bounds(model, p, tasks, n_t, cfg.m_paths, seed, cfg.ci_level)
    px0 = float(p.weights @ model.x0)
    return _TierOutput(
        n_t=n_t,
        results=results,
        hjb_american=[hjb.value_at(v, 0.0, px0) for v in vgs_a],
        hjb_european=[hjb.value_at(v, 0.0, px0) for v in vgs_e],
    )


def appendix_checks(model: ModelSpec, p: Portfolio) -> list[CheckResult]:
    """Laplace and quadrature values of the hand-checkable 2d case, both coordinate systems."""
    t, s = 1.0, 200.0
    lap_price = projected_vol_sq(model, p, t, s, coords=ExpansionCoords.PRICE)
    lap_log = projected_vol_sq(model, p, t, s, coords=ExpansionCoords.LOG_PRICE)
    quad = oracle.quadrature_projected_vol(model, p, t, s)
    checks = [
        CheckResult("laplace-price", abs(lap_price - 200.99) <= 0.05,
                    f"projected vol^2 (price coords) = {lap_price:.5f}, target 200.99 +- 0.05"),
        CheckResult("laplace-log-price", abs(lap_log - 200.99) <= 0.05,
                    f"projected vol^2 (log-price coords) = {lap_log:.5f}, target 200.99 +- 0.05"),
        CheckResult("quadrature", abs(quad - 200.98) <= 0.02,
                    f"quadrature oracle = {quad:.5f}, target 200.98 +- 0.02"),
        CheckResult("coords-agreement", abs(lap_price - lap_log) <= 1e-3 * abs(quad),
                    f"coordinate systems differ by {abs(lap_price - lap_log) / quad:.2e} relative"),
    ]
    return checks


def run_experiment(cfg: ExperimentConfig, out_dir, threads: int = 1) -> RunReport:
    """Full pipeline for one configuration; writes CSVs incrementally."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    (out / "config.cfg").write_text(serialize_config(cfg), encoding="utf-8")

    model = cfg.build_model()
    p = cfg.build_portfolio()
    payoffs = cfg.build_payoffs()

    t0 = time.time()
    try:
        surf, env = build_surface_from_config(cfg, model, p)
    except Exception as exc:
        raise StageError("surface", exc) from exc
    surf.save(out / "surface.txt")
    log.info("surface fitted on [%.4g, %.4g] in %.1fs", surf.s_min, surf.s_max, time.time() - t0)

    checks = []
    if cfg.appendix_check:
        try:
            checks.extend(appendix_checks(model, p))
        except Exception as exc:
            raise StageError("appendix", exc) from exc
        for c in checks:
            log.info("%s: %s (%s)", c.name, "pass" if c.passed else "FAIL", c.detail)

    rows: list[ReportRow] = []
    results_path = out / "results.csv"
    with open(results_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# basketproj results v1 config={chash} seed={cfg.seed} version={__version__}\n")
        writer = csv.writer(fh)
        writer.writerow(RESULTS_COLUMNS)
        fh.flush()

        def tier_job(n_t):
            try:
                return _run_tier(model, p, surf, payoffs, n_t, cfg)
            except Exception as exc:
                raise StageError(f"tier-{n_t}", exc) from exc

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                tier_outputs = list(pool.map(tier_job, cfg.nt_tiers))
        else:
            tier_outputs = [tier_job(n_t) for n_t in cfg.nt_tiers]

        by_nt = {o.n_t: o for o in tier_outputs}
        for o in tier_outputs:
            doubled = by_nt.get(2 * o.n_t)
            for j, g in enumerate(payoffs):
                res = o.results[j]
                b = res.bounds
                bias_minus = bias_plus = None
                if doubled is not None:
                    bias_minus, bias_plus = mc.bias_estimate(b, doubled.results[j].bounds)
                row = ReportRow(strike=g.strike, n_t=o.n_t, m=b.m,
                                euro_mc=res.european, se_euro=res.se_european,
                                a_minus=b.a_minus, se_minus=b.se_minus,
                                a_plus=b.a_plus, se_plus=b.se_plus,
                                bias_minus=bias_minus, bias_plus=bias_plus,
                                hjb_american=o.hjb_american[j],
                                hjb_european=o.hjb_european[j])
                rows.append(row)
                writer.writerow(row.as_list())
                fh.flush()

    # top-tier exports for plotting
    top = max(cfg.nt_tiers)
    grid = hjb.make_grid(surf.s_min, surf.s_max, model.T, top, c=cfg.c_coupling)
    for g in payoffs:
        vg = hjb.solve(surf, g, grid, hjb.Flavor.AMERICAN)
        hjb.export_boundary(hjb.exercise_boundary(vg), out / f"boundary_K{g.strike:g}.txt")
        if cfg.export_value_grids:
            hjb.export_values(vg, out / f"values_K{g.strike:g}.txt")

    z = norm.ppf(0.5 + 0.5 * cfg.ci_level)
    ordering_ok = all(r.a_minus <= r.a_plus + z * (r.se_minus + r.se_plus) for r in rows)
    checks.append(CheckResult("bound-ordering", ordering_ok,
                              "A- <= A+ + z(se- + se+) on every row"))
    passed = all(c.passed for c in checks)
    return RunReport(rows=rows, checks=checks, config_hash=chash, seed=cfg.seed,
                     version=__version__, passed=passed)


# -- convergence study --------------------------------------------------------


@dataclass
class ConvergenceReport:
    strike: float
    tiers: list
    table: np.ndarray      # columns per CONVERGENCE_COLUMNS
    slopes: dict


def convergence_study(cfg: ExperimentConfig, out_dir) -> ConvergenceReport:
    """Coupled-path bias decay across time-step tiers for the near-the-money strike.

    All tiers consume the same fine Brownian increments so the step-doubling
    differences measure discretization bias, not statistical noise.
    """
    if len(cfg.nt_tiers) < 3:
        raise StageError("convergence", ValueError("need at least 3 tiers"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.build_model()
    p = cfg.build_portfolio()
    px0 = float(p.weights @ model.x0)
    strike = min(cfg.strikes, key=lambda k: abs(k - px0))
    g = PutPayoff(float(strike))

    surf, _ = build_surface_from_config(cfg, model, p)

    all_nt = list(cfg.nt_tiers) + [2 * max(cfg.nt_tiers)]
    tier_tasks = []
    for n_t in all_nt:
        grid = hjb.make_grid(surf.s_min, surf.s_max, model.T, n_t, c=cfg.c_coupling)
        tasks, _, _ = _build_tier_tasks(surf, [g], grid)
        tier_tasks.append(mc.TierTask(n_t=n_t, tasks=tasks))
    seed = derive_seed(cfg.seed, "convergence", max(all_nt))
    per_tier = mc.simulate_tiers_coupled(model, p, tier_tasks, cfg.m_paths, seed, cfg.ci_level)
    by_nt = {tt.n_t: res[0] for tt, res in zip(tier_tasks, per_tier)}

    rows = []
    for n_t in cfg.nt_tiers:
        res = by_nt[n_t]
        fine = by_nt[2 * n_t]
        rows.append([
            n_t,
            res.bounds.a_minus, res.bounds.se_minus,
            res.bounds.a_plus, res.bounds.se_plus,
            abs(fine.bounds.a_minus - res.bounds.a_minus),
            abs(fine.bounds.a_plus - res.bounds.a_plus),
            abs(fine.mean_hit_time - res.mean_hit_time),
            abs(fine.mean_running_max - res.mean_running_max),
        ])
    table = np.array(rows)

    slopes = {}
    for name, col in (("a_minus", 5), ("a_plus", 6), ("hit_time", 7), ("running_max", 8)):
        biases = table[:, col]
        if np.any(biases <= 0.0) or not np.all(np.isfinite(biases)):
            slopes[name] = None  # undefined (deterministic model or exact tier)
            continue
        fit = np.polyfit(np.log(table[:, 0]), np.log(biases), 1)
        slopes[name] = -float(fit[0])  # decay order: bias ~ N_t^(-slope)

    path = out / "convergence.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# basketproj convergence v1 strike={strike:g} m={cfg.m_paths} "
                 f"config={config_hash(cfg)} seed={cfg.seed}\n")
        writer = csv.writer(fh)
        writer.writerow(CONVERGENCE_COLUMNS)
        for row in rows:
            writer.writerow(row)
        for name, val in slopes.items():
            fh.write(f"# slope_{name} = {'undefined' if val is None else f'{val:.4f}'}\n")
    return ConvergenceReport(strike=strike, tiers=list(cfg.nt_tiers), table=table, slopes=slopes)


# -- validation suite ---------------------------------------------------------


def validation_checks(fast: bool = True) -> list[CheckResult]:
    """Oracle cross-checks: quadrature vs Laplace, tree vs PDE, exactness, binned MC."""
    from .presets import appendix2d, bachelier5d, bs3d

    checks: list[CheckResult] = []

    cfg = appendix2d()
    model = cfg.build_model()
    p = cfg.build_portfolio()
    checks.extend(appendix_checks(model, p))

    checks.append(check_solver_1d())
    checks.append(check_bachelier_surface())
    checks.append(check_bachelier_bracket())
    checks.append(check_dominance())
    checks.append(check_binned_vs_laplace(m=200_000 if fast else 2_000_000))
    return checks


def check_solver_1d(floor_override: float | None = None) -> CheckResult:
    from math import erf, exp, log as mlog, sqrt

    strike = spot = 100.0
    vol, r, t_mat = 0.2, 0.05, 0.5
    surf = surface_mod.CoefficientSurface(
        slice_times=np.array([0.0]), coeffs=np.array([[0.0, 0.0, vol**2, 0.0]]),
        floor=1e-6 if floor_override is None else floor_override,
        s_min=0.0, s_max=320.0, t_max=t_mat, r=r)
    grid = hjb.make_grid(0.0, 320.0, t_mat, 4096, n_s=257)
    pay = PutPayoff(strike)
    pe = hjb.value_at(hjb.solve(surf, pay, grid, hjb.Flavor.EUROPEAN), 0.0, spot)
    pa = hjb.value_at(hjb.solve(surf, pay, grid, hjb.Flavor.AMERICAN), 0.0, spot)
    ncdf = lambda x: 0.5 * (1.0 + erf(x / sqrt(2.0)))
    d1 = (mlog(spot / strike) + (r + 0.5 * vol**2) * t_mat) / (vol * sqrt(t_mat))
    d2 = d1 - vol * sqrt(t_mat)
    ref_e = strike * exp(-r * t_mat) * ncdf(-d2) - spot * ncdf(-d1)
    ref_a = oracle.binomial_american_put_1d(spot, vol, r, strike, t_mat, 10_000)
    err_e = abs(pe - ref_e) / ref_e
    err_a = abs(pa - ref_a) / ref_a
    return CheckResult("solver-1d", err_e < 2e-3 and err_a < 5e-3,
                       f"European rel err {err_e:.2e} (gate 2e-3), American {err_a:.2e} (gate 5e-3)")


def check_bachelier_surface() -> CheckResult:
    from .presets import bachelier5d

    cfg = bachelier5d()
    model = cfg.build_model()
    p = cfg.build_portfolio()
    surf, _ = surface_mod.build_surface(model, p, seed=derive_seed(cfg.seed, "pilot"))
    row = p.weights @ model.sigma
    analytic = float(row @ row)
    ss = np.linspace(surf.s_min, surf.s_max, 41)
    worst = max(abs(float(surf.eval_b2(t, ss).max()) - analytic)
                for t in np.linspace(0.0, model.T, 9)) / analytic
    return CheckResult("bachelier-exact-surface", worst < 1e-12,
                       f"max relative deviation from the analytic constant {worst:.2e}")


def check_bachelier_bracket(floor_override: float | None = None,
                            n_t: int = 1024, m: int = 16_000) -> CheckResult:
    """Bachelier projection is exact, so the PDE value must sit inside the MC bracket."""
    from .presets import bachelier5d

    cfg = bachelier5d()
    model = cfg.build_model()
    p = cfg.build_portfolio()
    surf, _ = surface_mod.build_surface(model, p, seed=derive_seed(cfg.seed, "pilot"),
                                        floor=floor_override)
    grid = hjb.make_grid(surf.s_min, surf.s_max, model.T, n_t, c=cfg.c_coupling)
    g = PutPayoff(cfg.strikes[0])
    tasks, vgs_a, _ = _build_tier_tasks(surf, [g], grid)
    res = mc.simulate_bounds(model, p, tasks, n_t, m,
                             derive_seed(cfg.seed, "validate", n_t))[0]
    b = res.bounds
    px0 = float(p.weights @ model.x0)
    value = hjb.value_at(vgs_a[0], 0.0, px0)
    mid = b.midpoint
    tol = max(3.0 * (b.se_minus + b.se_plus), 0.02 * mid)
    ok = (b.a_minus - tol) <= value <= (b.a_plus + tol)
    return CheckResult("bachelier-bracket", ok,
                       f"PDE value {value:.4f} vs bounds [{b.a_minus:.4f}, {b.a_plus:.4f}] "
                       f"(slack {tol:.4f})")


def check_dominance() -> CheckResult:
    from .presets import bs3d

    cfg = bs3d()
    model = cfg.build_model()
    p = cfg.build_portfolio()
    surf, _ = surface_mod.build_surface(model, p, seed=derive_seed(cfg.seed, "pilot"))
    grid = hjb.make_grid(surf.s_min, surf.s_max, model.T, 512, c=cfg.c_coupling)
    g = PutPayoff(300.0)
    vg_a = hjb.solve(surf, g, grid, hjb.Flavor.AMERICAN)
    vg_e = hjb.solve(surf, g, grid, hjb.Flavor.EUROPEAN)
    obstacle = float(np.min(vg_a.values - g(grid.s_nodes)))
    dominance = float(np.min(vg_a.values - vg_e.values))
    ok = obstacle >= -1e-12 and dominance >= -1e-10
    return CheckResult("hjb-dominance", ok,
                       f"min(u_A - g) = {obstacle:.2e}, min(u_A - u_E) = {dominance:.2e}")


def check_binned_vs_laplace(m: int = 200_000) -> CheckResult:
    from .presets import bs3d

    cfg = bs3d()
    model = cfg.build_model()
    p = cfg.build_portfolio()
    t = 0.5
    table = oracle.binned_conditional_vol(model, p, t, m, bins=30,
                                          seed=derive_seed(cfg.seed, "binned"))
    n_ok = 0
    for s, est, se in table:
        lap = projected_vol_sq(model, p, t, float(s))
        if abs(lap - est) <= 3.0 * se + 1e-3 * est:
            n_ok += 1
    frac = n_ok / len(table)
    # skew: both estimates must slope the same way across the basket range
    lap_lo = projected_vol_sq(model, p, t, float(table[2, 0]))
    lap_hi = projected_vol_sq(model, p, t, float(table[-3, 0]))
    binned_slope = np.polyfit(table[:, 0], table[:, 1], 1)[0]
    same_skew = np.sign(lap_hi - lap_lo) == np.sign(binned_slope)
    ok = frac >= 0.8 and bool(same_skew)
    return CheckResult("binned-vs-laplace", ok,
                       f"{n_ok}/{len(table)} bins within 3 se; skew sign match: {same_skew}")
