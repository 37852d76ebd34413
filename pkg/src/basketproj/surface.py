"""Globally defined coefficient surface (t, s) -> (drift, squared volatility).

Pointwise Laplace evaluations are taken on a pilot-simulation envelope of the
basket, fitted per time slice with low-order polynomials in s, interpolated
linearly in t, extrapolated as-is outside the fitted range and clamped below
by a positivity floor so the backward solve stays parabolic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import mc
from .model import ModelKind, ModelSpec, Portfolio
from .projection import NEWTON_MAX_ITER, NEWTON_TOL, NewtonError, projected_vol_sq

log = logging.getLogger(__name__)

DEFAULT_DEGREE = 3
DEFAULT_SLICES = 16
DEFAULT_ABSCISSAE = 24
PILOT_PATHS = 100
PILOT_STEPS = 512


@dataclass(frozen=True)
class Envelope:
    """Per-time min/max basket values over a pilot path batch."""

    times: np.ndarray
    s_lo: np.ndarray
    s_hi: np.ndarray

    def width(self) -> float:
        return float(self.s_hi[-1] - self.s_lo[-1])


def estimate_envelope(model: ModelSpec, p: Portfolio, m_pilot: int = PILOT_PATHS,
                      n_t: int = PILOT_STEPS, seed: int = 0) -> Envelope:
    """Forward-Euler pilot batch; componentwise basket min/max per time step."""
    if m_pilot < 2:
        raise ValueError("need at least 2 pilot paths")
    times = np.linspace(0.0, model.T, n_t + 1)
    dt = model.T / n_t
    x = np.tile(model.x0, (m_pilot, 1))
    s_lo = np.empty(n_t + 1)
    s_hi = np.empty(n_t + 1)
    basket = x @ p.weights
    s_lo[0] = basket.min()
    s_hi[0] = basket.max()
    for n in range(n_t):
        dw = mc.wiener_increments(seed, n, m_pilot, model.k, dt)
        x = mc.step(model, x, dt, dw)
        basket = x @ p.weights
        s_lo[n + 1] = basket.min()
        s_hi[n + 1] = basket.max()
    return Envelope(times=times, s_lo=s_lo, s_hi=s_hi)


def rectangle_from_envelope(env: Envelope, model: ModelSpec) -> tuple[float, float]:
    """Computational rectangle: terminal envelope widened by half its width each side.

    Degenerate (deterministic) envelopes get a nominal pad so the rectangle
    keeps positive width.
    """
    w = env.width()
    pad = 0.5 * w
    scale = max(abs(env.s_lo[-1]), abs(env.s_hi[-1]), 1.0)
    if pad < 1e-8 * scale:
        pad = 0.05 * scale
    s_min = env.s_lo[-1] - pad
    s_max = env.s_hi[-1] + pad
    if model.kind is ModelKind.BLACK_SCHOLES:
        s_min = max(0.0, s_min)
    return float(s_min), float(s_max)


def default_floor(model: ModelSpec, p: Portfolio) -> float:
    """Positivity floor far below envelope-interior values of the squared volatility."""
    px0 = float(p.weights @ model.x0)
    if model.kind is ModelKind.BLACK_SCHOLES:
        ref_vol = float(np.mean(np.diag(model.sigma)))
        return 1e-4 * px0**2 * ref_vol**2
    return 1e-4 * px0**2 / model.T


@dataclass(frozen=True)
class CoefficientSurface:
    """Per-slice polynomial fit of the projected squared volatility.

    Each slice i holds ascending coefficients in the centered coordinate
    u = (s - centers[i]) / halfwidths[i]; raw-s Vandermonde systems go
    numerically rank-deficient on the narrow early-time envelopes.  Between
    slices the value is linear in t, clamped to the nearest slice outside
    [slice_times[0], slice_times[-1]].
    """

    slice_times: np.ndarray
    coeffs: np.ndarray          # (n_slices, degree + 1)
    floor: float
    s_min: float
    s_max: float
    t_max: float
    r: float
    centers: np.ndarray = field(default=None)
    halfwidths: np.ndarray = field(default=None)
    residual_rms: np.ndarray = field(default=None)

    def __post_init__(self):
        st = np.asarray(self.slice_times, dtype=float)
        if st.ndim != 1 or (st.size > 1 and np.any(np.diff(st) <= 0)):
            raise ValueError("slice times must be strictly increasing")
        if not self.floor > 0:
            raise ValueError("floor must be positive")
        if self.centers is None:
            object.__setattr__(self, "centers", np.zeros(st.size))
        if self.halfwidths is None:
            object.__setattr__(self, "halfwidths", np.ones(st.size))
        if self.residual_rms is None:
            object.__setattr__(self, "residual_rms", np.zeros(st.size))

    def _b2_slices(self, s) -> np.ndarray:
        """Raw (unfloored) polynomial values, shape (n_slices, *s.shape)."""
        s = np.asarray(s, dtype=float)
        u = (s[None, ...] - self.centers.reshape(-1, *([1] * s.ndim))) \
            / self.halfwidths.reshape(-1, *([1] * s.ndim))
        out = np.zeros_like(u)
        for k in range(self.coeffs.shape[1] - 1, -1, -1):
            out = out * u + self.coeffs[:, k].reshape(-1, *([1] * s.ndim))
        return out

    def raw_slice_coefficients(self, i: int) -> np.ndarray:
        """Ascending coefficients of slice i in the raw s variable."""
        c, h = self.centers[i], self.halfwidths[i]
        poly = np.polynomial.Polynomial([0.0])
        base = np.polynomial.Polynomial([-c / h, 1.0 / h])  # u(s)
        for k, ck in enumerate(self.coeffs[i]):
            poly = poly + ck * base**k
        out = np.zeros(self.coeffs.shape[1])
        out[: poly.coef.size] = poly.coef
        return out

    def eval_b2(self, t: float, s) -> np.ndarray:
        """Floored squared volatility at time t, vectorized over s."""
        if t < -1e-12 or t > self.t_max * (1 + 1e-12):
            raise ValueError(f"t={t} outside [0, {self.t_max}]")
        st = self.slice_times
        vals = self._b2_slices(s)
        if t <= st[0]:
            out = vals[0]
        elif t >= st[-1]:
            out = vals[-1]
        else:
            j = int(np.searchsorted(st, t, side="right")) - 1
            w = (t - st[j]) / (st[j + 1] - st[j])
            out = (1.0 - w) * vals[j] + w * vals[j + 1]
        return np.maximum(out, self.floor)

    def eval(self, t: float, s: float) -> tuple[float, float]:
        """(drift, squared volatility) at a point; drift is exactly r*s."""
        b2 = self.eval_b2(t, np.asarray(float(s)))
        return self.r * float(s), float(b2)

    def save(self, path) -> None:
        """Plain-text table: header, then one row per slice
        (t, center, halfwidth, coeffs..., rms)."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# basketproj coefficient surface v1\n")
            fh.write(f"r {float(self.r)!r}\n")
            fh.write(f"floor {float(self.floor)!r}\n")
            fh.write(f"rect {float(self.s_min)!r} {float(self.s_max)!r} {float(self.t_max)!r}\n")
            fh.write(f"degree {self.coeffs.shape[1] - 1}\n")
            fh.write(f"slices {self.slice_times.size}\n")
            for i, t in enumerate(self.slice_times):
                row = " ".join(repr(float(c)) for c in self.coeffs[i])
                fh.write(f"{float(t)!r} {float(self.centers[i])!r} "
                         f"{float(self.halfwidths[i])!r} {row} "
                         f"{float(self.residual_rms[i])!r}\n")

    @classmethod
    def load(cls, path) -> "CoefficientSurface":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
        head = {}
        for ln in lines[:5]:
            key, *rest = ln.split()
            head[key] = rest
        degree = int(head["degree"][0])
        n_slices = int(head["slices"][0])
        rows = [list(map(float, ln.split())) for ln in lines[5 : 5 + n_slices]]
        arr = np.array(rows)
        return cls(
            slice_times=arr[:, 0],
            coeffs=arr[:, 3 : degree + 4],
            floor=float(head["floor"][0]),
            s_min=float(head["rect"][0]),
            s_max=float(head["rect"][1]),
            t_max=float(head["rect"][2]),
            r=float(head["r"][0]),
            centers=arr[:, 1],
            halfwidths=arr[:, 2],
            residual_rms=arr[:, degree + 4],
        )


def fit_surface(evaluations, degree: int, floor: float, rect: tuple[float, float],
                t_max: float, r: float) -> CoefficientSurface:
    """Least-squares polynomial per time slice from (t, s, value) triples.

    Each slice is fitted in its centered coordinate (s - center)/halfwidth so
    narrow slices at large basket levels stay well conditioned.
    """
    by_t: dict[float, list[tuple[float, float]]] = {}
    for t, s, v in evaluations:
        by_t.setdefault(float(t), []).append((float(s), float(v)))
    times = np.array(sorted(by_t))
    coeffs = np.empty((times.size, degree + 1))
    centers = np.empty(times.size)
    halfwidths = np.empty(times.size)
    rms = np.empty(times.size)
    for i, t in enumerate(times):
        pts = by_t[t]
        if len(pts) < degree + 1:
            raise ValueError(f"slice t={t}: need at least {degree + 1} points, got {len(pts)}")
        s = np.array([q[0] for q in pts])
        v = np.array([q[1] for q in pts])
        centers[i] = 0.5 * (s.max() + s.min())
        halfwidths[i] = max(0.5 * (s.max() - s.min()), 1e-300)
        u = (s - centers[i]) / halfwidths[i]
        vand = np.vander(u, degree + 1, increasing=True)
        sol, _, rank, _ = np.linalg.lstsq(vand, v, rcond=None)
        if rank < degree + 1:
            raise ValueError(f"slice t={t}: collinear abscissae (rank {rank})")
        coeffs[i] = sol
        rms[i] = float(np.sqrt(np.mean((vand @ sol - v) ** 2)))
    return CoefficientSurface(slice_times=times, coeffs=coeffs, floor=floor,
                              s_min=rect[0], s_max=rect[1], t_max=t_max, r=r,
                              centers=centers, halfwidths=halfwidths,
                              residual_rms=rms)


def constant_surface(value: float, floor: float, rect: tuple[float, float],
                     t_max: float, r: float) -> CoefficientSurface:
    # floor may not override an exact constant (Bachelier exactness)
    return CoefficientSurface(slice_times=np.array([0.0]),
                              coeffs=np.array([[value]]),
                              floor=min(floor, value) if value > 0 else floor,
                              s_min=rect[0], s_max=rect[1], t_max=t_max, r=r)


def build_surface(model: ModelSpec, p: Portfolio, seed: int = 0,
                  n_slices: int = DEFAULT_SLICES, n_abscissae: int = DEFAULT_ABSCISSAE,
                  degree: int = DEFAULT_DEGREE, floor: float | None = None,
                  coords=None, m_pilot: int = PILOT_PATHS,
                  pilot_steps: int = PILOT_STEPS,
                  newton_tol: float = NEWTON_TOL,
                  newton_max_iter: int = NEWTON_MAX_ITER) -> tuple[CoefficientSurface, Envelope]:
    """Envelope estimation, Laplace evaluation and slice fitting in one call.

    For the Bachelier model the conditional expectation is a known constant and
    the fit is bypassed entirely.
    """
    env = estimate_envelope(model, p, m_pilot=m_pilot, n_t=pilot_steps, seed=seed)
    rect = rectangle_from_envelope(env, model)
    if floor is None:
        floor = default_floor(model, p)
    if model.kind is ModelKind.BACHELIER:
        const = projected_vol_sq(model, p, model.T, float(p.weights @ model.x0))
        return constant_surface(const, floor, rect, model.T, model.r), env
    idx = np.unique(np.round(np.linspace(1, pilot_steps, n_slices)).astype(int))
    evaluations = []
    n_failed = 0
    for i in idx:
        t = env.times[i]
        for s in np.linspace(env.s_lo[i], env.s_hi[i], n_abscissae):
            try:
                v = projected_vol_sq(model, p, t, float(s), coords=coords,
                                     tol=newton_tol, max_iter=newton_max_iter)
            except NewtonError as exc:
                n_failed += 1
                log.info("skipping Laplace point (t=%.4g, s=%.6g): %s", t, s, exc)
                continue
            evaluations.append((t, float(s), v))
    if n_failed:
        log.warning("Laplace evaluation failed at %d of %d points", n_failed,
                    idx.size * n_abscissae)
    surf = fit_surface(evaluations, degree=degree, floor=floor, rect=rect,
                       t_max=model.T, r=model.r)
    return surf, env
