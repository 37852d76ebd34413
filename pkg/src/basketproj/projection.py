"""Pointwise Laplace evaluation of the projected SDE coefficients.

The surrogate basket SDE has drift r*s exactly; its squared volatility is the
conditional expectation of the basket quadratic form, approximated here by the
ratio of two Laplace-approximated hyperplane integrals.  The Bachelier model
bypasses the approximation: the conditional expectation is the constant
quadratic form itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import ExpansionCoords, LogIntegrands, log_integrands
from .model import ModelKind, ModelSpec, Portfolio

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50


class NewtonError(RuntimeError):
    """Newton maximization failed (left the support, singular or indefinite Hessian)."""


@dataclass(frozen=True)
class NewtonResult:
    z: np.ndarray
    value: float
    hess: np.ndarray
    iterations: int


@dataclass(frozen=True)
class LaplacePoint:
    """Record of one Laplace evaluation: both maximizers and their Hessian log-determinants."""

    z_star: np.ndarray        # maximizer of f (numerator)
    z_dagger: np.ndarray      # maximizer of ftilde (denominator)
    f_star: float
    ftilde_dagger: float
    logdet_hf: float          # log det of -H f at z_star
    logdet_hftilde: float
    iterations: int

    @property
    def value(self) -> float:
        return float(np.exp(self.f_star - self.ftilde_dagger
                            + 0.5 * (self.logdet_hftilde - self.logdet_hf)))


def projected_drift(model: ModelSpec, p: Portfolio, t: float, s: float) -> float:
    """Drift of the surrogate SDE: r*s exactly, for both model kinds."""
    return model.r * float(s)


def resolve_coords(model: ModelSpec, requested=None) -> ExpansionCoords:
    """Expansion coordinate system; defaults to log-price for Black-Scholes."""
    if requested is None:
        return ExpansionCoords.PRICE if model.kind is ModelKind.BACHELIER else ExpansionCoords.LOG_PRICE
    coords = ExpansionCoords(requested) if not isinstance(requested, ExpansionCoords) else requested
    if coords is ExpansionCoords.LOG_PRICE and model.kind is ModelKind.BACHELIER:
        raise ValueError("log-price coordinates rejected for Bachelier (prices may be negative)")
    return coords


def newton_maximize(derivs, z0: np.ndarray, tol: float = NEWTON_TOL,
                    max_iter: int = NEWTON_MAX_ITER) -> NewtonResult:
    """Damped Newton ascent on a concave log-integrand.

    derivs(z) must return (value, gradient, Hessian); z0 must be interior.
    The step is z <- z - H^{-1} grad with halving while the value decreases.
    """
    z = np.asarray(z0, dtype=float).copy()
    try:
        val, grad, hess = derivs(z)
    except ValueError as exc:
        raise NewtonError(f"Newton start outside the support: {exc}") from exc
    if not np.isfinite(val):
        raise NewtonError("Newton start outside the support")
    for it in range(1, max_iter + 1):
        scale = max(1.0, float(np.max(np.abs(hess))))
        if float(np.linalg.norm(grad)) <= tol * scale:
            _assert_negdef(hess)
            return NewtonResult(z=z, value=val, hess=hess, iterations=it - 1)
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError as exc:
            raise NewtonError("singular Hessian in Newton iteration") from exc
        if float(grad @ step) <= 0.0:
            # indefinite Hessian; fall back to a scaled gradient ascent step
            step = grad / scale
        lam = 1.0
        for _ in range(40):
            cand = z + lam * step
            try:
                nval, ngrad, nhess = derivs(cand)
            except ValueError:
                nval = -np.inf
            if np.isfinite(nval) and nval >= val - 1e-14 * max(1.0, abs(val)):
                break
            lam *= 0.5
        else:
            raise NewtonError("line search failed (iterate left the support)")
        z, val, grad, hess = cand, nval, ngrad, nhess
    raise NewtonError(f"Newton did not converge within {max_iter} iterations")


def _assert_negdef(hess: np.ndarray) -> None:
    try:
        np.linalg.cholesky(-hess)
    except np.linalg.LinAlgError as exc:
        raise NewtonError("Hessian not negative definite at the terminal point") from exc


def _logdet_neg(hess: np.ndarray) -> float:
    """log det(-H) by symmetric factorization; H must be negative definite."""
    try:
        chol = np.linalg.cholesky(-hess)
    except np.linalg.LinAlgError as exc:
        raise NewtonError("Hessian not negative definite at the terminal point") from exc
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def newton_start(model: ModelSpec, p: Portfolio, t: float, s: float,
                 coords: ExpansionCoords) -> np.ndarray:
    """Interior Newton start: conditional-mean point of the Gaussian comparison density.

    Bachelier conditions the exact Gaussian on the basket; Black-Scholes
    conditions the Gaussian log-returns on the linearized basket constraint.
    """
    from .density import _bachelier_gaussian, _lognormal_gaussian, chart as make_chart

    ch = make_chart(p, s)
    w = p.weights
    if model.kind is ModelKind.BACHELIER:
        g = _bachelier_gaussian(model, t)
        cp = g.cov @ w
        point = g.mean + cp * (s - float(w @ g.mean)) / float(w @ cp)
        return point[ch.free]
    g = _lognormal_gaussian(model, t)
    a = w * model.x0
    ca = g.cov @ a
    target = s - float(w @ model.x0)
    what = g.mean + ca * (target - float(a @ g.mean)) / float(a @ ca)
    x = model.x0 * np.exp(what)
    # the eliminated coordinate implied by the constraint must stay positive
    x_piv = (s - float(w[ch.free] @ x[ch.free])) / w[ch.pivot]
    if x_piv <= 0.0:
        if s <= 0.0 or float(w @ model.x0) <= 0.0:
            raise NewtonError("no interior Newton start exists for this (t, s)")
        x = model.x0 * (s / float(w @ model.x0))  # proportional point, always on the hyperplane
    if coords is ExpansionCoords.LOG_PRICE:
        return np.log(x[ch.free] / model.x0[ch.free])
    return x[ch.free]


def laplace_point(model: ModelSpec, p: Portfolio, t: float, s: float,
                  coords=None, tol: float = NEWTON_TOL,
                  max_iter: int = NEWTON_MAX_ITER) -> LaplacePoint:
    """Run both Newton maximizations and package the Laplace data."""
    coords = resolve_coords(model, coords)
    li: LogIntegrands = log_integrands(model, p, t, s, coords)
    z0 = newton_start(model, p, t, s, coords)
    res_den = newton_maximize(li.ftilde_derivs, z0, tol=tol, max_iter=max_iter)
    res_num = newton_maximize(li.f_derivs, res_den.z, tol=tol, max_iter=max_iter)
    return LaplacePoint(
        z_star=res_num.z,
        z_dagger=res_den.z,
        f_star=res_num.value,
        ftilde_dagger=res_den.value,
        logdet_hf=_logdet_neg(res_num.hess),
        logdet_hftilde=_logdet_neg(res_den.hess),
        iterations=res_num.iterations + res_den.iterations,
    )


def projected_vol_sq(model: ModelSpec, p: Portfolio, t: float, s: float,
                     coords=None, tol: float = NEWTON_TOL,
                     max_iter: int = NEWTON_MAX_ITER) -> float:
    """Projected squared volatility of the basket at (t, s).

    Bachelier: the exact constant P Sigma Sigma^T P^T.  Black-Scholes: the
    Laplace-approximated ratio exp(f* - ftilde*) sqrt(det|H ftilde| / det|H f|).
    """
    if model.kind is ModelKind.BACHELIER:
        row = p.weights @ model.sigma
        return float(row @ row)
    lp = laplace_point(model, p, t, s, coords=coords, tol=tol, max_iter=max_iter)
    return lp.value
