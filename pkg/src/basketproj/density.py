"""Transition densities and hyperplane-restricted log-integrands.

The projected squared volatility is a ratio of two integrals over the
hyperplane {P x = s}.  This module supplies the closed-form log densities of
the forward process, the affine chart that eliminates one coordinate, and the
two log-integrands (density alone, density times the basket quadratic form)
with exact gradients and Hessians in price or log-price coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import ModelKind, ModelSpec, Portfolio

WEIGHT_FLOOR = 1e-150


class ExpansionCoords(Enum):
    PRICE = "price"
    LOG_PRICE = "log-price"


@dataclass(frozen=True)
class HyperplaneChart:
    """Affine parametrization of {P x = s} eliminating the largest-weight coordinate.

    z holds the free coordinates (original index order); the eliminated
    coordinate is recovered from the basket constraint.
    """

    portfolio: Portfolio
    s: float
    pivot: int
    free: np.ndarray  # original indices of the free coordinates

    def x_of(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        w = self.portfolio.weights
        x = np.empty(self.portfolio.d)
        x[self.free] = z
        x[self.pivot] = (self.s - w[self.free] @ z) / w[self.pivot]
        return x

    def z_of(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[self.free]

    @property
    def basis(self) -> np.ndarray:
        """d x (d-1) Jacobian dx/dz of the affine map."""
        w = self.portfolio.weights
        b = np.zeros((self.portfolio.d, self.free.size))
        b[self.free, np.arange(self.free.size)] = 1.0
        b[self.pivot, :] = -w[self.free] / w[self.pivot]
        return b

    @property
    def jacobian_factor(self) -> float:
        """Constant surface-measure factor of the chart (cancels in ratios)."""
        w = self.portfolio.weights
        return float(np.linalg.norm(w) / abs(w[self.pivot]))


def chart(p: Portfolio, s: float) -> HyperplaneChart:
    """Build the chart, eliminating the coordinate with the largest |weight|."""
    w = p.weights
    pivot = int(np.argmax(np.abs(w)))
    if abs(w[pivot]) < WEIGHT_FLOOR:
        raise ValueError("all portfolio weights are below the pivot threshold")
    free = np.array([i for i in range(p.d) if i != pivot], dtype=int)
    return HyperplaneChart(portfolio=p, s=float(s), pivot=pivot, free=free)


class _Gaussian:
    """Multivariate normal with cached Cholesky solve."""

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        self.mean = mean
        self.cov = cov
        try:
            self._cf = cho_factor(cov, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("singular covariance") from exc
        diag = np.diag(self._cf[0])
        if np.min(diag) <= 0 or not np.all(np.isfinite(diag)):
            raise ValueError("singular covariance")
        self.logdet = 2.0 * float(np.sum(np.log(diag)))
        self.dim = mean.size

    def alpha(self, y: np.ndarray) -> np.ndarray:
        """cov^{-1} (y - mean)."""
        return cho_solve(self._cf, y - self.mean)

    def inv(self) -> np.ndarray:
        return cho_solve(self._cf, np.eye(self.dim))

    def logpdf(self, y: np.ndarray) -> float:
        dev = y - self.mean
        return float(-0.5 * dev @ self.alpha(y) - 0.5 * (self.dim * np.log(2 * np.pi) + self.logdet))


def _bachelier_gaussian(model: ModelSpec, t: float) -> _Gaussian:
    # Solution of dX = rX dt + Sigma dW: Gaussian with the integrated covariance.
    if abs(model.r) < 1e-12:
        scale = t
    else:
        scale = np.expm1(2.0 * model.r * t) / (2.0 * model.r)
    return _Gaussian(model.x0 * np.exp(model.r * t), model.omega * scale)


def _lognormal_gaussian(model: ModelSpec, t: float) -> _Gaussian:
    omega = model.omega
    mean = (model.r - 0.5 * np.diag(omega)) * t
    return _Gaussian(mean, omega * t)


def log_density(model: ModelSpec, t: float, y: np.ndarray) -> float:
    """Log transition density of X(t) started from x0; -inf outside the support."""
    if not t > 0:
        raise ValueError("t must be positive")
    y = np.asarray(y, dtype=float)
    if y.shape != (model.d,):
        raise ValueError(f"y has shape {y.shape}, expected ({model.d},)")
    if model.kind is ModelKind.BACHELIER:
        return _bachelier_gaussian(model, t).logpdf(y)
    if np.any(y <= 0.0):
        return -np.inf
    w = np.log(y / model.x0)
    return _lognormal_gaussian(model, t).logpdf(w) - float(np.sum(np.log(y)))


def pbbt(model: ModelSpec, p: Portfolio, t: float, x: np.ndarray) -> float:
    """Quadratic form P b(t,x) b(t,x)^T P^T of the basket."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.d,):
        raise ValueError(f"x has shape {x.shape}, expected ({model.d},)")
    if model.kind is ModelKind.BACHELIER:
        row = p.weights @ model.sigma
    else:
        row = (p.weights * x) @ model.sigma
    return float(row @ row)


class LogIntegrands:
    """f = log(density * PbbtP), ftilde = log(density), on the chart coordinates.

    Gradients and Hessians are exact for both model kinds.  In log-price
    coordinates the change-of-variables Jacobian is part of the integrand, so
    that integrals (and their Laplace approximations) refer to the same
    underlying surface integral as in price coordinates.
    """

    def __init__(self, model: ModelSpec, p: Portfolio, t: float, s: float,
                 coords: ExpansionCoords = ExpansionCoords.PRICE):
        if not t > 0:
            raise ValueError("t must be positive")
        if coords is ExpansionCoords.LOG_PRICE and model.kind is ModelKind.BACHELIER:
            raise ValueError("log-price coordinates undefined for Bachelier (prices may be negative)")
        self.model = model
        self.portfolio = p
        self.t = float(t)
        self.s = float(s)
        self.coords = coords
        self.chart = chart(p, s)
        self._omega = model.omega
        if model.kind is ModelKind.BACHELIER:
            self._gauss = _bachelier_gaussian(model, t)
            self._cinv = self._gauss.inv()
            row = p.weights @ model.sigma
            self._const_q = float(row @ row)
        else:
            self._gauss = _lognormal_gaussian(model, t)
            self._cinv = self._gauss.inv()

    # -- state-space pieces -------------------------------------------------

    def _x(self, z: np.ndarray) -> np.ndarray:
        if self.coords is ExpansionCoords.PRICE:
            return self.chart.x_of(z)
        zfree = self.model.x0[self.chart.free] * np.exp(np.asarray(z, dtype=float))
        return self.chart.x_of(zfree)

    def _in_support(self, x: np.ndarray) -> bool:
        if self.model.kind is ModelKind.BACHELIER:
            return True
        return bool(np.all(x > 0.0))

    def _logphi_parts(self, x: np.ndarray):
        """Value, gradient and Hessian of log density in x."""
        if self.model.kind is ModelKind.BACHELIER:
            a = self._gauss.alpha(x)
            val = self._gauss.logpdf(x)
            return val, -a, -self._cinv
        w = np.log(x / self.model.x0)
        a = self._gauss.alpha(w)
        val = self._gauss.logpdf(w) - float(np.sum(np.log(x)))
        grad = -(a + 1.0) / x
        hess = -self._cinv / np.outer(x, x) + np.diag((a + 1.0) / x**2)
        return val, grad, hess

    def _logq_parts(self, x: np.ndarray):
        """Value, gradient and Hessian of log(P b b^T P^T) in x."""
        if self.model.kind is ModelKind.BACHELIER:
            d = x.size
            return np.log(self._const_q), np.zeros(d), np.zeros((d, d))
        pw = self.portfolio.weights
        v = pw * x
        ov = self._omega @ v
        q = float(v @ ov)
        if q <= 0.0:
            raise ValueError("degenerate basket quadratic form")
        dq = 2.0 * pw * ov
        d2q = 2.0 * np.outer(pw, pw) * self._omega
        return np.log(q), dq / q, d2q / q - np.outer(dq, dq) / q**2

    # -- chart chain rule ---------------------------------------------------

    def _chain(self, z, val_x, grad_x, hess_x):
        """Pull (value, grad, hess) in x back through the chart coordinates."""
        ch = self.chart
        if self.coords is ExpansionCoords.PRICE:
            b = ch.basis
            return val_x, b.T @ grad_x, b.T @ hess_x @ b
        z = np.asarray(z, dtype=float)
        xfree = self.model.x0[ch.free] * np.exp(z)
        w = self.portfolio.weights
        jac = np.zeros((self.model.d, ch.free.size))
        jac[ch.free, np.arange(ch.free.size)] = xfree
        jac[ch.pivot, :] = -w[ch.free] * xfree / w[ch.pivot]
        grad = jac.T @ grad_x
        hess = jac.T @ hess_x @ jac
        # second-derivative terms of the (non-affine) map, diagonal in the chart
        hess += np.diag(grad_x[ch.free] * xfree - grad_x[ch.pivot] * w[ch.free] * xfree / w[ch.pivot])
        # measure Jacobian prod x0_j e^{z_j}
        val = val_x + float(np.sum(z) + np.sum(np.log(self.model.x0[ch.free])))
        grad = grad + 1.0
        return val, grad, hess

    # -- public integrands ---------------------------------------------------

    def ftilde(self, z: np.ndarray) -> float:
        x = self._x(z)
        if not self._in_support(x):
            return -np.inf
        val, _, _ = self._logphi_parts(x)
        if self.coords is ExpansionCoords.LOG_PRICE:
            z = np.asarray(z, dtype=float)
            val += float(np.sum(z) + np.sum(np.log(self.model.x0[self.chart.free])))
        return val

    def f(self, z: np.ndarray) -> float:
        x = self._x(z)
        if not self._in_support(x):
            return -np.inf
        return self.ftilde(z) + self._logq_parts(x)[0]

    def ftilde_derivs(self, z: np.ndarray):
        """(value, gradient, Hessian) of ftilde at an interior point."""
        x = self._x(z)
        if not self._in_support(x):
            raise ValueError("derivatives undefined outside the density support")
        return self._chain(z, *self._logphi_parts(x))

    def f_derivs(self, z: np.ndarray):
        """(value, gradient, Hessian) of f at an interior point."""
        x = self._x(z)
        if not self._in_support(x):
            raise ValueError("derivatives undefined outside the density support")
        pv, pg, ph = self._logphi_parts(x)
        qv, qg, qh = self._logq_parts(x)
        return self._chain(z, pv + qv, pg + qg, ph + qh)


def log_integrands(model: ModelSpec, p: Portfolio, t: float, s: float,
                   coords: ExpansionCoords = ExpansionCoords.PRICE) -> LogIntegrands:
    return LogIntegrands(model, p, t, s, coords)


def fd_gradient(fun, z: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Central finite-difference gradient, step 1e-5 * scale.

    Fallback for model kinds without analytic derivatives; also the reference
    the analytic derivatives are tested against.
    """
    z = np.asarray(z, dtype=float)
    h = 1e-5 * scale
    g = np.empty(z.size)
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = h
        g[i] = (fun(z + e) - fun(z - e)) / (2 * h)
    return g


def fd_hessian(fun, z: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Central finite-difference Hessian, step 1e-5 * scale."""
    z = np.asarray(z, dtype=float)
    h = 1e-5 * scale
    n = z.size
    out = np.empty((n, n))
    f0 = fun(z)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        out[i, i] = (fun(z + ei) - 2 * f0 + fun(z - ei)) / h**2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            mixed = (fun(z + ei + ej) - fun(z + ei - ej) - fun(z - ei + ej) + fun(z - ei - ej)) / (4 * h**2)
            out[i, j] = out[j, i] = mixed
    return out
