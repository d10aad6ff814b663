"""Fourier-side constants of the heat Carleson functional.

For ``X = Y`` Euclidean and ``q = 2`` the Carleson functional of
:mod:`heatdiff.dorronsoro` is a Fourier multiplier norm.  Its square equals
``k(n, gamma) * mean_sigma ||sigma . grad f||_2^2`` with

    k(n, gamma) = n |B^{n-1}| / |B^n| * int_0^inf int_{-1}^1
                  |e^{isu} - (1 + isu) e^{-gamma s^2}|^2 (1 - u^2)^{(n-1)/2} du ds / s^3.

The u-integral uses Gauss-Jacobi nodes for the weight ``(1-u^2)^{(n-1)/2}``;
the s-integral uses Gauss-Legendre panels that are geometric on ``(0, 1]``
and of width ``pi/2`` (a quarter of the slowest oscillation period) beyond.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

from .fields import GridField
from .heat import Spectrum
from .spaces import unit_ball_volume

# largest k / k_bound_rhs over n <= 10, gamma in [1e-3, 1e3] (decade points), rounded up
C_K = 1.44


def prefactor(n: int) -> float:
    """``n Gamma(n/2 + 1) / (sqrt(pi) Gamma((n+1)/2))``."""
    return n * math.exp(math.lgamma(n / 2.0 + 1.0) - math.lgamma((n + 1) / 2.0)) / math.sqrt(math.pi)


def prefactor_by_volumes(n: int) -> float:
    """``n |B^{n-1}| / |B^n|`` (the same constant computed from ball volumes)."""
    return n * unit_ball_volume(n - 1) / unit_ball_volume(n)


def jacobi_mass(n: int) -> float:
    """``int_{-1}^1 (1 - u^2)^{(n-1)/2} du``."""
    return math.sqrt(math.pi) * math.exp(math.lgamma((n + 1) / 2.0) - math.lgamma(n / 2.0 + 1.0))


def k_integrand(s, u, gamma: float, semigroup: str = "heat") -> np.ndarray:
    """``|e^{isu} - (1 + isu) e^{-gamma s^2}|^2 / s^3`` (``e^{-gamma s}`` for Poisson).

    Written with ``expm1`` so that small ``s`` keeps full relative accuracy.
    """
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    su = s * u
    em = np.expm1(-gamma * s * s) if semigroup == "heat" else np.expm1(-gamma * s)
    re = -2.0 * np.sin(0.5 * su) ** 2 - em
    im = (np.sin(su) - su) - su * em
    return (re * re + im * im) / s ** 3


@lru_cache(maxsize=64)
def _jacobi(nodes: int, n: int):
    a = (n - 1) / 2.0
    return special.roots_jacobi(nodes, a, a)


@lru_cache(maxsize=16)
def _legendre(p: int):
    return np.polynomial.legendre.leggauss(p)


def _panel_rule(edges: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _legendre(p)
    a, b = edges[:-1, None], edges[1:, None]
    s = 0.5 * (b - a) * x + 0.5 * (a + b)
    ws = 0.5 * (b - a) * w
    return s.ravel(), ws.ravel()


def _k_core(n: int, gamma: float, refine: int = 1) -> float:
    scut = max(math.sqrt(60.0 / gamma), 2.0)
    nu = refine * max(400, 2 * int(math.ceil(scut)) + 200)
    p = 16 * refine
    u, wu = _jacobi(nu, n)
    s_lo = 1e-3 * min(1.0, 1.0 / math.sqrt(gamma))
    # (0, s_lo]: integrand ~ s (gamma - u^2/2)^2
    head = 0.5 * s_lo ** 2 * float(np.sum(wu * (gamma - 0.5 * u * u) ** 2))
    geo = np.geomspace(s_lo, 1.0, int(math.ceil(math.log2(1.0 / s_lo))) * refine + 1)
    npan = int(math.ceil((scut - 1.0) / (0.5 * math.pi))) * refine
    lin = np.linspace(1.0, scut, npan + 1)
    s1, w1 = _panel_rule(geo, p)
    s2, w2 = _panel_rule(lin, p)
    s = np.concatenate([s1, s2])
    ws = np.concatenate([w1, w2])
    tot = 0.0
    for i in range(0, len(s), 512):
        blk = k_integrand(s[i:i + 512, None], u[None, :], gamma)
        tot += float(ws[i:i + 512] @ (blk @ wu))
    # beyond scut the Gaussian is below e^{-60} and the integrand is 1/s^3
    tail = float(wu.sum()) / (2.0 * scut * scut)
    return head + tot + tail


@dataclass(frozen=True)
class KReport:
    n: int
    gamma: float
    k_value: float
    quadrature_error: float
    bound_rhs: float
    ratio: float

    def to_dict(self) -> dict:
        return {"n": self.n, "gamma": self.gamma, "k": self.k_value, "quadrature_error": self.quadrature_error,
                "bound_rhs": self.bound_rhs, "ratio": self.ratio}


def k_constant(n: int, gamma: float) -> KReport:
    """``k(n, gamma)``; the error is the change under doubling every mesh."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    if not gamma > 0:
        raise ValueError("gamma must be positive: the s-integral diverges at s = 0 when gamma <= 0")
    c = prefactor(n)
    k1 = c * _k_core(n, gamma, 1)
    k2 = c * _k_core(n, gamma, 2)
    rhs = k_bound_rhs(n, gamma)
    return KReport(n, float(gamma), k2, abs(k2 - k1), rhs, k2 / rhs)


def k_bound_rhs(n: int, gamma: float) -> float:
    """``gamma n + int_0^inf v^2 e^{-v^2} log(2 + (v^2 + gamma n) / (v sqrt(gamma n))) dv``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    gn = gamma * n
    r = math.sqrt(gn)

    def g(v):
        return v * v * math.exp(-v * v) * math.log(2.0 + (v * v + gn) / (v * r))

    pts = sorted({min(r, 8.0), 1.0})
    val = integrate.quad(g, 0.0, 12.0, points=pts, epsabs=0, epsrel=1e-12, limit=400)[0]
    return gn + val


def k_scan(ns, gammas) -> list[KReport]:
    return [k_constant(int(n), float(g)) for n in ns for g in gammas]


# heat identity -----------------------------------------------------------


def gradient_energy(f: GridField) -> float:
    """``||grad f||_2^2 = int |xi|^2 |F f|^2`` (summed over components)."""
    sp = Spectrum(f)
    return sp.plancherel(sp.k2)


class IdentityCheck(NamedTuple):
    lhs: float
    rhs: float
    rel_gap: float
    k: float


def identity_rhs(f: GridField, gamma: float) -> tuple[float, float]:
    """``sqrt(k(n, gamma) / n) ||grad f||_2`` and ``k``."""
    k = k_constant(f.n, gamma).k_value
    return math.sqrt(k / f.n * gradient_energy(f)), k


def verify_heat_identity(f: GridField, gamma: float, q: float = 2.0, X=None, y_p: float = 2.0,
                         scale_grid=None, ball_samples: int | None = None, threads: int = 1) -> IdentityCheck:
    """Direct Carleson integral against its Fourier-side value (Euclidean ``X``, ``Y``, ``q = 2``)."""
    from .dorronsoro import DorroConfig, carleson_functional
    from .spaces import NormedSpace

    if q != 2.0:
        raise ValueError("the identity holds for q = 2 only")
    if y_p != 2.0 or (X is not None and not X.is_euclidean):
        raise ValueError("the identity needs Euclidean X and Y")
    X = NormedSpace.lp(f.n) if X is None else X
    if X.uniform_weight not in (None, 1.0):
        raise ValueError("the identity is stated for the standard Euclidean ball")
    rhs, k = identity_rhs(f, gamma)
    kw = {} if ball_samples is None else {"ball_samples": ball_samples}
    cfg = DorroConfig(X=X, q=2.0, gamma=gamma, scale_grid=scale_grid, threads=threads, **kw)
    lhs = carleson_functional(f, cfg).value
    gap = 0.0 if rhs == 0 and lhs == 0 else abs(lhs - rhs) / max(rhs, 1e-300)
    return IdentityCheck(lhs, rhs, gap, k)


# Poisson divergence --------------------------------------------------------


@dataclass(frozen=True)
class DivergenceScan:
    n: int
    gamma: float
    eps: np.ndarray
    values: np.ndarray
    heat_values: np.ndarray
    slope: float
    intercept: float
    fit_residual: float
    predicted_slope: float

    @property
    def slope_error(self) -> float:
        return abs(self.slope - self.predicted_slope) / self.predicted_slope

    @property
    def heat_change(self) -> float:
        """Relative change of the heat integral between the two smallest cutoffs."""
        return abs(self.heat_values[-1] - self.heat_values[-2]) / abs(self.heat_values[-1])

    def to_dict(self) -> dict:
        return {"n": self.n, "gamma": self.gamma, "eps": self.eps.tolist(), "poisson": self.values.tolist(),
                "heat": self.heat_values.tolist(), "slope": self.slope, "intercept": self.intercept,
                "fit_residual": self.fit_residual, "predicted_slope": self.predicted_slope}


def truncated_integral(n: int, gamma: float, eps: float, semigroup: str = "poisson", nodes: int = 64) -> float:
    """``int_eps^1 int_{-1}^1 |e^{isu} - (1+isu) m(s)|^2 (1-u^2)^{(n-1)/2} du ds/s^3``.

    ``m(s) = e^{-gamma s}`` (Poisson) or ``e^{-gamma s^2}`` (heat); ``s = e^v``
    with Gauss-Legendre panels of unit length in ``v``.
    """
    if not 0 < eps < 1:
        raise ValueError("cutoff must lie in (0, 1)")
    u, wu = _jacobi(nodes, n)
    lo = math.log(eps)
    edges = np.linspace(lo, 0.0, int(math.ceil(-lo)) + 1)
    v, wv = _panel_rule(edges, 20)
    s = np.exp(v)
    vals = k_integrand(s[:, None], u[None, :], gamma, semigroup) @ wu
    return float(np.sum(wv * s * vals))


def poisson_divergence_scan(n: int, gamma: float, cutoffs=(1e-2, 1e-3, 1e-4)) -> DivergenceScan:
    """Truncated Poisson integrals grow like ``gamma^2 W_n log(1/eps)``; heat ones converge.

    ``W_n = int (1-u^2)^{(n-1)/2} du``.  The slope is a least-squares fit of
    ``a + b log(1/eps)`` over the three smallest cutoffs.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    eps = np.asarray(sorted(cutoffs, reverse=True), dtype=float)
    if len(eps) < 3:
        raise ValueError("need at least three cutoffs")
    vals = np.array([truncated_integral(n, gamma, e, "poisson") for e in eps])
    heat = np.array([truncated_integral(n, gamma, e, "heat") for e in eps])
    x = np.log(1.0 / eps[-3:])
    y = vals[-3:]
    A = np.stack([np.ones(3), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.linalg.norm(A @ coef - y) / np.linalg.norm(y - y.mean())) if np.ptp(y) > 0 else 0.0
    return DivergenceScan(n, float(gamma), eps, vals, heat, float(coef[1]), float(coef[0]), resid,
                          gamma * gamma * jacobi_mass(n))
