"""Heat and Poisson evolutes, gradients and first-order Taylor approximants.

Convolutions are Fourier multipliers on a grid zero-padded to twice its
size: ``exp(-t|xi|^2)`` for the heat semigroup and ``exp(-t|xi|)`` for the
Poisson semigroup.  The transform convention is
``F f(xi) = (2 pi)^{-n/2} int f(x) exp(-i x.xi) dx``, under which the heat
kernel ``h_t(x) = (4 pi t)^{-n/2} exp(-|x|^2 / 4t)`` has multiplier
``exp(-t|xi|^2)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy import integrate, special

from .fields import AdmissibilityError, GridField, interpolate
from .spaces import (NormedSpace, _lp_norm, has_vertices, invariant_b, invariant_M_p, norm_eval,
                     sample_sphere, sphere_ascent, vertices)

LIP_C = 64.0


class Spectrum:
    """Zero-padded real FFT of a field, with frequency grids.

    ``F`` has shape ``(m,) + spectral shape``; ``k[j]`` are broadcastable
    frequency arrays and ``k2 = |xi|^2``.
    """

    def __init__(self, f: GridField, workers: int = 1):
        self.field = f
        self.n, self.m, self.res, self.h = f.n, f.m, f.res, f.h
        self.N = 2 * f.res
        self.workers = workers
        self.shape = (self.N,) * self.n
        self.axes = tuple(range(1, self.n + 1))
        vals = np.moveaxis(f.values, -1, 0)
        self.F = sfft.rfftn(vals, s=self.shape, axes=self.axes, workers=workers)
        ks = [2 * np.pi * np.fft.fftfreq(self.N, d=self.h)] * (self.n - 1)
        ks.append(2 * np.pi * np.fft.rfftfreq(self.N, d=self.h))
        self.k = np.meshgrid(*ks, indexing="ij", sparse=True)
        self.k2 = sum(kk * kk for kk in self.k)

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def hermitian_weights(self) -> np.ndarray:
        """Weights turning sums over the half spectrum into full-spectrum sums."""
        w = np.full(self.F.shape[-1], 2.0)
        w[0] = 1.0
        if self.N % 2 == 0:
            w[-1] = 1.0
        return w

    def inverse(self, G: np.ndarray, crop: bool = True) -> np.ndarray:
        """Inverse transform over the last ``n`` axes (leading axes are batch axes)."""
        axes = tuple(range(G.ndim - self.n, G.ndim))
        out = sfft.irfftn(G, s=self.shape, axes=axes, workers=self.workers)
        if crop:
            out = out[(Ellipsis,) + (slice(0, self.res),) * self.n]
        return out

    def apply(self, mult, crop: bool = True) -> np.ndarray:
        """``(m,) + grid`` array of the field filtered by ``mult``."""
        return self.inverse(self.F * mult, crop)

    def plancherel(self, weight=1.0) -> float:
        """``sum_i int weight(xi) |F f_i(xi)|^2 dxi`` (continuum normalization)."""
        w = self.hermitian_weights
        dens = np.sum(np.abs(self.F) ** 2, axis=0) * weight
        return float(np.sum(dens * w)) * self.h ** self.n / self.N ** self.n


def max_time(f: GridField, kind: str = "heat") -> float:
    """Largest admissible semigroup time for the box of ``f``."""
    half = 0.5 * (f.box[1] - f.box[0])
    if kind == "heat":
        return (half / 4.0) ** 2
    if kind == "poisson":
        return half / 4.0
    raise ValueError(f"unknown semigroup {kind!r}")


def check_time(f: GridField, t: float, kind: str = "heat") -> None:
    if not t >= 0:
        raise AdmissibilityError(f"time must be non-negative, got {t}")
    tm = max_time(f, kind)
    if t > tm * (1 + 1e-12):
        raise AdmissibilityError(
            f"{kind} time {t:.6g} outside the admissible range [0, {tm:.6g}] for box "
            f"[{f.box[0]:g}, {f.box[1]:g}]; enlarge the box or reduce the time")


@dataclass(frozen=True, eq=False)
class Evolute:
    """``H_t f`` or ``P_t f`` on the grid of ``base``.

    ``values`` has the field's shape ``grid + (m,)``; ``gradient`` has shape
    ``grid + (m, n)`` so that ``gradient[x]`` is the Jacobian at ``x``.
    """

    base: GridField
    t: float
    kind: str
    values: np.ndarray
    gradient: np.ndarray | None = None
    outside_fraction: float = 0.0

    def as_field(self) -> GridField:
        return GridField(self.values, self.base.box, {"kind": self.kind, "t": self.t}, check=False)

    def sidecar(self) -> dict:
        return {"kind": self.kind, "t": self.t}


def _multiplier(sp: Spectrum, t: float, kind: str):
    if t == 0:
        return 1.0
    if kind == "heat":
        return np.exp(-t * sp.k2)
    return np.exp(-t * sp.kabs)


def evolve(f: GridField, t: float, kind: str = "heat", with_gradient: bool = True,
           sp: Spectrum | None = None, check: bool = True) -> Evolute:
    if kind not in ("heat", "poisson"):
        raise ValueError(f"unknown semigroup {kind!r}")
    if check:
        check_time(f, t, kind)
    sp = Spectrum(f) if sp is None else sp
    G = sp.F * _multiplier(sp, t, kind)
    full = sp.inverse(G, crop=False)
    vals = np.moveaxis(full[(Ellipsis,) + (slice(0, f.res),) * f.n], 0, -1)
    tot = float(np.abs(full).sum())
    lost = 0.0 if tot == 0 else (tot - float(np.abs(vals).sum())) / tot
    if lost > 1e-8:
        warnings.warn(f"{kind} evolute at t={t:g} leaves a fraction {lost:.2e} of its mass outside the box",
                      RuntimeWarning, stacklevel=3)
    grad = None
    if with_gradient:
        parts = [sp.inverse(1j * sp.k[j] * G) for j in range(f.n)]
        grad = np.stack([np.moveaxis(p, 0, -1) for p in parts], axis=-1)
    return Evolute(f, float(t), kind, np.ascontiguousarray(vals), grad, max(lost, 0.0))


def heat_convolve(f: GridField, t: float, with_gradient: bool = True, sp: Spectrum | None = None) -> Evolute:
    """``H_t f`` via the multiplier ``exp(-t|xi|^2)``."""
    return evolve(f, t, "heat", with_gradient, sp)


def poisson_convolve(f: GridField, t: float, with_gradient: bool = True, sp: Spectrum | None = None) -> Evolute:
    """``P_t f`` via the multiplier ``exp(-t|xi|)``."""
    return evolve(f, t, "poisson", with_gradient, sp)


def gradient(e: Evolute) -> np.ndarray:
    """Spectral gradient, shape ``grid + (m, n)``."""
    if e.gradient is None:
        return evolve(e.base, e.t, e.kind, True, check=False).gradient
    return e.gradient


def gradient_fd(e: Evolute | GridField) -> np.ndarray:
    """Second-order central differences (validation path), shape ``grid + (m, n)``."""
    vals = e.values
    n = vals.ndim - 1
    h = e.base.h if isinstance(e, Evolute) else e.h
    parts = [np.gradient(vals, h, axis=d) for d in range(n)]
    return np.stack(parts, axis=-1)


def field_gradient(f: GridField, sp: Spectrum | None = None) -> np.ndarray:
    """Spectral gradient of ``f`` itself (``t = 0``)."""
    return evolve(f, 0.0, "heat", True, sp, check=False).gradient


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``y -> c + A (y - x0)``."""

    base_point: np.ndarray
    value: np.ndarray
    linear: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.base_point, dtype=float))
        c = np.atleast_1d(np.asarray(self.value, dtype=float))
        A = np.atleast_2d(np.asarray(self.linear, dtype=float))
        if A.shape != (len(c), len(x0)):
            raise ValueError(f"linear part must have shape ({len(c)}, {len(x0)}), got {A.shape}")
        object.__setattr__(self, "base_point", x0)
        object.__setattr__(self, "value", c)
        object.__setattr__(self, "linear", A)

    @property
    def n(self) -> int:
        return len(self.base_point)

    @property
    def m(self) -> int:
        return len(self.value)

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.value + (y - self.base_point) @ self.linear.T

    def to_dict(self) -> dict:
        return {"base_point": self.base_point.tolist(), "value": self.value.tolist(),
                "linear": self.linear.tolist(), **{k: v for k, v in self.meta.items()}}


def taylor_evolute(f: GridField, x, t: float, gamma: float, evolute: Evolute | None = None) -> AffineMap:
    """``T^1_x(H_{gamma t^2} f)`` with multilinear interpolation at ``x``.

    The map's ``meta['interp_bias']`` bounds the interpolation error of the
    value by ``h^2/8`` times the largest second difference near ``x``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (f.n,):
        raise ValueError("x must be a point of R^n")
    a, b = f.box
    if np.any(x < a) or np.any(x > b):
        raise AdmissibilityError(f"x = {x.tolist()} lies outside the box [{a:g}, {b:g}]^{f.n}")
    tau = gamma * t * t
    e = heat_convolve(f, tau) if evolute is None else evolute
    c = interpolate(e.values, f.box, x)
    gflat = e.gradient.reshape(e.gradient.shape[:-2] + (-1,))
    A = interpolate(gflat, f.box, x).reshape(f.m, f.n)
    return AffineMap(x, c, A, {"t": t, "gamma": gamma, "heat_time": tau,
                               "interp_bias": _interp_bias(e.values, f.h, f.box, x)})


def _interp_bias(vals: np.ndarray, h: float, box, x: np.ndarray) -> float:
    n = vals.ndim - 1
    res = vals.shape[0]
    i = np.clip(np.round((x - box[0]) / h).astype(int), 1, res - 2)
    tot = 0.0
    for d in range(n):
        idx = list(i)
        lo, mid, hi = list(idx), list(idx), list(idx)
        lo[d] -= 1
        hi[d] += 1
        dd = vals[tuple(hi)] - 2 * vals[tuple(mid)] + vals[tuple(lo)]
        tot += float(np.abs(dd).max())
    return tot / 8.0


def affine_lip(L: AffineMap, X: NormedSpace | None = None, y_p: float = 2.0, samples: int = 4096,
               seed: int = 0) -> float:
    """``sup ||A z||_Y`` over ``||z||_X = 1``.

    Exact by vertex enumeration for polytopal ``B_X``, by duality for scalar
    maps, by the spectral norm for Euclidean ``X`` and ``Y``; otherwise
    sphere sampling refined by projected ascent.
    """
    A = L.linear
    n = A.shape[1]
    X = NormedSpace.lp(n) if X is None else X
    if X.dim != n:
        raise ValueError("space dimension does not match the map")
    if not np.any(A):
        return 0.0
    if has_vertices(X) and (X.kind == "polytope" or n <= 16):
        return float(_lp_norm(vertices(X) @ A.T, y_p).max())
    if A.shape[0] == 1 and X.is_lp_family and X.euclid_scale is None:
        a = A[0] if X.weights is None else A[0] / X.weights
        pd = 1.0 if math.isinf(X.p) else (math.inf if X.p == 1.0 else X.p / (X.p - 1.0))
        return float(_lp_norm(a, pd))
    if X.is_euclidean and y_p == 2.0:
        return float(np.linalg.svd(A, compute_uv=False)[0]) / X.uniform_weight

    def ratio(z):
        return _lp_norm(z @ A.T, y_p) / np.asarray(norm_eval(X, z))

    z = sample_sphere(X, samples, seed)
    vals = ratio(z)
    order = np.argsort(vals)[::-1][:16]
    v, _ = sphere_ascent(ratio, n, z[order])
    return float(max(v, vals.max()))


def evolute_lip_threshold(X: NormedSpace, x, L: float, C: float = LIP_C, count: int = 10 ** 5,
                          seed: int = 0) -> float:
    """Heat times below which ``H_t F`` keeps Lipschitz constant at most 2 near ``x``.

    ``(1 - ||x||_X)^2 / (C (M(X) sqrt(n) + b(X) sqrt(log L))^2)`` for an
    ``L``-Lipschitz ``F`` that is 1-Lipschitz on ``B_X``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    r = float(norm_eval(X, x))
    if not r < 1.0:
        raise ValueError("x must lie in the open unit ball of X")
    if L < 1:
        raise ValueError("L must be at least 1")
    n = X.dim
    M = invariant_M_p(X, 1.0, count, seed).value
    b = invariant_b(X, seed=seed).value
    return (1.0 - r) ** 2 / (C * (M * math.sqrt(n) + b * math.sqrt(math.log(L))) ** 2)


def heat_time_derivative_l1(n: int, t: float = 1.0) -> tuple[float, float]:
    """``int |t d/dt h_t(x)| dx``: closed form and radial quadrature.

    The closed form ``2/Gamma(n/2) (n/2e)^{n/2}`` does not depend on ``t``.
    """
    if n < 1 or not t > 0:
        raise ValueError("need n >= 1 and t > 0")
    closed = 2.0 / math.gamma(n / 2.0) * (n / (2.0 * math.e)) ** (n / 2.0)
    area = 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)

    def integrand(r):
        ht = (4.0 * math.pi * t) ** (-n / 2.0) * math.exp(-r * r / (4.0 * t))
        return abs(r * r / (4.0 * t) - n / 2.0) * ht * r ** (n - 1)

    r0 = math.sqrt(2.0 * n * t)
    lo = integrate.quad(integrand, 0.0, r0, epsabs=0, epsrel=1e-13, limit=200)[0]
    hi = integrate.quad(integrand, r0, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
    return closed, area * (lo + hi)


def subordination_nodes(t: float, step: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Heat times and weights with ``P_t = sum w_k H_{s_k}`` (1/2-stable subordinator).

    From ``exp(-t|xi|) = pi^{-1/2} int u^{-1/2} e^{-u} exp(-t^2|xi|^2/4u) du``
    with ``u = e^v`` and the trapezoid rule in ``v`` (spectrally accurate for
    this doubly decaying integrand).
    """
    v = np.arange(-80.0, 5.0, step)
    u = np.exp(v)
    w = np.sqrt(u) * np.exp(-u) * step / math.sqrt(math.pi)
    return t * t / (4.0 * u), w
