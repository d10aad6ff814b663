"""Square functions of the heat semigroup over the scale measure ``dt/t``.

Every functional has the form ``(int_0^inf I(t) dt/t)^{1/q}`` with
``I(t) = ||A_t f||_q^q`` for a Fourier multiplier ``A_t``.  The integral is
taken with the trapezoid rule in ``ln t`` on a :class:`ScaleGrid`, plus two
power-law end corrections:

* head: ``I(t) ~ t^beta`` as ``t -> 0`` gives ``int_0^{t_0} = I(t_0)/beta``;
* tail: ``I(t) ~ t^{-alpha}`` as ``t -> inf`` gives ``I(t_K)/alpha``, with
  ``alpha`` the local log-slope of the last nodes when that exceeds the
  asymptotic rate of a field with non-zero mean; below that rate the tail
  is fitted as ``t^{-alpha} (c_0 + c_1/t)``.

Norms are taken over the whole zero-padded grid so that mass spreading past
the box at large ``t`` is still counted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .fields import AdmissibilityError, GridField
from .heat import Spectrum, max_time
from .spaces import NormedSpace, _lp_norm, sphere_rule
from .streams import batches, pmap, stream, tree_sum


@dataclass(frozen=True)
class ScaleGrid:
    """Log-uniform times ``t_min = t_0 < ... < t_K = t_max``."""

    t_min: float
    t_max: float
    points: int = 64
    law: str = "log"

    def __post_init__(self):
        if self.law != "log":
            raise ValueError("only the logarithmic law is supported")
        if not (self.t_min > 0 and self.t_max > self.t_min):
            raise ValueError("need 0 < t_min < t_max")
        if self.points < 16:
            raise ValueError("a scale grid needs at least 16 points")

    @classmethod
    def per_decade(cls, t_min: float, t_max: float, per_decade: int = 12) -> "ScaleGrid":
        pts = int(math.ceil(per_decade * math.log10(t_max / t_min))) + 1
        return cls(float(t_min), float(t_max), max(16, pts))

    @classmethod
    def for_field(cls, f: GridField, per_decade: int = 12, t_min: float | None = None,
                  t_max: float | None = None, stretch: float = 1.0) -> "ScaleGrid":
        """Default grid for ``f``: from ``h^2/16`` up to the admissible limit.

        ``stretch`` (e.g. the ratio ``alpha`` of a difference functional)
        divides the upper limit so that ``stretch * t_max`` stays admissible.
        """
        top = max_time(f, "heat") / stretch
        t_max = top if t_max is None else float(t_max)
        t_min = f.h * f.h / 16.0 if t_min is None else float(t_min)
        return cls.per_decade(t_min, t_max, per_decade)

    @property
    def nodes(self) -> np.ndarray:
        return np.geomspace(self.t_min, self.t_max, self.points)

    @property
    def step(self) -> float:
        """Spacing in ``ln t``."""
        return math.log(self.t_max / self.t_min) / (self.points - 1)

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.points, self.step)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def check(self, f: GridField, stretch: float = 1.0) -> None:
        top = max_time(f, "heat")
        if self.t_max * stretch > top * (1 + 1e-12):
            raise AdmissibilityError(
                f"scale grid reaches heat time {self.t_max * stretch:.6g}, beyond the admissible "
                f"{top:.6g} for box [{f.box[0]:g}, {f.box[1]:g}]")

    def to_dict(self) -> dict:
        return {"t_min": self.t_min, "t_max": self.t_max, "points": self.points, "law": self.law}


@dataclass
class FunctionalReport:
    """Value of a square function, its error estimate and the bound it is compared with."""

    name: str
    value: float
    discretization_error_estimate: float
    scale_grid: ScaleGrid | None
    bound_value: float | None = None
    ratio: float | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError("functional values are non-negative")
        if self.ratio is None and self.bound_value:
            self.ratio = self.value / self.bound_value

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value,
                "discretization_error_estimate": self.discretization_error_estimate,
                "scale_grid": None if self.scale_grid is None else self.scale_grid.to_dict(), "bound_value": self.bound_value,
                "ratio": self.ratio, "extras": self.extras}


class ScaleIntegral(NamedTuple):
    total: float
    error: float
    head: float
    tail: float
    tail_slope: float


def _power_sum(I: np.ndarray, w: np.ndarray) -> float:
    return tree_sum(I * w)


def _with_ends(I: np.ndarray, step: float, beta: float, alpha_min: float) -> tuple[float, float, float, float]:
    w = np.full(len(I), step)
    w[0] *= 0.5
    w[-1] *= 0.5
    body = _power_sum(I, w)
    head = I[0] / beta if beta > 0 else 0.0
    alpha = alpha_min
    tail = I[-1] / alpha if alpha > 0 else (math.inf if I[-1] > 0 else 0.0)
    if len(I) >= 3 and I[-1] > 0 and I[-3] > 0:
        s = -math.log(I[-1] / I[-3]) / (2 * step)
        if s > alpha_min:
            alpha = s
            tail = I[-1] / alpha
        elif alpha_min > 0:
            # still approaching the t^-alpha_min asymptote from below: fit t^alpha I = c0 + c1 / t
            r = math.exp(2 * step)
            a, b = I[-3] * r ** (-alpha_min), I[-1]
            c1u = (a - b) / (r - 1.0)
            c0 = b - c1u
            if c0 > 0:
                tail = c0 / alpha_min + c1u / (alpha_min + 1.0)
    return body + head + tail, head, tail, alpha


def scale_integral(I: np.ndarray, grid: ScaleGrid, beta: float, alpha_min: float) -> ScaleIntegral:
    """``int_0^inf I(t) dt/t`` from samples on ``grid`` with end corrections.

    The error estimate adds the change when every other node is dropped and
    the change when the grid is cut at ``t_max / 2`` (end corrections applied
    in both cases).
    """
    I = np.asarray(I, dtype=float)
    step = grid.step
    total, head, tail, alpha = _with_ends(I, step, beta, alpha_min)
    if not np.any(I):
        return ScaleIntegral(0.0, 0.0, 0.0, 0.0, alpha)
    # every other node; with an even count the coarse grid starts at t_1
    sub = I[::2] if len(I) % 2 else I[1::2]
    err = abs(total - _with_ends(sub, 2 * step, beta, alpha_min)[0])
    cut = int(round(math.log(2.0) / step))
    if 0 < cut < len(I) - 4:
        err += abs(total - _with_ends(I[:-cut], step, beta, alpha_min)[0])
    return ScaleIntegral(total, err, head, tail, alpha)


def _padded_lq(arr: np.ndarray, q: float, y_p: float, cell: float) -> float:
    """``||.||_q^q`` of an ``(m,) + grid`` array with ``l_p^m`` values."""
    r = _lp_norm(np.moveaxis(arr, 0, -1), y_p)
    if math.isinf(q):
        return float(r.max())
    return float(np.sum(r ** q)) * cell


def _run(sp: Spectrum, mult: Callable[[float], np.ndarray], grid: ScaleGrid, q: float, y_p: float,
         threads: int, reduce: Callable[[np.ndarray], np.ndarray] | None = None) -> np.ndarray:
    cell = sp.h ** sp.n

    def one(t):
        G = sp.F * mult(t)
        out = sp.inverse(G, crop=False)
        if reduce is not None:
            out = reduce(out)
        return _padded_lq(out, q, y_p, cell)

    return np.array(pmap(one, list(grid.nodes), threads))


def _finish(name: str, I: np.ndarray, grid: ScaleGrid, q: float, beta: float, alpha_min: float,
            bound: float | None, extras: dict) -> FunctionalReport:
    si = scale_integral(I, grid, beta, alpha_min)
    val = si.total ** (1.0 / q)
    err = 0.0 if si.total == 0 else si.error / (q * si.total ** ((q - 1.0) / q))
    ext = {"head_fraction": si.head / si.total if si.total else 0.0,
           "tail_fraction": si.tail / si.total if si.total else 0.0,
           "tail_slope": si.tail_slope, "q": q}
    ext.update(extras)
    return FunctionalReport(name, float(val), float(err), grid, bound, None, ext)


def _grid(f: GridField, grid: ScaleGrid | None, stretch: float = 1.0) -> ScaleGrid:
    g = ScaleGrid.for_field(f, stretch=stretch) if grid is None else grid
    g.check(f, stretch)
    return g


def temporal_g(f: GridField, q: float = 2.0, grid: ScaleGrid | None = None, y_p: float = 2.0,
               threads: int = 1) -> FunctionalReport:
    """``(int ||t d/dt H_t f||_q^q dt/t)^{1/q}``, with ``d/dt H_t = Delta H_t``.

    The bound reported is ``sqrt(n) ||f||_q`` (martingale constant taken as 1).
    """
    if q < 2:
        raise ValueError("the temporal square function needs q >= 2")
    grid = _grid(f, grid)
    sp = Spectrum(f)
    I = _run(sp, lambda t: -t * sp.k2 * np.exp(-t * sp.k2), grid, q, y_p, threads)
    bound = math.sqrt(f.n) * f.lq_norm(q, y_p)
    return _finish("temporal", I, grid, q, q, f.n * (q - 1) / 2.0, bound, {"f_norm": f.lq_norm(q, y_p)})


def _sphere_average(vec_f: GridField, q: float, count: int, seed: int) -> float:
    pts, wts = sphere_rule(NormedSpace.lp(vec_f.n), count, seed)
    cell = vec_f.cell_volume
    vals = []
    for s in pts:
        proj = vec_f.values @ s
        vals.append((np.sum(np.abs(proj) ** q) * cell) ** (1.0 / q))
    return tree_sum(np.asarray(vals) * wts)


def spatial_div_g(vec_f: GridField, q: float = 2.0, grid: ScaleGrid | None = None, threads: int = 1,
                  sphere_points: int = 64, seed: int = 0) -> FunctionalReport:
    """``(int ||sqrt(t) div H_t f||_q^q dt/t)^{1/q}`` for ``f: R^n -> R^n``.

    Bound: ``sqrt(n) * mean over the sphere of ||sigma . f||_q``.
    """
    if vec_f.m != vec_f.n:
        raise ValueError(f"divergence needs as many components as dimensions, got m={vec_f.m}, n={vec_f.n}")
    grid = _grid(vec_f, grid)
    sp = Spectrum(vec_f)
    D = sum(1j * sp.k[j] * sp.F[j] for j in range(vec_f.n))[None]
    cell = sp.h ** sp.n

    def one(t):
        out = sp.inverse(D * (math.sqrt(t) * np.exp(-t * sp.k2)), crop=False)
        return _padded_lq(out, q, 2.0, cell)

    I = np.array(pmap(one, list(grid.nodes), threads))
    avg = _sphere_average(vec_f, q, sphere_points, seed)
    return _finish("spatial-divergence", I, grid, q, q / 2.0, vec_f.n * (q - 1) / 2.0,
                   math.sqrt(vec_f.n) * avg, {"sphere_average": avg})


def directional_g(f: GridField, z, q: float = 2.0, grid: ScaleGrid | None = None, y_p: float = 2.0,
                  threads: int = 1) -> FunctionalReport:
    """``(int ||sqrt(t) (z . grad) H_t f||_q^q dt/t)^{1/q}``.

    ``extras['sup_single_time']`` is ``max_t ||sqrt(t) (z . grad) H_t f||_q``
    over the grid nodes; its reference value is ``|z| ||f||_q / sqrt(pi)``.
    For ``q <= 1`` the scale integral of a function with non-zero mean
    diverges and the value is reported as infinite.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (f.n,):
        raise ValueError("z must be a vector of R^n")
    grid = _grid(f, grid)
    sp = Spectrum(f)
    zk = sum(z[j] * sp.k[j] for j in range(f.n))
    I = _run(sp, lambda t: 1j * zk * math.sqrt(t) * np.exp(-t * sp.k2), grid, q, y_p, threads)
    fn = f.lq_norm(q, y_p)
    zn = float(np.linalg.norm(z))
    single = float(I.max() ** (1.0 / q)) if not math.isinf(q) else float(I.max())
    ref = zn * fn / math.sqrt(math.pi)
    extras = {"sup_single_time": single, "single_time_bound": ref,
              "sup_ratio": single / ref if ref > 0 else 0.0,
              "argmax_t": float(grid.nodes[int(np.argmax(I))]), "f_norm": fn}
    if q <= 1.0 and np.any(I):
        extras["note"] = "scale integral diverges for q <= 1"
        return FunctionalReport("directional", math.inf, math.inf, grid, zn * fn, None, extras)
    return _finish("directional", I, grid, q, q / 2.0, f.n * (q - 1) / 2.0, zn * fn, extras)


def frullani_constant(alpha: float) -> float:
    """``int_0^inf (e^{-a} - e^{-alpha a})^2 da/a = ln((1+alpha)^2 / (4 alpha))``."""
    return math.log((1.0 + alpha) ** 2 / (4.0 * alpha))


def difference_g(f: GridField, alpha: float, q: float = 2.0, grid: ScaleGrid | None = None,
                 y_p: float = 2.0, threads: int = 1) -> FunctionalReport:
    """``(int ||(H_t - H_{alpha t}) f||_q^q dt/t)^{1/q}``; needs ``alpha t_max`` admissible.

    Bound: ``(ln alpha)^{1/q} ||f||_q``.  For ``q = 2`` the exact value
    ``sqrt(ln((1+alpha)^2/(4 alpha))) ||f||_2`` is carried in the extras.
    """
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    grid = _grid(f, grid, stretch=alpha)
    sp = Spectrum(f)
    I = _run(sp, lambda t: np.exp(-t * sp.k2) - np.exp(-alpha * t * sp.k2), grid, q, y_p, threads)
    fn = f.lq_norm(q, y_p)
    extras = {"alpha": alpha, "f_norm": fn}
    if q == 2.0:
        extras["exact_value"] = math.sqrt(frullani_constant(alpha)) * fn
    return _finish("difference", I, grid, q, q, f.n * (q - 1) / 2.0, math.log(alpha) ** (1.0 / q) * fn, extras)


def difference_profile(f: GridField, alpha: float, times, q: float = 2.0, y_p: float = 2.0) -> np.ndarray:
    """``||(H_t - H_{alpha t}) f||_q`` at each of ``times``."""
    sp = Spectrum(f)
    cell = sp.h ** sp.n
    out = []
    for t in np.atleast_1d(times):
        G = sp.F * (np.exp(-t * sp.k2) - np.exp(-alpha * t * sp.k2))
        out.append(_padded_lq(sp.inverse(G, crop=False), q, y_p, cell) ** (1.0 / q))
    return np.array(out)


class SingleTimeCheck(NamedTuple):
    value: float
    bound: float
    constant: float
    holds: bool


def spatial_div_constant(n: int) -> float:
    """``Gamma((n+1)/2) / Gamma(n/2)``."""
    return math.exp(math.lgamma((n + 1) / 2.0) - math.lgamma(n / 2.0))


def spatial_div_single_t(vec_f: GridField, t: float, q: float = 2.0, slack: float = 1e-3,
                         sphere_points: int = 256, seed: int = 0) -> SingleTimeCheck:
    """``||sqrt(t) div H_t f||_q`` against ``Gamma((n+1)/2)/Gamma(n/2)`` times the sphere mean."""
    if vec_f.m != vec_f.n:
        raise ValueError(f"divergence needs as many components as dimensions, got m={vec_f.m}, n={vec_f.n}")
    if not t > 0:
        raise ValueError("t must be positive")
    sp = Spectrum(vec_f)
    D = sum(1j * sp.k[j] * sp.F[j] for j in range(vec_f.n))[None]
    out = sp.inverse(D * (math.sqrt(t) * np.exp(-t * sp.k2)), crop=False)
    val = _padded_lq(out, q, 2.0, sp.h ** sp.n)
    val = val if math.isinf(q) else val ** (1.0 / q)
    c = spatial_div_constant(vec_f.n)
    bound = c * _sphere_average(vec_f, q, sphere_points, seed)
    return SingleTimeCheck(float(val), float(bound), c, bool(val <= bound * (1 + slack) + 1e-300))


# martingales -------------------------------------------------------------


def dyadic_martingale_ratio(levels, q: float = 2.0, y_p: float = 2.0) -> float:
    """``(sum_k E||M_{k+1} - M_k||^q)^{1/q} / max_k (E||M_k||^q)^{1/q}``.

    ``levels[k]`` holds the ``2^k`` atoms of ``M_{k+1}`` (shape ``(2^k, m)``),
    children of atom ``i`` being ``2i`` and ``2i+1``; expectations are
    uniform averages over atoms.
    """
    inc = 0.0
    top = 0.0
    prev = None
    for lev in levels:
        lev = np.atleast_2d(np.asarray(lev, dtype=float))
        top = max(top, float(np.mean(_lp_norm(lev, y_p) ** q)))
        if prev is not None:
            d = lev - np.repeat(prev, 2, axis=0)
            inc += float(np.mean(_lp_norm(d, y_p) ** q))
        prev = lev
    if top == 0.0:
        return 0.0
    return (inc / top) ** (1.0 / q)


@dataclass
class PisierReport:
    """Distribution of martingale ratios; the maximum is a lower bound for the martingale constant."""

    q: float
    m: int
    y_p: float
    depth: int
    trials: int
    seed: int
    ratios: np.ndarray
    histogram: tuple

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max())

    def to_dict(self) -> dict:
        counts, edges = self.histogram
        return {"q": self.q, "m": self.m, "y_p": self.y_p, "depth": self.depth, "trials": self.trials,
                "seed": self.seed, "max_ratio": self.max_ratio, "mean_ratio": float(self.ratios.mean()),
                "histogram": {"counts": counts.tolist(), "edges": edges.tolist()}}


def _martingale_batch(rng: np.random.Generator, size: int, depth: int, m: int, q: float, y_p: float) -> np.ndarray:
    # binary filtration: atom M splits into M + d and M - d with d uniform in [-1, 1]^m
    M = rng.uniform(-1.0, 1.0, (size, 1, m))
    top = np.mean(_lp_norm(M, y_p) ** q, axis=1)
    inc = np.zeros(size)
    for _ in range(depth - 1):
        d = rng.uniform(-1.0, 1.0, M.shape)
        inc += np.mean(_lp_norm(d, y_p) ** q, axis=1)
        M = np.stack([M + d, M - d], axis=2).reshape(size, -1, m)
        top = np.maximum(top, np.mean(_lp_norm(M, y_p) ** q, axis=1))
    return (inc / top) ** (1.0 / q)


def pisier_martingale_test(q: float = 2.0, m: int = 1, depth: int = 10, trials: int = 10 ** 4, seed: int = 0,
                           y_p: float | None = None, threads: int = 1, bins: int = 32) -> PisierReport:
    """Random dyadic martingales in ``l_{y_p}^m`` (``y_p = q`` by default).

    Each trial draws ``M_1`` uniform in ``[-1, 1]^m`` and refines every atom
    ``M`` into ``M + d, M - d`` with ``d`` uniform in ``[-1, 1]^m``, for
    ``depth`` levels.  Expectations over the filtration are exact averages,
    so the ratio is invariant under rescaling the martingale into the unit
    ball.  Trials run in fixed batches with one random stream each.
    """
    if q < 2:
        raise ValueError("q must be at least 2")
    if not 1 <= depth <= 16:
        raise ValueError("depth must lie in 1..16")
    y_p = q if y_p is None else float(y_p)
    size = max(1, min(256, (1 << 18) >> depth))
    parts = pmap(lambda bl: _martingale_batch(stream(seed, "martingale", bl[0]), bl[1], depth, m, q, y_p),
                 batches(trials, size), threads)
    ratios = np.concatenate(parts)
    hist = np.histogram(ratios, bins=bins)
    return PisierReport(q, m, y_p, depth, trials, seed, ratios, hist)
