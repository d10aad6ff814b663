"""Affine projection on ``L_2(B_X)`` and Wasserstein distances of half-ball measures.

For a direction ``x`` the measures ``nu_x^+`` and ``nu_x^-`` have densities
``(x . y)^+`` and ``(x . y)^-`` on ``B_X``; ``mu_x^+-`` are their normalized
versions.  For an isotropic body of unit volume

    sup_{||x||_X = 1} W_1(nu_x^+, nu_x^-) = L_X^2 ||Proj||_{Lip(X) -> Lip(X)},

where ``Proj`` is the orthogonal projection onto affine functions.  Distances
use the cost ``||a - b||_X``.  In one dimension they come from the quantile
formula, otherwise from the exact transportation simplex of
:mod:`heatdiff.kernels`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fields import AdmissibilityError, GridField
from .heat import AffineMap
from .spaces import NormedSpace, coordinate_extent, norm_eval, sphere_rule, volume
from .streams import pmap, stream

MAX_ATOMS = 2000
REFINE_TOL = 0.02
# two-sided band for the normalized ratios against ||Proj||
C_STAR = 5.0


@dataclass(frozen=True)
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if p.ndim != 2 or len(p) != len(w):
            raise ValueError("points must have shape (k, n) with one weight per point")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(math.fsum(self.weights))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.weights)

    def normalized(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights / self.total)

    def reflected(self) -> "DiscreteMeasure":
        return DiscreteMeasure(-self.points, self.weights)

    def integrate(self, g) -> float:
        """``int g dmu`` for ``g`` mapping ``(k, n)`` points to ``(k,)`` values."""
        return float(np.dot(self.weights, np.asarray(g(self.points), dtype=float).ravel()))


@dataclass(frozen=True)
class TransportPlan:
    rows: np.ndarray
    cols: np.ndarray
    flows: np.ndarray
    cost: float

    def marginal_error(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        a = np.bincount(self.rows, weights=self.flows, minlength=len(mu))
        b = np.bincount(self.cols, weights=self.flows, minlength=len(nu))
        return float(max(np.abs(a - mu.weights).max(initial=0.0), np.abs(b - nu.weights).max(initial=0.0)))

    def to_dict(self) -> dict:
        return {"flows": [[int(i), int(j), float(w)] for i, j, w in zip(self.rows, self.cols, self.flows)],
                "cost": self.cost}


# projection onto affine functions -------------------------------------------


def _check_unit_volume(X: NormedSpace, tol: float = 1e-6) -> None:
    v = volume(X)
    if abs(v - 1.0) > tol:
        raise ValueError(f"B_X must have unit volume (got {v:.6g}); apply isotropic_normalize first")


def proj_operator(f: GridField, X: NormedSpace, L: float) -> AffineMap:
    """Orthogonal projection of ``f|_{B_X}`` onto affine functions.

    The inner product is the grid quadrature over the ball mask.  The
    Gram system of ``1, z_1, ..., z_n`` is solved exactly, so affine
    functions are fixed to rounding; for a continuous isotropic body the
    system is ``diag(1, L^2, ..., L^2)`` and the result is
    ``int f + L^-2 sum_j x_j int z_j f``.  ``meta`` carries that closed form
    evaluated with the same quadrature.
    """
    if f.n != X.dim:
        raise ValueError("field and space dimensions differ")
    if not L > 0:
        raise ValueError("L must be positive")
    _check_unit_volume(X)
    ext = coordinate_extent(X)
    reach = ext.max() * (1 - 1e-12)
    if f.box[0] > -reach or f.box[1] < reach:
        raise ValueError("the field's box does not cover B_X")
    pts = f.points().reshape(-1, f.n)
    vals = f.values.reshape(-1, f.m)
    mask = np.asarray(norm_eval(X, pts)) <= 1.0
    z = pts[mask]
    fv = vals[mask]
    w = np.full(len(z), f.cell_volume)
    basis = np.hstack([np.ones((len(z), 1)), z])
    G = basis.T @ (w[:, None] * basis)
    rhs = basis.T @ (w[:, None] * fv)
    coef = np.linalg.solve(G, rhs)
    closed = np.vstack([rhs[:1], rhs[1:] / (L * L)])
    return AffineMap(np.zeros(f.n), coef[0], coef[1:].T,
                     meta={"mass": float(w.sum()), "nodes": int(len(z)), "closed_form_value": closed[0].tolist(),
                           "closed_form_linear": closed[1:].T.tolist()})


def proj_on_grid(P: AffineMap, f: GridField, X: NormedSpace) -> GridField:
    """Sample ``P`` back on ``f``'s grid inside ``B_X`` (zero outside)."""
    pts = f.points().reshape(-1, f.n)
    mask = np.asarray(norm_eval(X, pts)) <= 1.0
    out = np.zeros((len(pts), P.m))
    out[mask] = P(pts[mask])
    return GridField(out.reshape(f.values.shape), f.box, dict(f.meta), check=False)


# half-ball measures ---------------------------------------------------------


@dataclass(frozen=True)
class HalfBallMeasures:
    mu_plus: DiscreteMeasure
    mu_minus: DiscreteMeasure
    nu_plus: DiscreteMeasure
    nu_minus: DiscreteMeasure
    cells_per_axis: int


def _cells_per_axis(X: NormedSpace, atoms: int) -> int:
    n = X.dim
    ext = coordinate_extent(X)
    fill = volume(X) / float(np.prod(2.0 * ext))
    # about half the ball cells carry each measure
    k = int(round((2.0 * atoms / fill) ** (1.0 / n)))
    return max(4, k + (k % 2))


def ball_cells(X: NormedSpace, per_axis: int) -> tuple[np.ndarray, float]:
    """Cell centres inside ``B_X`` of a ``per_axis^n`` grid on the bounding box, and the weight per cell."""
    n = X.dim
    ext = coordinate_extent(X)
    # half-integer offsets keep the grid exactly antisymmetric in floating point
    axes = [(np.arange(per_axis) - 0.5 * (per_axis - 1)) * (2.0 * e / per_axis) for e in ext]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    inside = np.asarray(norm_eval(X, pts)) <= 1.0
    # the mask misses or adds boundary slivers; spread the exact volume over it
    return pts[inside], volume(X) / int(inside.sum())


def half_ball_measures(X: NormedSpace, x, atoms: int = 400) -> HalfBallMeasures:
    """Cell-centred discretization of the densities ``(x . y)^+-`` on ``B_X``.

    ``atoms`` is the target count per measure.  The grid is symmetric about
    the origin, so ``mu^-`` is exactly the reflection of ``mu^+``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (X.dim,):
        raise ValueError("x must be a vector of the space's dimension")
    if not np.any(x != 0):
        raise ValueError("x must be nonzero")
    k = _cells_per_axis(X, atoms)
    pts, cv = ball_cells(X, k)
    d = pts @ x
    pos, neg = d > 0, d < 0
    nu_p = DiscreteMeasure(pts[pos], d[pos] * cv)
    nu_m = DiscreteMeasure(pts[neg], -d[neg] * cv)
    # half the L_1 mass of x . y, as in the continuous normalization
    half = 0.5 * float(np.sum(np.abs(d)) * cv)
    mu_p = DiscreteMeasure(nu_p.points, nu_p.weights / half)
    mu_m = DiscreteMeasure(nu_m.points, nu_m.weights / half)
    return HalfBallMeasures(mu_p, mu_m, nu_p, nu_m, k)


# W_1 ------------------------------------------------------------------------


def cost_matrix(a: np.ndarray, b: np.ndarray, X: NormedSpace) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.asarray(norm_eval(X, diff.reshape(-1, a.shape[1]))).reshape(len(a), len(b))


def _scale_1d(X: NormedSpace) -> float:
    return float(norm_eval(X, np.array([[1.0]]))[0])


def _quantile_w1(mu: DiscreteMeasure, nu: DiscreteMeasure, X: NormedSpace) -> tuple[float, TransportPlan]:
    """Monotone coupling on the line; the cost is ``c int |F_mu - F_nu|``."""
    c = _scale_1d(X)
    ia = np.argsort(mu.points[:, 0], kind="stable")
    ib = np.argsort(nu.points[:, 0], kind="stable")
    xa, wa = mu.points[ia, 0], mu.weights[ia]
    xb, wb = nu.points[ib, 0], nu.weights[ib]
    # CDF difference integrated over the merged breakpoints
    allx = np.concatenate([xa, xb])
    jumps = np.concatenate([wa, -wb])
    o = np.argsort(allx, kind="stable")
    cdf = np.cumsum(jumps[o])[:-1]
    value = c * float(np.sum(np.abs(cdf) * np.diff(allx[o])))
    rows, cols, flows = [], [], []
    i = j = 0
    ra, rb = (wa[0] if len(wa) else 0.0), (wb[0] if len(wb) else 0.0)
    while i < len(wa) and j < len(wb):
        m = min(ra, rb)
        if m > 0:
            rows.append(ia[i])
            cols.append(ib[j])
            flows.append(m)
        ra -= m
        rb -= m
        if ra <= rb:
            i += 1
            ra = wa[i] if i < len(wa) else 0.0
        else:
            j += 1
            rb = wb[j] if j < len(wb) else 0.0
    plan = TransportPlan(np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64),
                         np.asarray(flows, dtype=float), value)
    return value, plan


def _flow_w1(mu: DiscreteMeasure, nu: DiscreteMeasure, X: NormedSpace) -> tuple[float, TransportPlan]:
    if max(len(mu), len(nu)) > MAX_ATOMS:
        raise ValueError(f"flow solver is limited to {MAX_ATOMS} atoms per side")
    ka, kb = mu.weights > 0, nu.weights > 0
    a, b = mu.weights[ka], nu.weights[kb]
    b = b * (a.sum() / b.sum())
    C = cost_matrix(mu.points[ka], nu.points[kb], X)
    rows, cols, flows, cost, *_ = kernels.transport_simplex(a, b, C)
    keep = flows > 0
    ra = np.flatnonzero(ka)[rows[keep]]
    cb = np.flatnonzero(kb)[cols[keep]]
    f = flows[keep]
    cost = float(np.sum(f * C[rows[keep], cols[keep]]))
    return cost, TransportPlan(ra, cb, f, cost)


def w1_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, X: NormedSpace,
                method: str = "auto") -> tuple[float, TransportPlan]:
    """``W_1(mu, nu)`` with cost ``||a - b||_X`` and an optimal plan.

    ``method`` is ``"quantile"`` (one dimension only), ``"flow"`` or
    ``"auto"`` (quantile in one dimension, flow otherwise).
    """
    if mu.dim != X.dim or nu.dim != X.dim:
        raise ValueError("measure and space dimensions differ")
    if abs(mu.total - nu.total) > 1e-9:
        raise ValueError(f"unbalanced masses: {mu.total!r} vs {nu.total!r}")
    if method == "auto":
        method = "quantile" if X.dim == 1 else "flow"
    if mu.total == 0:
        return 0.0, TransportPlan(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), 0.0)
    if method == "quantile":
        if X.dim != 1:
            raise ValueError("the quantile formula needs one dimension")
        return _quantile_w1(mu, nu, X)
    if method == "flow":
        return _flow_w1(mu, nu, X)
    raise ValueError(f"unknown method {method!r}")


# ||Proj|| via the duality identity -------------------------------------------


@dataclass(frozen=True)
class DirectionReport:
    x: np.ndarray
    w1_nu: float
    w1_mu: float
    ratio: float

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "w1": self.w1_nu, "w1_mu": self.w1_mu, "ratio": self.ratio}


@dataclass(frozen=True)
class ProjNormReport:
    proj_norm: float
    argmax: np.ndarray
    refined_value: float
    refinement_change: float
    per_direction: list
    L: float
    atoms: int
    band: tuple[float, float]
    extras: dict = field(default_factory=dict)

    @property
    def ratios_in_band(self) -> bool:
        lo, hi = self.band
        return all(lo <= d.ratio <= hi for d in self.per_direction)

    def to_dict(self) -> dict:
        return {"proj_norm": self.proj_norm, "argmax": self.argmax.tolist(), "refined_value": self.refined_value,
                "refinement_change": self.refinement_change, "L": self.L, "atoms": self.atoms,
                "band": list(self.band), "ratios_in_band": self.ratios_in_band,
                "per_direction": [d.to_dict() for d in self.per_direction], **self.extras}


def direction_report(X: NormedSpace, x, L: float, atoms: int) -> DirectionReport:
    """``W_1(nu_x^+, nu_x^-) / L^2`` and ``|x| / (L ||x||_X) W_1(mu_x^+, mu_x^-)`` at ``x``."""
    x = np.asarray(x, dtype=float)
    hb = half_ball_measures(X, x, atoms)
    w_nu, _ = w1_distance(hb.nu_plus, hb.nu_minus, X)
    mass = hb.nu_plus.total
    w_mu = w_nu / mass
    ratio = float(np.linalg.norm(x)) / (L * float(norm_eval(X, x[None])[0])) * w_mu
    return DirectionReport(x, w_nu / (L * L), w_mu, ratio)


def _to_sphere(X: NormedSpace, u: np.ndarray) -> np.ndarray:
    return u / np.asarray(norm_eval(X, u))[..., None]


def _compass_ascent(obj, u: np.ndarray, v: float, step: float, min_step: float = 1e-3,
                    budget: int = 40) -> tuple[np.ndarray, float]:
    """Derivative-free ascent over unit vectors (the discretized objective is piecewise smooth)."""
    n = len(u)
    evals = 0
    while step > min_step and evals < budget:
        basis = np.linalg.svd(u[None])[2][1:]  # tangent directions at u
        moved = False
        for t in basis:
            for sgn in (1.0, -1.0):
                c = np.cos(step) * u + np.sin(step) * sgn * t
                cv = obj(c)
                evals += 1
                if cv > v:
                    u, v, moved = c, cv, True
                    break
            if moved:
                break
        if not moved:
            step *= 0.5
    return u, v


def proj_norm_estimate(X: NormedSpace, L: float, directions: int = 64, atoms: int = 400, seed: int = 0,
                       threads: int = 1, ascent: bool = True) -> ProjNormReport:
    """``sup_{x in dB_X} W_1(nu_x^+, nu_x^-) / L_X^2`` over sampled directions plus local ascent.

    The maximizing direction is re-solved with doubled atoms; a relative
    change above 2% raises :class:`AdmissibilityError`.
    """
    n = X.dim
    if n > 3:
        raise ValueError("the flow solver is sized for n <= 3")
    if not L > 0:
        raise ValueError("L must be positive")
    _check_unit_volume(X)
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif n == 2:
        th = np.pi * (np.arange(directions) + 0.5) / directions
        off = stream(seed, "wasserstein", "phase").uniform(0.0, np.pi / directions)
        dirs = np.stack([np.cos(th + off), np.sin(th + off)], axis=1)
        dirs = np.vstack([dirs, -dirs])
    else:
        dirs, _ = sphere_rule(NormedSpace.lp(n), directions, seed)
    xs = _to_sphere(X, dirs)
    reps = pmap(lambda x: direction_report(X, x, L, atoms), list(xs), threads)
    vals = np.array([r.w1_nu for r in reps])
    best = int(np.argmax(vals))
    bx, bv = xs[best], float(vals[best])
    extras: dict = {"sampled_max": bv}
    if ascent and n > 1:
        u, bv = _compass_ascent(lambda v: direction_report(X, _to_sphere(X, v[None])[0], L, atoms).w1_nu,
                                dirs[best] / np.linalg.norm(dirs[best]), bv, np.pi / max(directions, 4))
        bx = _to_sphere(X, u[None])[0]
        extras["ascent_gain"] = bv - extras["sampled_max"]
    fine = direction_report(X, bx, L, 2 * atoms).w1_nu
    change = abs(fine - bv) / bv
    if change > REFINE_TOL:
        raise AdmissibilityError(f"W_1 moved by {change:.3%} under atom doubling; increase atoms")
    return ProjNormReport(bv, bx, float(fine), float(change), reps, float(L), int(atoms),
                          (bv / C_STAR, bv * C_STAR), extras)
