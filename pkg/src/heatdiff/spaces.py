"""Finite-dimensional normed spaces and their convex-geometric invariants.

A :class:`NormedSpace` is a norm on R^n (an l_p norm, a diagonally weighted
l_p norm, or the gauge of a symmetric polytope given by supporting
functionals) together with a Euclidean reference structure
``|x| = |S x|`` for a symmetric positive-definite ``S``.

The invariants are

* ``M_p(X) = (avg over S^{n-1} of ||s||_X^p)^(1/p)``, ``M = M_1``,
* ``I_q(X) = (avg over B_X of |x|^q)^(1/q)``,
* ``b(X) = sup over S^{n-1} of ||s||_X``,
* the isotropic constant ``L_X``.

Monte Carlo estimates come back as :class:`InvariantEstimate` objects that
record their standard error and seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import special
from scipy.optimize import brentq
from scipy.spatial import ConvexHull, HalfspaceIntersection
from scipy.stats import qmc

from .streams import batches, stream, tree_sum

KINDS = ("lp", "weighted-lp", "polytope")

# band for the ratio M_p / (M + sqrt(p/(n+p)) b); a suite choice
C_STAR = 5.0
MIN_ACCEPTANCE = 1e-6


class InvariantError(RuntimeError):
    """An internal consistency check failed."""


@dataclass(frozen=True)
class InvariantEstimate:
    value: float
    std_error: float = 0.0
    method: str = "closed-form"
    samples: int = 0
    seed: int | None = None

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("std_error must be non-negative")
        if self.method == "monte-carlo" and self.samples <= 0:
            raise ValueError("monte-carlo estimates need samples > 0")

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "method": self.method,
                "samples": self.samples, "seed": self.seed}


def _parse_p(p) -> float:
    if isinstance(p, str):
        if p.lower() in ("inf", "infinity"):
            return math.inf
        p = float(p)
    p = float(p)
    if not (p >= 1.0):
        raise ValueError(f"p must lie in [1, inf], got {p}")
    return p


@dataclass(frozen=True, eq=False)
class NormedSpace:
    """A norm on R^n plus a Euclidean structure ``|x| = |S x|``."""

    dim: int
    kind: str = "lp"
    p: float = 2.0
    weights: np.ndarray | None = None
    facets: np.ndarray | None = None
    euclid_scale: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.dim)
        if n < 1:
            raise ValueError("dim must be a positive integer")
        object.__setattr__(self, "dim", n)
        if self.kind not in KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("lp", "weighted-lp"):
            object.__setattr__(self, "p", _parse_p(self.p))
        if self.kind == "weighted-lp":
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (n,) or np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be a positive vector of length dim")
            object.__setattr__(self, "weights", w)
        elif self.kind == "lp":
            object.__setattr__(self, "weights", None)
        if self.kind == "polytope":
            a = np.atleast_2d(np.asarray(self.facets, dtype=float))
            if a.shape[1] != n or a.shape[0] < n:
                raise ValueError("facets must be a (k, dim) array with k >= dim")
            if np.linalg.matrix_rank(a) < n:
                raise ValueError("facets do not span R^n; the unit ball is unbounded")
            object.__setattr__(self, "facets", a)
        if self.euclid_scale is not None:
            s = np.asarray(self.euclid_scale, dtype=float)
            if s.shape != (n, n) or not np.allclose(s, s.T, atol=1e-13):
                raise ValueError("euclid_scale must be a symmetric (dim, dim) matrix")
            if np.linalg.eigvalsh(s).min() <= 0:
                raise ValueError("euclid_scale must be positive definite")
            if np.array_equal(s, np.eye(n)):
                s = None
            object.__setattr__(self, "euclid_scale", s)

    # constructors -----------------------------------------------------------

    @classmethod
    def lp(cls, n: int, p=2.0) -> "NormedSpace":
        return cls(n, "lp", p)

    @classmethod
    def weighted_lp(cls, weights, p=2.0) -> "NormedSpace":
        w = np.asarray(weights, dtype=float)
        return cls(len(w), "weighted-lp", p, weights=w)

    @classmethod
    def polytope(cls, facets) -> "NormedSpace":
        a = np.atleast_2d(np.asarray(facets, dtype=float))
        return cls(a.shape[1], "polytope", facets=a)

    @classmethod
    def from_descriptor(cls, d: dict) -> "NormedSpace":
        kind = d.get("kind", "lp")
        return cls(int(d["dim"]), kind, d.get("p", 2.0), weights=d.get("weights"),
                   facets=d.get("facets"), euclid_scale=d.get("euclid_scale"))

    def descriptor(self) -> dict:
        d = {"dim": self.dim, "kind": self.kind}
        if self.kind != "polytope":
            d["p"] = "inf" if math.isinf(self.p) else self.p
        if self.weights is not None:
            d["weights"] = self.weights.tolist()
        if self.facets is not None:
            d["facets"] = self.facets.tolist()
        if self.euclid_scale is not None:
            d["euclid_scale"] = self.euclid_scale.tolist()
        return d

    def __repr__(self) -> str:
        return f"NormedSpace({self.descriptor()})"

    # structure --------------------------------------------------------------

    @property
    def S(self) -> np.ndarray:
        return np.eye(self.dim) if self.euclid_scale is None else self.euclid_scale

    @property
    def S_inv(self) -> np.ndarray:
        if "S_inv" not in self._cache:
            self._cache["S_inv"] = np.linalg.inv(self.S)
        return self._cache["S_inv"]

    @property
    def is_lp_family(self) -> bool:
        return self.kind in ("lp", "weighted-lp")

    @property
    def uniform_weight(self) -> float | None:
        """Common weight if the norm is ``c ||x||_p``; ``None`` otherwise."""
        if self.kind == "lp":
            return 1.0
        if self.kind == "weighted-lp" and np.all(self.weights == self.weights[0]):
            return float(self.weights[0])
        return None

    @property
    def is_unconditional(self) -> bool:
        if self.is_lp_family:
            return True
        return _facets_closed_under_reflections(self.facets)

    @property
    def is_euclidean(self) -> bool:
        """True when ``||x||_X = c |x|`` for the reference structure."""
        return (self.kind in ("lp", "weighted-lp") and self.p == 2.0
                and self.uniform_weight is not None and self.euclid_scale is None)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NormedSpace):
            return NotImplemented
        return self.descriptor() == other.descriptor()

    def __hash__(self):
        return hash(repr(self.descriptor()))


def _facets_closed_under_reflections(a: np.ndarray) -> bool:
    rows = {tuple(np.round(r, 12)) for r in np.vstack([a, -a])}
    n = a.shape[1]
    for j in range(n):
        for r in a:
            rr = r.copy()
            rr[j] = -rr[j]
            if tuple(np.round(rr, 12)) not in rows:
                return False
    return True


# evaluation ---------------------------------------------------------------


def _as_points(space: NormedSpace, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != space.dim:
        raise ValueError(f"dimension mismatch: expected trailing size {space.dim}, got shape {x.shape}")
    return x


def _lp_norm(y: np.ndarray, p: float) -> np.ndarray:
    a = np.abs(y)
    if math.isinf(p):
        return a.max(axis=-1)
    if p == 1.0:
        return a.sum(axis=-1)
    if p == 2.0:
        return np.sqrt(np.einsum("...i,...i->...", a, a))
    m = a.max(axis=-1)
    safe = np.where(m > 0, m, 1.0)
    return m * np.sum((a / safe[..., None]) ** p, axis=-1) ** (1.0 / p)


def norm_eval(space: NormedSpace, x) -> np.ndarray | float:
    """``||x||_X`` for a point or an array of points (last axis is the coordinate)."""
    x = _as_points(space, x)
    if space.kind == "polytope":
        out = np.abs(x @ space.facets.T).max(axis=-1)
    else:
        y = x if space.weights is None else x * space.weights
        out = _lp_norm(y, space.p)
    return float(out) if np.ndim(out) == 0 else out


def norm_eval_generic(space: NormedSpace, x) -> float:
    """Gauge of the unit ball from a membership test only (validation path).

    For the l_p kinds membership is the power-sum test ``sum |y_i|^p <= 1``,
    and the gauge is located by root finding on ``lambda``.
    """
    x = _as_points(space, x)
    if x.ndim != 1:
        return np.array([norm_eval_generic(space, xi) for xi in x])
    if space.kind == "polytope":
        return float(max(abs(float(np.dot(a, x))) for a in space.facets))
    y = x if space.weights is None else x * space.weights
    a = np.abs(y)
    top = a.max()
    if top == 0:
        return 0.0
    if math.isinf(space.p):
        return float(top)
    p = space.p
    u = a / top

    def excess(lam):
        return float(np.sum((u / lam) ** p)) - 1.0

    hi = space.dim ** (1.0 / p)
    if excess(1.0) <= 0:
        return float(top)
    if excess(hi) >= 0:
        return float(top * hi)
    lam = brentq(excess, 1.0, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(top * lam)


def euclid(space: NormedSpace, x) -> np.ndarray:
    """The reference Euclidean norm ``|S x|``."""
    x = _as_points(space, x)
    if space.euclid_scale is not None:
        x = x @ space.S.T
    return np.sqrt(np.einsum("...i,...i->...", x, x))


# sampling -----------------------------------------------------------------


def _unit_gaussian_dirs(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    if n == 1:
        return rng.choice(np.array([-1.0, 1.0]), size=count)[:, None]
    g = rng.standard_normal((count, n))
    r = np.sqrt(np.einsum("ij,ij->i", g, g))
    return g / r[:, None]


def sample_sphere(space: NormedSpace, count: int, seed: int = 0) -> np.ndarray:
    """Uniform points on the reference unit sphere ``{|S s| = 1}``."""
    if count <= 0:
        raise ValueError("count must be positive")
    parts = [_unit_gaussian_dirs(stream(seed, "sphere", i), ln, space.dim) for i, ln in batches(count)]
    u = np.concatenate(parts)
    return u if space.euclid_scale is None else u @ space.S_inv.T


def _sample_lp_ball(rng, count: int, n: int, p: float) -> np.ndarray:
    if math.isinf(p):
        return rng.uniform(-1.0, 1.0, size=(count, n))
    # generalized-Gamma coordinates with an exponential slack variable
    g = rng.gamma(1.0 / p, 1.0, size=(count, n)) ** (1.0 / p)
    s = rng.choice(np.array([-1.0, 1.0]), size=(count, n))
    y = s * g
    z = rng.exponential(1.0, size=count)
    denom = (np.sum(g ** p, axis=1) + z) ** (1.0 / p)
    return y / denom[:, None]


def sample_ball(space: NormedSpace, count: int, seed: int = 0) -> np.ndarray:
    """Uniform points in ``B_X``.

    l_p balls are sampled directly; polytopes by rejection from the
    circumscribed reference ball of radius ``I_inf(X)``.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    n = space.dim
    if space.is_lp_family:
        parts = [_sample_lp_ball(stream(seed, "ball", i), ln, n, space.p) for i, ln in batches(count)]
        x = np.concatenate(parts)
        return x if space.weights is None else x / space.weights
    R = circumradius(space)
    vol_ref = R ** n * unit_ball_volume(n) / abs(np.linalg.det(space.S))
    rate = volume(space) / vol_ref
    if rate < MIN_ACCEPTANCE:
        raise InvariantError(
            f"rejection acceptance rate {rate:.3g} below {MIN_ACCEPTANCE:g}; "
            f"volume {volume(space):.3g} vs circumscribed {vol_ref:.3g}")
    out, have, i = [], 0, 0
    per = max(256, int(1.2 * min(count, 1 << 14) / rate) + 16)
    while have < count:
        rng = stream(seed, "ball-rej", i)
        u = _unit_gaussian_dirs(rng, per, n)
        r = R * rng.uniform(0.0, 1.0, size=per) ** (1.0 / n)
        pts = u * r[:, None]
        if space.euclid_scale is not None:
            pts = pts @ space.S_inv.T
        keep = pts[norm_eval(space, pts) <= 1.0]
        out.append(keep)
        have += len(keep)
        i += 1
    return np.concatenate(out)[:count]


def ball_rule(space: NormedSpace, count: int = 64, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Fixed point set and weights for averages over ``B_X``.

    Exact product rules where the ball allows it (interval, disc, box);
    otherwise a scrambled Sobol set restricted to the ball.  Weights sum to 1.
    """
    n = space.dim
    if n == 1:
        r = 1.0 / float(norm_eval(space, np.ones(1)))
        u, w = np.polynomial.legendre.leggauss(max(2, count))
        return (r * u)[:, None], w / w.sum()
    c = space.uniform_weight
    if space.is_lp_family and space.p == 2.0 and c is not None and n == 2:
        nr = max(2, int(round(math.sqrt(count / 4.0))))
        nt = max(4, count // nr)
        ur, wr = special.roots_jacobi(nr, 0.0, 1.0)
        rad = (ur + 1.0) / 2.0
        wr = wr / wr.sum()
        th = 2.0 * np.pi * (np.arange(nt) + 0.5) / nt
        pts = np.stack([np.outer(rad, np.cos(th)).ravel(), np.outer(rad, np.sin(th)).ravel()], axis=1)
        wts = np.repeat(wr, nt) / nt
        return pts / c, wts
    if space.is_lp_family and math.isinf(space.p):
        k = max(2, int(round(count ** (1.0 / n))))
        u, w = np.polynomial.legendre.leggauss(k)
        grids = np.meshgrid(*([u] * n), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        wts = np.ones(1)
        for _ in range(n):
            wts = np.multiply.outer(wts, w / 2.0)
        pts = pts if space.weights is None else pts / space.weights
        return pts, wts.ravel()
    half = coordinate_extent(space)
    sob = qmc.Sobol(d=n, scramble=True, seed=stream(seed, "ball-rule"))
    m = 1 << max(4, int(math.ceil(math.log2(max(count, 2) / max(_fill_ratio(space), 1e-6)))))
    while True:
        pts = (2.0 * sob.random(m) - 1.0) * half
        keep = pts[norm_eval(space, pts) <= 1.0]
        if len(keep) >= count:
            keep = keep[:count]
            return keep, np.full(len(keep), 1.0 / len(keep))
        m *= 2


def _fill_ratio(space: NormedSpace) -> float:
    half = coordinate_extent(space)
    return volume(space) / float(np.prod(2.0 * half))


def coordinate_extent(space: NormedSpace) -> np.ndarray:
    """Largest ``|x_i|`` over ``B_X`` for each coordinate."""
    n = space.dim
    if space.is_lp_family:
        w = np.ones(n) if space.weights is None else space.weights
        return 1.0 / w
    v = vertices(space)
    return np.abs(v).max(axis=0)


def sphere_rule(space: NormedSpace, count: int = 64, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Points and weights for averages over the reference sphere."""
    n = space.dim
    if n == 1:
        s0 = 1.0 / float(space.S[0, 0])
        return np.array([[s0], [-s0]]), np.array([0.5, 0.5])
    if n == 2:
        th = 2.0 * np.pi * np.arange(count) / count
        u = np.stack([np.cos(th), np.sin(th)], axis=1)
        pts = u if space.euclid_scale is None else u @ space.S_inv.T
        return pts, np.full(count, 1.0 / count)
    pts = sample_sphere(space, count, seed)
    return pts, np.full(count, 1.0 / count)


# geometry -----------------------------------------------------------------


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def lp_ball_volume(n: int, p: float) -> float:
    if math.isinf(p):
        return 2.0 ** n
    return math.exp(n * math.log(2.0) + n * special.gammaln(1.0 + 1.0 / p) - special.gammaln(1.0 + n / p))


def vertices(space: NormedSpace) -> np.ndarray:
    """Vertices of a polytopal unit ball (polytope, l_1, l_inf kinds)."""
    if "vertices" in space._cache:
        return space._cache["vertices"]
    n = space.dim
    if space.kind == "polytope":
        a = space.facets
        if n == 1:
            r = 1.0 / np.abs(a).max()
            v = np.array([[r], [-r]])
        else:
            hs = np.vstack([np.hstack([a, -np.ones((len(a), 1))]),
                            np.hstack([-a, -np.ones((len(a), 1))])])
            v = HalfspaceIntersection(hs, np.zeros(n)).intersections
            v = np.unique(np.round(v, 12), axis=0)
    elif space.is_lp_family and space.p == 1.0:
        v = np.vstack([np.eye(n), -np.eye(n)])
        if space.weights is not None:
            v = v / space.weights
    elif space.is_lp_family and math.isinf(space.p):
        if n > 20:
            raise ValueError("vertex enumeration of the cube is limited to n <= 20")
        v = np.array(np.meshgrid(*([[-1.0, 1.0]] * n), indexing="ij")).reshape(n, -1).T
        if space.weights is not None:
            v = v / space.weights
    else:
        raise ValueError("unit ball is not a polytope")
    space._cache["vertices"] = v
    return v


def has_vertices(space: NormedSpace) -> bool:
    return space.kind == "polytope" or (space.is_lp_family and space.p in (1.0, math.inf))


def volume(space: NormedSpace) -> float:
    """Lebesgue volume of ``B_X`` (exact for every supported kind)."""
    n = space.dim
    if space.is_lp_family:
        v = lp_ball_volume(n, space.p)
        return v if space.weights is None else v / float(np.prod(space.weights))
    if n == 1:
        return 2.0 / float(np.abs(space.facets).max())
    return float(ConvexHull(vertices(space)).volume)


def sphere_ascent(ratio: Callable[[np.ndarray], np.ndarray], n: int, starts: np.ndarray,
                  iters: int = 400, tol: float = 1e-10) -> tuple[float, np.ndarray]:
    """Maximize a degree-0 homogeneous ``ratio`` over the unit sphere of R^n.

    Projected ascent with numerical gradients and step halving, run from
    every row of ``starts``.  Returns the best value and its argument.
    """
    best_v, best_u = -np.inf, None
    eye = np.eye(n)
    for u in starts:
        u = u / np.linalg.norm(u)
        v = float(ratio(u[None])[0])
        step = 0.1
        for _ in range(iters):
            d = 1e-7
            probe = np.vstack([u + d * eye, u - d * eye])
            vals = ratio(probe)
            g = (vals[:n] - vals[n:]) / (2 * d)
            g = g - np.dot(g, u) * u
            gn = np.linalg.norm(g)
            if gn < tol or step < 1e-13:
                break
            cand = u + step * g / gn
            cand /= np.linalg.norm(cand)
            cv = float(ratio(cand[None])[0])
            if cv > v:
                u, v = cand, cv
                step *= 1.5
            else:
                step *= 0.5
        if v > best_v:
            best_v, best_u = v, u
    return best_v, best_u


def _ratio_max(space: NormedSpace, ratio, starts: int, seed: int, dense: int = 10 ** 6) -> float:
    n = space.dim
    rng = stream(seed, "ascent")
    cand = _unit_gaussian_dirs(rng, dense if n <= 4 else 20000, n)
    vals = ratio(cand)
    order = np.argsort(vals)[::-1][: max(1, starts // 2)]
    init = np.vstack([cand[order], _unit_gaussian_dirs(rng, max(1, starts - len(order)), n)])
    v, _ = sphere_ascent(ratio, n, init)
    return max(v, float(vals.max()))


def circumradius(space: NormedSpace, starts: int = 64, seed: int = 0) -> float:
    """``I_inf(X) = sup over B_X of |x|`` in the reference structure."""
    if "I_inf" in space._cache:
        return space._cache["I_inf"]
    n = space.dim
    if has_vertices(space) and (space.kind == "polytope" or n <= 16):
        r = float(euclid(space, vertices(space)).max())
    elif space.is_lp_family and space.euclid_scale is None:
        w = np.ones(n) if space.weights is None else space.weights
        p = space.p
        if p <= 2.0:
            r = float((1.0 / w).max())
        else:
            rr = 2.0 * p / (p - 2.0) if not math.isinf(p) else 2.0
            r = float(np.sum((1.0 / w) ** rr) ** (1.0 / rr))
    elif n == 1:
        r = float(space.S[0, 0]) / float(norm_eval(space, np.ones(1)))
    else:
        r = _ratio_max(space, lambda v: euclid(space, v) / norm_eval(space, v), starts, seed)
    space._cache["I_inf"] = r
    return r


def invariant_b(space: NormedSpace, starts: int = 64, seed: int = 0) -> InvariantEstimate:
    """``b(X) = sup over the reference sphere of ||s||_X``."""
    n = space.dim
    if space.kind == "polytope":
        v = float(np.linalg.norm(space.facets @ space.S_inv, axis=1).max())
        return InvariantEstimate(v, 0.0, "closed-form", 0, seed)
    if n == 1:
        v = float(norm_eval(space, np.ones(1))) / float(space.S[0, 0])
        return InvariantEstimate(v, 0.0, "closed-form", 0, seed)
    if space.euclid_scale is None:
        w = np.ones(n) if space.weights is None else space.weights
        p = space.p
        if p >= 2.0:
            v = float(w.max())
        else:
            r = 2.0 * p / (2.0 - p)
            v = float(np.sum(w ** r) ** (1.0 / r))
        return InvariantEstimate(v, 0.0, "closed-form", 0, seed)
    Si = space.S_inv

    def ratio(u):
        return norm_eval(space, u @ Si.T) / np.linalg.norm(u, axis=-1)

    v = _ratio_max(space, ratio, starts, seed)
    return InvariantEstimate(v, 0.0, "quadrature", 0, seed)


def _mc_power_mean(r: np.ndarray, p: float) -> tuple[float, float]:
    """``(mean r^p)^(1/p)`` and its delta-method standard error."""
    rp = r ** p
    m = float(np.mean(rp))
    if m == 0:
        return 0.0, 0.0
    se_m = float(np.std(rp, ddof=1)) / math.sqrt(len(r))
    val = m ** (1.0 / p)
    return val, val * se_m / (p * m)


def invariant_M_p(space: NormedSpace, p: float = 1.0, count: int = 10 ** 5, seed: int = 0) -> InvariantEstimate:
    """``(avg over S^{n-1} of ||s||_X^p)^(1/p)``; ``p = inf`` gives ``b(X)``."""
    if math.isinf(p):
        return invariant_b(space, seed=seed)
    if p < 1:
        raise ValueError("p must be >= 1")
    n = space.dim
    if n == 1:
        v = float(norm_eval(space, np.ones(1))) / float(space.S[0, 0])
        return InvariantEstimate(v, 0.0, "closed-form", 0, seed)
    if space.is_euclidean:
        return InvariantEstimate(space.uniform_weight, 0.0, "closed-form", 0, seed)
    r = norm_eval(space, sample_sphere(space, count, seed))
    val, se = _mc_power_mean(r, p)
    return InvariantEstimate(val, se, "monte-carlo", count, seed)


def invariant_I_q(space: NormedSpace, q: float = 2.0, count: int = 10 ** 5, seed: int = 0) -> InvariantEstimate:
    """``(avg over B_X of |x|^q)^(1/q)``; ``q = inf`` gives the circumradius."""
    if not q > 0:
        raise ValueError("q must be positive")
    n = space.dim
    if math.isinf(q):
        return InvariantEstimate(circumradius(space, seed=seed), 0.0, "closed-form", 0, seed)
    if n == 1:
        r = circumradius(space)
        return InvariantEstimate(r * (1.0 / (q + 1.0)) ** (1.0 / q), 0.0, "closed-form", 0, seed)
    if space.is_euclidean:
        v = (n / (n + q)) ** (1.0 / q) / space.uniform_weight
        return InvariantEstimate(v, 0.0, "closed-form", 0, seed)
    r = euclid(space, sample_ball(space, count, seed))
    val, se = _mc_power_mean(r, q)
    return InvariantEstimate(val, se, "monte-carlo", count, seed)


class GaussianMoment(NamedTuple):
    monte_carlo: InvariantEstimate
    closed_form: float
    closed_form_std_error: float

    @property
    def z_score(self) -> float:
        se = math.hypot(self.monte_carlo.std_error, self.closed_form_std_error)
        d = abs(self.monte_carlo.value - self.closed_form)
        return 0.0 if d == 0 else (d / se if se > 0 else math.inf)


def gaussian_norm_moment(space: NormedSpace, p: float = 1.0, count: int = 10 ** 5, seed: int = 0) -> GaussianMoment:
    """``E ||G||_X^p`` for the standard Gaussian of the reference structure.

    Returns the direct Monte Carlo moment and the polar-coordinate formula
    ``2^{p/2} Gamma((n+p)/2) / Gamma(n/2) * M_p(X)^p`` (with its own error,
    since ``M_p`` is itself estimated from an independent stream).
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    n = space.dim
    parts = []
    for i, ln in batches(count):
        g = stream(seed, "gauss", i).standard_normal((ln, n))
        if space.euclid_scale is not None:
            g = g @ space.S_inv.T
        parts.append(norm_eval(space, g) ** p)
    vals = np.concatenate(parts)
    mc = InvariantEstimate(float(np.mean(vals)), float(np.std(vals, ddof=1)) / math.sqrt(count),
                           "monte-carlo", count, seed)
    radial = math.exp(0.5 * p * math.log(2.0) + special.gammaln((n + p) / 2.0) - special.gammaln(n / 2.0))
    mp = invariant_M_p(space, p, count, seed + 1)
    cf = radial * mp.value ** p
    cf_se = radial * p * mp.value ** (p - 1) * mp.std_error
    return GaussianMoment(mc, cf, cf_se)


@dataclass
class LMSReport:
    p_list: list
    ratios: list
    band: float
    M: InvariantEstimate
    b: InvariantEstimate

    @property
    def within_band(self) -> bool:
        return all(1.0 / self.band <= r <= self.band for r in self.ratios)

    def to_dict(self) -> dict:
        return {"p": self.p_list, "ratios": self.ratios, "band": [1.0 / self.band, self.band],
                "within_band": self.within_band}


def check_lms_ratio(space: NormedSpace, p_list: Sequence[float], count: int = 10 ** 5, seed: int = 0,
                    band: float = C_STAR) -> LMSReport:
    """``M_p / (M + sqrt(p/(n+p)) b)`` over ``p_list``."""
    n = space.dim
    M = invariant_M_p(space, 1.0, count, seed)
    b = invariant_b(space, seed=seed)
    ratios = []
    for p in p_list:
        if p < 1:
            raise ValueError("entries of p_list must be >= 1")
        mp = invariant_M_p(space, p, count, seed)
        ratios.append(mp.value / (M.value + math.sqrt(p / (n + p)) * b.value))
    return LMSReport(list(p_list), ratios, band, M, b)


@dataclass
class UVReport:
    estimate: InvariantEstimate
    bound: float

    @property
    def holds(self) -> bool:
        return self.estimate.value + 3.0 * self.estimate.std_error >= self.bound * (1.0 - 1e-12)

    def to_dict(self) -> dict:
        return {"estimate": self.estimate.to_dict(), "bound": self.bound, "holds": self.holds}


def uv_moment(U: NormedSpace, V: NormedSpace, q: float = 2.0, count: int = 10 ** 5, seed: int = 0) -> UVReport:
    """``(avg over B_U of ||u||_V^q)^(1/q)`` against ``(n/(n+q))^(1/q) (|B_U|/|B_V|)^(1/n)``."""
    if U.dim != V.dim:
        raise ValueError("U and V must have the same dimension")
    if not q > 0:
        raise ValueError("q must be positive")
    n = U.dim
    bound = (n / (n + q)) ** (1.0 / q) * (volume(U) / volume(V)) ** (1.0 / n)
    if U == V:
        est = InvariantEstimate((n / (n + q)) ** (1.0 / q), 0.0, "closed-form", 0, seed)
    else:
        r = norm_eval(V, sample_ball(U, count, seed))
        val, se = _mc_power_mean(r, q)
        est = InvariantEstimate(val, se, "monte-carlo", count, seed)
    return UVReport(est, bound)


@dataclass
class ProductReport:
    I_q: InvariantEstimate
    M_p: InvariantEstimate
    bound: float

    @property
    def product(self) -> float:
        return self.I_q.value * self.M_p.value

    @property
    def product_se(self) -> float:
        return math.hypot(self.I_q.std_error * self.M_p.value, self.M_p.std_error * self.I_q.value)

    @property
    def exact(self) -> bool:
        return self.I_q.method == "closed-form" and self.M_p.method == "closed-form"

    @property
    def holds(self) -> bool:
        if self.exact:
            return self.product >= self.bound * (1.0 - 1e-12)
        return self.product + 3.0 * self.product_se >= self.bound

    def to_dict(self) -> dict:
        return {"I_q": self.I_q.to_dict(), "M_p": self.M_p.to_dict(), "product": self.product,
                "product_se": self.product_se, "bound": self.bound, "holds": self.holds}


def product_lower_bound(space: NormedSpace, p: float = 1.0, q: float = 2.0, count: int = 10 ** 5,
                        seed: int = 0) -> ProductReport:
    """Check ``I_q(X) M_p(X) >= (n/(n+q))^(1/q)``."""
    if not (p > 0 and q > 0):
        raise ValueError("p and q must be positive")
    n = space.dim
    iq = invariant_I_q(space, q, count, seed)
    mp = invariant_M_p(space, max(p, 1.0), count, seed + 1) if p >= 1 else _M_small_p(space, p, count, seed + 1)
    return ProductReport(iq, mp, (n / (n + q)) ** (1.0 / q))


def _M_small_p(space, p, count, seed):
    if space.is_euclidean or space.dim == 1:
        return invariant_M_p(space, 1.0, count, seed)
    r = norm_eval(space, sample_sphere(space, count, seed))
    val, se = _mc_power_mean(r, p)
    return InvariantEstimate(val, se, "monte-carlo", count, seed)


class Isotropic(NamedTuple):
    space: NormedSpace
    L: float
    report: dict


def _lp_second_moment(n: int, p: float) -> float:
    """``avg over B_p^n of x_1^2``."""
    if math.isinf(p):
        return 1.0 / 3.0
    return math.exp(special.gammaln(3.0 / p) - special.gammaln(1.0 / p)
                    + special.gammaln(1.0 + n / p) - special.gammaln(1.0 + (n + 2.0) / p))


def isotropic_normalize(space: NormedSpace, count: int = 10 ** 5, seed: int = 0) -> Isotropic:
    """Linear image of ``B_X`` with unit volume and isotropic second moments.

    Returns the new space (identity reference structure), ``L_X`` and a
    report with the direction-spread check.
    """
    n = space.dim
    report: dict = {"input": space.descriptor()}
    if space.is_lp_family:
        # the coordinate symmetries make B_p isotropic up to a scalar
        lam = lp_ball_volume(n, space.p) ** (-1.0 / n)
        new = NormedSpace.weighted_lp(np.full(n, 1.0 / lam), space.p)
        L = lam * math.sqrt(_lp_second_moment(n, space.p))
        report.update(method="closed-form", volume=1.0, directional_spread=0.0)
        return Isotropic(new, L, report)
    x = sample_ball(space, count, seed)
    cov = x.T @ x / len(x)
    evals, evecs = np.linalg.eigh(cov)
    half = evecs @ np.diag(np.sqrt(evals)) @ evecs.T
    lam = (volume(space) * np.prod(evals) ** -0.5) ** (-1.0 / n)
    # T = lam * cov^{-1/2};  facets transform by T^{-T} = half / lam
    new = NormedSpace.polytope(space.facets @ half / lam)
    c = volume(new) ** (-1.0 / n)
    new = NormedSpace.polytope(new.facets / c)
    if not space.is_unconditional:
        report["preprocessing"] = "covariance diagonalization applied (input not unconditional)"
    y = sample_ball(new, count, seed + 1)
    dirs = sample_sphere(NormedSpace.lp(n), 32, seed + 2)
    proj2 = (y @ dirs.T) ** 2
    m = proj2.mean(axis=0)
    se = proj2.std(axis=0, ddof=1) / math.sqrt(len(y))
    vol_new = volume(new)
    L = math.sqrt(float(np.mean(np.sum(y * y, axis=1))) / n * vol_new ** (-2.0 / n))
    spread = float((m.max() - m.min()) / m.mean())
    zmax = float(np.max(np.abs(m - m.mean()) / se))
    report.update(method="monte-carlo", volume=vol_new, directional_spread=spread,
                  max_direction_deviation_sigma=zmax, samples=count, seed=seed)
    return Isotropic(new, L, report)
