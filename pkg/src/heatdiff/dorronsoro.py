"""Multiscale affine approximation by heat Taylor polynomials.

The central quantity is the Carleson functional

    C(f)^q = int_0^inf int_x mean_{z in B_X} ||f(x + t z) - T_x(H_{gamma t^2} f)(x + t z)||_Y^q dx dt / t^{q+1}

where ``T_x g(y) = g(x) + (y - x) . grad g(x)``.  For each ``t`` the
integrand over ``x`` is a sum of Fourier multipliers applied to ``f``: the
translate ``f(. + t z)`` has multiplier ``exp(i t z . xi)``.  Ball averages
use one fixed point set of ``B_X`` (see :func:`heatdiff.spaces.ball_rule`)
scaled by ``t``.  The grid coordinates are the Hilbertian structure, so the
space ``X`` must be given without a separate Euclidean scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .fields import AdmissibilityError, GridField, interpolate, lipschitz_constant
from .heat import LIP_C, AffineMap, Spectrum, evolute_lip_threshold, evolve, field_gradient, max_time
from .lps import FunctionalReport, ScaleGrid, scale_integral
from .spaces import (InvariantError, NormedSpace, _lp_norm, ball_rule, circumradius, has_vertices,
                     invariant_I_q, invariant_M_p, norm_eval, sample_ball, sphere_rule, vertices)
from .streams import log_n, pmap, tree_sum

# the universal constant c < 1/4 in the top scale T is unspecified; the largest admissible value is used
T_CONSTANT = 0.25
Z_BATCH = 8


@dataclass
class DorroConfig:
    """Parameters of the Carleson and local functionals.

    ``gamma`` is a positive number or ``"auto"`` for ``I_q(X) / (sqrt(n) M(X))``.
    ``x_stride`` subsamples the ``x`` grid; ``ball_samples`` is the size of
    the fixed point set used for every ball average.
    """

    X: NormedSpace
    q: float = 2.0
    y_p: float = 2.0
    gamma: float | str = "auto"
    x_stride: int = 1
    scale_grid: ScaleGrid | None = None
    ball_samples: int = 64
    per_decade: int = 48
    kappa: float = 1.0
    m_q: float = 1.0
    seed: int = 0
    threads: int = 1
    mc_count: int = 10 ** 5

    def __post_init__(self):
        if self.q < 2:
            raise ValueError("q must be at least 2")
        if self.X.euclid_scale is not None:
            raise ValueError("give X in grid coordinates (no separate Euclidean scale)")
        if not isinstance(self.gamma, str) and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if isinstance(self.gamma, str) and self.gamma != "auto":
            raise ValueError("gamma must be a positive number or 'auto'")
        if self.x_stride < 1:
            raise ValueError("x_stride must be positive")

    @property
    def n(self) -> int:
        return self.X.dim

    def gamma_value(self) -> float:
        if self.gamma == "auto":
            return gamma_of_space(self.X, self.q, self.mc_count, self.seed)
        return float(self.gamma)

    def to_dict(self) -> dict:
        return {"X": self.X.descriptor(), "q": self.q, "y_p": self.y_p, "gamma": self.gamma,
                "x_stride": self.x_stride, "ball_samples": self.ball_samples,
                "scale_grid": None if self.scale_grid is None else self.scale_grid.to_dict(),
                "kappa": self.kappa, "m_q": self.m_q, "seed": self.seed}


def gamma_of_space(X: NormedSpace, q: float = 2.0, count: int = 10 ** 5, seed: int = 0) -> float:
    """``I_q(X) / (sqrt(n) M(X))``."""
    I = invariant_I_q(X, q, count, seed).value
    M = invariant_M_p(X, 1.0, count, seed).value
    return I / (math.sqrt(X.dim) * M)


def K_constant(q: float, n: int, X: NormedSpace, m_q: float = 1.0, kappa: float = 1.0,
               count: int = 10 ** 5, seed: int = 0) -> float:
    """``kappa n^{1/4} m_q sqrt(I_q(X) M(X))``."""
    if X.dim != n:
        raise ValueError("space dimension does not match n")
    if not (q > 0 and m_q > 0 and kappa > 0):
        raise ValueError("q, m_q and kappa must be positive")
    Ie = invariant_I_q(X, q, count, seed)
    Me = invariant_M_p(X, 1.0, count, seed)
    prod = Ie.value * Me.value
    slack = 4.0 * (Ie.std_error * Me.value + Me.std_error * Ie.value)
    if prod + slack < 0.5:
        raise InvariantError(f"I_q(X) M(X) = {prod:.6g} is below 1/2; the invariants are inconsistent")
    return kappa * n ** 0.25 * m_q * math.sqrt(prod)


def top_scale(X: NormedSpace, q: float = 2.0, c: float = T_CONSTANT, count: int = 10 ** 5, seed: int = 0) -> float:
    """``c / (n^{5/4} sqrt(I_q(X) M(X) log n))`` (with ``log 1 = 1``); checked against ``1/(2n)``."""
    n = X.dim
    prod = invariant_I_q(X, q, count, seed).value * invariant_M_p(X, 1.0, count, seed).value
    T = c / (n ** 1.25 * math.sqrt(prod * log_n(n)))
    if T > 1.0 / (2 * n) * (1 + 1e-12):
        raise InvariantError(f"top scale {T:.6g} exceeds 1/(2n) = {1.0 / (2 * n):.6g}")
    return T


# Carleson functional --------------------------------------------------------


def default_scale_grid(f: GridField, X: NormedSpace, gamma: float, per_decade: int = 48) -> ScaleGrid:
    """Scales ``t`` from ``h/2`` up to the largest admissible one.

    The top scale keeps ``gamma t^2`` within the heat range of the box and
    the translates ``t B_X`` within half the box.
    """
    half = 0.5 * (f.box[1] - f.box[0])
    t_heat = math.sqrt(max_time(f, "heat") / gamma)
    t_shift = half / circumradius(X)
    return ScaleGrid.per_decade(0.5 * f.h, min(t_heat, t_shift), per_decade)


def _check_scales(f: GridField, X: NormedSpace, gamma: float, grid: ScaleGrid) -> None:
    top = max_time(f, "heat")
    if gamma * grid.t_max ** 2 > top * (1 + 1e-12):
        raise AdmissibilityError(
            f"heat time gamma t^2 = {gamma * grid.t_max ** 2:.6g} at the top scale exceeds the admissible "
            f"{top:.6g} for box [{f.box[0]:g}, {f.box[1]:g}]")
    half = 0.5 * (f.box[1] - f.box[0])
    if grid.t_max * circumradius(X) > half * (1 + 1e-12):
        raise AdmissibilityError(f"top scale {grid.t_max:.6g} moves balls by more than half the box")


class CarlesonTerms(NamedTuple):
    """Per-scale integrands ``t^{-q} int mean ||.||^q dx`` of the total, J1 and J2."""

    times: np.ndarray
    total: np.ndarray
    j1: np.ndarray | None
    j2: np.ndarray | None


def _norm_q(arr: np.ndarray, q: float, y_p: float, n: int, stride: int, cell: float) -> np.ndarray:
    """``sum_x ||arr[..., :, x]||_Y^q * cell`` over the last ``n`` axes (``(..., m) + grid``)."""
    if stride > 1:
        arr = arr[(Ellipsis,) + (slice(None, None, stride),) * n]
        cell = cell * stride ** n
    r = _lp_norm(np.moveaxis(arr, -n - 1, -1), y_p)
    return np.sum(r ** q, axis=tuple(range(r.ndim - n, r.ndim))) * cell


def carleson_terms(f: GridField, cfg: DorroConfig, split: bool = False) -> CarlesonTerms:
    if f.n != cfg.n:
        raise ValueError("field dimension does not match the space")
    gamma = cfg.gamma_value()
    grid = cfg.scale_grid or default_scale_grid(f, cfg.X, gamma, cfg.per_decade)
    _check_scales(f, cfg.X, gamma, grid)
    sp = Spectrum(f)
    zs, zw = ball_rule(cfg.X, cfg.ball_samples, cfg.seed)
    n, q, y_p, stride = f.n, cfg.q, cfg.y_p, cfg.x_stride
    cell = sp.h ** n
    F = sp.F

    def one(t):
        HF = F * np.exp(-gamma * t * t * sp.k2)
        H = sp.inverse(HF, crop=False)
        G = [sp.inverse(1j * sp.k[j] * HF, crop=False) for j in range(n)]
        acc_tot = []
        acc_j1 = []
        for b in range(0, len(zs), Z_BATCH):
            z = zs[b:b + Z_BATCH]
            w = zw[b:b + Z_BATCH]
            arg = sum(z[:, j].reshape((-1,) + (1,) * n) * sp.k[j] for j in range(n))
            ph = np.exp(1j * t * arg)[:, None]
            lin = t * sum(z[:, j].reshape((-1, 1) + (1,) * n) * G[j][None] for j in range(n))
            S = sp.inverse(F[None] * ph, crop=False)
            acc_tot.append(float(w @ _norm_q(S - H[None] - lin, q, y_p, n, stride, cell)))
            if split:
                Hs = sp.inverse(HF[None] * ph, crop=False)
                acc_j1.append(float(w @ _norm_q(Hs - H[None] - lin, q, y_p, n, stride, cell)))
        scale = t ** -q
        tot = tree_sum(acc_tot) * scale
        if not split:
            return tot, 0.0, 0.0
        j2 = float(_norm_q(sp.inverse(F - HF, crop=False), q, y_p, n, stride, cell)) * scale
        return tot, tree_sum(acc_j1) * scale, j2

    res = np.array(pmap(one, list(grid.nodes), cfg.threads))
    if split:
        return CarlesonTerms(grid.nodes, res[:, 0], res[:, 1], res[:, 2])
    return CarlesonTerms(grid.nodes, res[:, 0], None, None)


def _grid_of(f: GridField, cfg: DorroConfig) -> ScaleGrid:
    return cfg.scale_grid or default_scale_grid(f, cfg.X, cfg.gamma_value(), cfg.per_decade)


def carleson_bound(f: GridField, cfg: DorroConfig) -> tuple[float, float, float, float]:
    """``K |supp f|^{1/q} Lip(f)`` and its three factors."""
    from .fields import support_volume

    K = K_constant(cfg.q, cfg.n, cfg.X, cfg.m_q, cfg.kappa, cfg.mc_count, cfg.seed)
    vol = support_volume(f)
    lip = lipschitz_constant(f, cfg.X, cfg.y_p)
    return K * vol ** (1.0 / cfg.q) * lip, K, vol, lip


def _integrate(I: np.ndarray, grid: ScaleGrid, q: float):
    # small t: |f - T| ~ t^2 so the integrand ~ t^q; large t: it decays at least like t^{-q}
    return scale_integral(I, grid, q, q)


def carleson_functional(f: GridField, cfg: DorroConfig, with_bound: bool = True) -> FunctionalReport:
    """Carleson functional of ``f`` with per-scale contributions in ``extras['per_scale']``."""
    grid = _grid_of(f, cfg)
    terms = carleson_terms(f, cfg)
    si = _integrate(terms.total, grid, cfg.q)
    q = cfg.q
    val = si.total ** (1.0 / q)
    err = 0.0 if si.total == 0 else si.error / (q * si.total ** ((q - 1.0) / q))
    extras = {"gamma": cfg.gamma_value(), "per_scale": [[float(t), float(v)] for t, v in zip(terms.times, terms.total)],
              "tail_fraction": si.tail / si.total if si.total else 0.0, "q": q}
    bound = None
    if with_bound:
        bound, K, vol, lip = carleson_bound(f, cfg)
        extras.update({"K": K, "support_volume": vol, "lipschitz": lip})
    return FunctionalReport("carleson", float(val), float(err), grid, bound, None, extras)


class JSplit(NamedTuple):
    total: float
    J1: float
    J2: float

    @property
    def triangle_holds(self) -> bool:
        return self.total <= (self.J1 + self.J2) * (1 + 1e-9)


def j_split(f: GridField, cfg: DorroConfig) -> JSplit:
    """Total, evolute-to-Taylor part ``J1`` and function-to-evolute part ``J2``."""
    grid = _grid_of(f, cfg)
    terms = carleson_terms(f, cfg, split=True)
    q = cfg.q
    vals = [float(_integrate(I, grid, q).total ** (1.0 / q)) for I in (terms.total, terms.j1, terms.j2)]
    out = JSplit(*vals)
    if not out.triangle_holds:
        raise InvariantError(f"triangle inequality fails: {out.total:.12g} > {out.J1:.12g} + {out.J2:.12g}")
    return out


# gamma of a function -------------------------------------------------------------


class GammaEstimate(NamedTuple):
    value: float
    std_error: float
    method: str


def _directional_lq(grad: np.ndarray, dirs: np.ndarray, q: float, y_p: float, cell: float) -> np.ndarray:
    """``||d . grad f||_q^q`` for each direction ``d`` (rows of ``dirs``)."""
    m, n = grad.shape[-2:]
    g = grad.reshape(-1, m, n)
    out = []
    for b in range(0, len(dirs), 32):
        d = dirs[b:b + 32]
        v = np.einsum("pmn,kn->kpm", g, d)
        out.append(np.sum(_lp_norm(v, y_p) ** q, axis=1) * cell)
    return np.concatenate(out)


def optimal_gamma(f: GridField, cfg: DorroConfig, count: int = 256, method: str = "rule") -> GammaEstimate:
    """``gamma(f) = n^{-1/2} (mean_{B_X} |x|^q ||x . grad f||_q^q)^{1/q} / mean_S ||sigma . grad f||_q``.

    ``method='rule'`` uses the fixed ball rule, ``'mc'`` independent samples
    of ``B_X`` and reports a delta-method standard error.
    """
    if f.n != cfg.n:
        raise ValueError("field dimension does not match the space")
    q, y_p = cfg.q, cfg.y_p
    grad = field_gradient(f)
    cell = f.cell_volume
    sp_pts, sp_w = sphere_rule(NormedSpace.lp(f.n), max(count, 64), cfg.seed)
    den = float(sp_w @ (_directional_lq(grad, sp_pts, q, y_p, cell) ** (1.0 / q)))
    if not den > 0:
        raise ValueError("gamma(f) needs a non-constant field")
    if method == "rule":
        pts, w = ball_rule(cfg.X, count, cfg.seed)
        vals = np.linalg.norm(pts, axis=1) ** q * _directional_lq(grad, pts, q, y_p, cell)
        mean, se = float(w @ vals), 0.0
    elif method == "mc":
        pts = sample_ball(cfg.X, count, cfg.seed)
        vals = np.linalg.norm(pts, axis=1) ** q * _directional_lq(grad, pts, q, y_p, cell)
        mean = float(vals.mean())
        se = float(vals.std(ddof=1)) / math.sqrt(len(vals))
    else:
        raise ValueError("method must be 'rule' or 'mc'")
    val = mean ** (1.0 / q) / (math.sqrt(f.n) * den)
    return GammaEstimate(val, val * se / (q * mean) if mean > 0 else 0.0, method)


# extension and local functional ---------------------------------------------------


def extend_to_global(f: GridField, X: NormedSpace, slack: float = 0.05) -> GridField:
    """``F = f - f(0)`` on ``B_X`` and ``max(0, n+1-n||x||_X) (f(x/||x||_X) - f(0))`` outside.

    Checks that ``Lip(F) <= (n + 2)(1 + slack)`` (on the grid) and that
    ``F`` vanishes outside ``(1 + 1/n) B_X``.  Returns a field on the same box.
    Fields from :func:`heatdiff.fields.make_local_field` are evaluated from
    their closed form; other fields are interpolated.
    """
    if X.dim != f.n:
        raise ValueError("space dimension does not match the field")
    n = f.n
    pts = f.points()
    r = np.asarray(norm_eval(X, pts), dtype=float)
    safe = np.where(r > 0, r, 1.0)
    outside = r > 1.0
    y = np.where(outside[..., None], pts / safe[..., None], pts)
    if "local" in f.meta:
        # closed-form profile: evaluate exactly instead of interpolating across kinks
        from .fields import profile_eval

        def ev(p):
            return profile_eval(f.meta["local"], X, p, f.m)
    else:
        def ev(p):
            return interpolate(f.values, f.box, p)
    f0 = ev(np.zeros((1, n)))[0]
    base = ev(y) - f0
    factor = np.where(outside, np.maximum(0.0, n + 1.0 - n * r), 1.0)
    vals = factor[..., None] * base
    if np.any(vals[r > 1.0 + 1.0 / n] != 0):
        raise InvariantError("extension does not vanish outside (1 + 1/n) B_X")
    F = GridField(vals, f.box, {"extension_of": dict(f.meta), "space": X.descriptor()})
    lip_in = lipschitz_constant(f, X) if np.any(f.values) else 0.0
    lip = lipschitz_constant(F, X)
    bound = (n + 2.0) * max(1.0, lip_in) * (1 + slack)
    if lip > bound:
        raise InvariantError(f"Lip(F) = {lip:.6g} exceeds (n+2) Lip(f) = {bound:.6g}")
    return F


def lip_batch(A: np.ndarray, X: NormedSpace, y_p: float = 2.0) -> np.ndarray:
    """``sup_{||z||_X = 1} ||A_k z||_Y`` for a stack ``A`` of shape ``(k, m, n)``."""
    k, m, n = A.shape
    if has_vertices(X) and (X.kind == "polytope" or n <= 16):
        V = vertices(X)
        return _lp_norm(np.einsum("kmn,vn->kvm", A, V), y_p).max(axis=1)
    if m == 1 and X.is_lp_family:
        a = A[:, 0, :] if X.weights is None else A[:, 0, :] / X.weights
        pd = 1.0 if math.isinf(X.p) else (math.inf if X.p == 1.0 else X.p / (X.p - 1.0))
        return _lp_norm(a, pd)
    if X.is_euclidean and y_p == 2.0:
        return np.linalg.norm(A, ord=2, axis=(1, 2)) / X.uniform_weight
    from .heat import affine_lip

    return np.array([affine_lip(AffineMap(np.zeros(n), np.zeros(m), a), X, y_p) for a in A])


def ball_interior_points(X: NormedSpace, per_axis: int, shrink: float) -> np.ndarray:
    """Lattice points of ``shrink * B_X`` (``per_axis`` points per axis of its bounding box)."""
    from .spaces import coordinate_extent

    ext = coordinate_extent(X) * shrink
    axes = [np.linspace(-e, e, per_axis) for e in ext]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, X.dim)
    return pts[np.asarray(norm_eval(X, pts)) <= shrink * (1 + 1e-12)]


@dataclass
class CellStats:
    """Errors of the heat-Taylor candidate on the balls ``x + rho B_X`` for one ``rho``."""

    rho: float
    x: np.ndarray
    value: np.ndarray
    linear: np.ndarray
    lq_error: np.ndarray
    linf_error: np.ndarray
    lip: np.ndarray


def candidate_cells(F: GridField, X: NormedSpace, xs: np.ndarray, rho: float, gamma: float, q: float = 2.0,
                    y_p: float = 2.0, ball_samples: int = 64, seed: int = 0) -> CellStats:
    """Heat-Taylor candidates ``T_x(H_{gamma rho^2} F)`` and their normalized ball errors."""
    e = evolve(F, gamma * rho * rho, "heat", True)
    c = interpolate(e.values, F.box, xs)
    g = e.gradient.reshape(e.gradient.shape[:-2] + (-1,))
    A = interpolate(g, F.box, xs).reshape(len(xs), F.m, F.n)
    zs, zw = ball_rule(X, ball_samples, seed)
    ys = xs[:, None, :] + rho * zs[None, :, :]
    fy = interpolate(F.values, F.box, ys)
    lam = c[:, None, :] + rho * np.einsum("kmn,bn->kbm", A, zs)
    d = _lp_norm(fy - lam, y_p)
    lq = (d ** q @ zw) ** (1.0 / q) / rho
    linf = d.max(axis=1) / rho
    return CellStats(rho, xs, c, A, lq, linf, lip_batch(A, X, y_p))


def lsq_candidates(F: GridField, X: NormedSpace, xs: np.ndarray, rho: float, q: float = 2.0, y_p: float = 2.0,
                   ball_samples: int = 64, seed: int = 0) -> CellStats:
    """Weighted least-squares affine fits on each ball (an optional tighter candidate)."""
    zs, zw = ball_rule(X, ball_samples, seed)
    ys = xs[:, None, :] + rho * zs[None, :, :]
    fy = interpolate(F.values, F.box, ys)
    D = np.concatenate([np.ones((len(zs), 1)), rho * zs], axis=1)
    sw = np.sqrt(zw)[:, None]
    P = np.linalg.pinv(D * sw)
    coef = np.einsum("jb,kbm->kjm", P, fy * sw[None])
    c = coef[:, 0, :]
    A = np.transpose(coef[:, 1:, :], (0, 2, 1))
    lam = c[:, None, :] + rho * np.einsum("kmn,bn->kbm", A, zs)
    d = _lp_norm(fy - lam, y_p)
    return CellStats(rho, xs, c, A, (d ** q @ zw) ** (1.0 / q) / rho, d.max(axis=1) / rho, lip_batch(A, X, y_p))


def local_functional(f: GridField, cfg: DorroConfig, r: float, T: float | None = None, rho_points: int = 24,
                     x_per_axis: int = 32, candidates: Sequence[Callable] = (), lsq: bool = False,
                     F: GridField | None = None) -> FunctionalReport:
    """``mean_{[r, T]} ( mean_x inf_Lambda mean_{x + rho B} ||f - Lambda||^q / rho^q ) drho/rho``.

    The infimum over 2-Lipschitz affine maps is bounded above by the best
    admissible candidate: always the heat-Taylor map, plus the least-squares
    fit when ``lsq`` is set and any ``candidates(F, X, xs, rho)`` returning
    :class:`CellStats`.  ``x`` runs over a lattice of ``(1 - 1/(2n)) B_X``.
    Candidates with Lipschitz constant above 2 are counted in
    ``extras['violations']`` (the heat candidate is then used regardless).
    """
    X, q, n = cfg.X, cfg.q, cfg.n
    T = top_scale(X, q, count=cfg.mc_count, seed=cfg.seed) if T is None else float(T)
    if T > 1.0 / (2 * n) * (1 + 1e-12):
        raise ValueError(f"T = {T:.6g} exceeds 1/(2n)")
    if not 0 < r <= T * T * (1 + 1e-12):
        raise ValueError(f"r must lie in (0, T^2] = (0, {T * T:.6g}]")
    F = extend_to_global(f, X) if F is None else F
    gamma = cfg.gamma_value()
    xs = ball_interior_points(X, x_per_axis, 1.0 - 1.0 / (2 * n))
    rhos = np.geomspace(r, T, rho_points)
    inner = []
    violations = 0
    max_lip = 0.0
    for rho in rhos:
        cs = candidate_cells(F, X, xs, rho, gamma, q, cfg.y_p, cfg.ball_samples, cfg.seed)
        best = cs.lq_error ** q
        bad = cs.lip > 2.0 * (1 + 1e-9)
        violations += int(bad.sum())
        max_lip = max(max_lip, float(cs.lip.max()))
        extra = [lsq_candidates(F, X, xs, rho, q, cfg.y_p, cfg.ball_samples, cfg.seed)] if lsq else []
        extra += [cand(F, X, xs, rho) for cand in candidates]
        for other in extra:
            ok = other.lip <= 2.0 * (1 + 1e-9)
            best = np.where(ok, np.minimum(best, other.lq_error ** q), best)
        inner.append(float(np.mean(best)))
    inner = np.array(inner)
    lr = np.log(rhos)
    value = float(np.trapezoid(inner, lr) / math.log(T / r)) if len(rhos) > 1 else float(inner[0])
    K = K_constant(q, n, X, cfg.m_q, cfg.kappa, cfg.mc_count, cfg.seed)
    bound = (9.0 * K * n) ** q / abs(math.log(r))
    grid_like = ScaleGrid(float(r), float(T), max(16, rho_points)) if T > r else None
    extras = {"T": T, "r": r, "c": T_CONSTANT, "gamma": gamma, "violations": violations, "max_candidate_lip": max_lip,
              "per_scale": [[float(a), float(b)] for a, b in zip(rhos, inner)], "x_count": int(len(xs)),
              "lsq_candidate": bool(lsq)}
    return FunctionalReport("local", value, 0.0, grid_like, bound, None, extras)


# candidate Lipschitz scan and affine search ---------------------------------------------


@dataclass
class LipScan:
    checked: int
    violations: int
    max_lip: float
    rho_grid: np.ndarray
    x_count: int
    lipschitz_F: float

    def to_dict(self) -> dict:
        return {"checked": self.checked, "violations": self.violations, "max_lip": self.max_lip,
                "rho_grid": self.rho_grid.tolist(), "x_count": self.x_count, "lipschitz_F": self.lipschitz_F}


def candidate_lip_scan(F: GridField, X: NormedSpace, gamma: float, x_per_axis: int = 32, rho_points: int = 24,
                       rho_min: float | None = None, C: float = LIP_C, y_p: float = 2.0, seed: int = 0) -> LipScan:
    """Lipschitz constants of heat-Taylor candidates below the small-time threshold.

    ``x`` runs over a lattice of ``(1 - 1/(2n)) B_X``; the ``rho`` grid is
    shared and a pair counts when ``gamma rho^2`` is below the threshold of
    :func:`heat.evolute_lip_threshold` at ``x``.
    """
    n = X.dim
    xs = ball_interior_points(X, x_per_axis, 1.0 - 1.0 / (2 * n))
    L = max(1.0, lipschitz_constant(F, X, y_p))
    thr = np.array([evolute_lip_threshold(X, x, L, C, seed=seed) for x in xs])
    rho_max = math.sqrt(thr.max() / gamma)
    rho_min = F.h if rho_min is None else rho_min
    rhos = np.geomspace(min(rho_min, rho_max), rho_max, rho_points)
    checked = violations = 0
    top = 0.0
    for rho in rhos:
        sel = gamma * rho * rho <= thr * (1 + 1e-12)
        if not np.any(sel):
            continue
        e = evolve(F, gamma * rho * rho, "heat", True)
        g = e.gradient.reshape(e.gradient.shape[:-2] + (-1,))
        A = interpolate(g, F.box, xs[sel]).reshape(-1, F.m, F.n)
        lips = lip_batch(A, X, y_p)
        checked += len(lips)
        violations += int(np.sum(lips > 2.0))
        top = max(top, float(lips.max()))
    return LipScan(checked, violations, top, rhos, len(xs), L)


def upgrade_constant(n: int, q: float) -> float:
    """``(2 * 12^{n/q})^{q/(n+q)}``: a 3-Lipschitz error with sup ``E`` has ``L_q`` mean at least ``(E/C)^{(n+q)/q}``."""
    return (2.0 * 12.0 ** (n / q)) ** (q / (n + q))


@dataclass
class ApproximationResult:
    x: np.ndarray | None
    rho: float | None
    Lambda: AffineMap | None
    lq_error: float
    linf_error: float
    lip_of_Lambda: float
    status: str
    upgrade_max: float = 0.0
    upgrade_bound: float = 0.0
    cells: int = 0
    scanned_rhos: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"x": None if self.x is None else self.x.tolist(), "rho": self.rho,
                "Lambda": None if self.Lambda is None else self.Lambda.to_dict(), "lq_error": self.lq_error,
                "linf_error": self.linf_error, "lip_of_Lambda": self.lip_of_Lambda, "status": self.status,
                "upgrade_max": self.upgrade_max, "upgrade_bound": self.upgrade_bound, "cells": self.cells}


def affine_search(f: GridField, eps: float, cfg: DorroConfig, r: float | None = None, T: float | None = None,
                  rho_points: int = 24, x_per_axis: int = 32, F: GridField | None = None) -> ApproximationResult:
    """Scan ``rho`` from ``T`` downwards for a ball on which the heat-Taylor candidate is ``eps``-close.

    Returns the first (largest ``rho``) hit with ``linf_error <= eps`` and
    ``lip <= 2``; otherwise the best admissible cell found.  Scales below
    ``4h`` are not resolved by the grid and end the scan.  Every scanned
    cell also contributes to ``upgrade_max``, the largest
    ``linf / lq^{q/(n+q)}``, to be compared with :func:`upgrade_constant`.
    """
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    X, q, n = cfg.X, cfg.q, cfg.n
    T = top_scale(X, q, count=cfg.mc_count, seed=cfg.seed) if T is None else float(T)
    r = T * T if r is None else float(r)
    F = extend_to_global(f, X) if F is None else F
    gamma = cfg.gamma_value()
    xs = ball_interior_points(X, x_per_axis, 1.0 - 1.0 / (2 * n))
    floor = 4.0 * F.h
    best = None
    up = 0.0
    cells = 0
    scanned = []
    for rho in np.geomspace(T, r, rho_points):
        if rho < floor:
            break
        scanned.append(float(rho))
        cs = candidate_cells(F, X, xs, rho, gamma, q, cfg.y_p, cfg.ball_samples, cfg.seed)
        cells += len(xs)
        ok = cs.lip <= 2.0 * (1 + 1e-9)
        pos = cs.lq_error > 0
        if np.any(pos):
            up = max(up, float(np.max(cs.linf_error[pos] / cs.lq_error[pos] ** (q / (n + q)))))
        hits = np.nonzero(ok & (cs.linf_error <= eps))[0]
        if len(hits):
            k = int(hits[np.argmin(cs.linf_error[hits])])
            return _result(cs, k, "hit", up, upgrade_constant(n, q), cells, scanned)
        if np.any(ok):
            k = int(np.nonzero(ok)[0][np.argmin(cs.linf_error[ok])])
            if best is None or cs.linf_error[k] < best[0].linf_error[best[1]]:
                best = (cs, k)
    if best is None:
        status = "unresolved scale" if not scanned else "no admissible candidate"
        return ApproximationResult(None, None, None, math.inf, math.inf, math.inf, status, up,
                                   upgrade_constant(n, q), cells, scanned)
    return _result(best[0], best[1], "best", up, upgrade_constant(n, q), cells, scanned)


def _result(cs: CellStats, k: int, status: str, up: float, ub: float, cells: int, scanned) -> ApproximationResult:
    x = cs.x[k]
    lam = AffineMap(x, cs.value[k], cs.linear[k], {"rho": cs.rho})
    return ApproximationResult(x, float(cs.rho), lam, float(cs.lq_error[k]), float(cs.linf_error[k]),
                               float(cs.lip[k]), status, up, ub, cells, scanned)
