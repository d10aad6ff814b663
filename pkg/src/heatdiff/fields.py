"""Vector-valued functions sampled on regular box grids.

A :class:`GridField` stores ``values[i_1, ..., i_n, :]`` for the grid points
``x_k = a + k h`` (``h = (b - a) / (res - 1)``) of the box ``[a, b]^n``.
Fields are compactly supported: a boundary layer of ``res // 8`` cells on
every face must vanish.  Generators evaluate closed-form test functions, so
every field also has an exact pointwise evaluator for cross-checks.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .spaces import NormedSpace, _lp_norm, norm_eval
from .streams import stream

MAGIC = b"HDGF"
FORMAT_VERSION = 1
LAYER_TOL = 1e-12
KINDS = ("gaussian-bump", "compact-bump", "smoothed-cone", "random-bandlimited",
         "coordinate-affine", "extension")
LOCAL_PROFILES = ("half-norm", "norm", "smoothed-abs", "affine", "cone")


class AdmissibilityError(ValueError):
    """A requested computation falls outside the admissible numerical range."""


def _is_pow2(k: int) -> bool:
    return k > 0 and (k & (k - 1)) == 0


@dataclass(frozen=True, eq=False)
class GridField:
    """Samples of ``f: R^n -> R^m`` on the grid of ``[a, b]^n``.

    ``values`` has shape ``(res,) * n + (m,)``.  With ``check=False`` the
    compact-support test is skipped; this is used for functions that are
    only meaningful on a unit ball (see :func:`make_local_field`).
    """

    values: np.ndarray
    box: tuple[float, float]
    meta: dict = field(default_factory=dict)
    check: bool = True

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim < 2:
            raise ValueError("values must have shape (res,)*n + (m,)")
        res = v.shape[0]
        if any(s != res for s in v.shape[:-1]):
            raise ValueError("grid must have the same resolution on every axis")
        if not _is_pow2(res):
            raise ValueError(f"res must be a power of two, got {res}")
        a, b = float(self.box[0]), float(self.box[1])
        if not b > a:
            raise ValueError("box must satisfy a < b")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "box", (a, b))
        if self.check:
            _check_layer(self)

    @property
    def n(self) -> int:
        return self.values.ndim - 1

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @property
    def res(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return (self.box[1] - self.box[0]) / (self.res - 1)

    @property
    def axis(self) -> np.ndarray:
        return self.box[0] + self.h * np.arange(self.res)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    @property
    def support_mask(self) -> np.ndarray:
        return np.any(self.values != 0.0, axis=-1)

    def points(self) -> np.ndarray:
        """Grid points as an array of shape ``(res,)*n + (n,)``."""
        ax = self.axis
        return np.stack(np.meshgrid(*([ax] * self.n), indexing="ij"), axis=-1)

    def component(self, j: int) -> "GridField":
        return GridField(self.values[..., j:j + 1], self.box, dict(self.meta), self.check)

    def with_values(self, values: np.ndarray, check: bool | None = None, **meta) -> "GridField":
        md = dict(self.meta)
        md.update(meta)
        return GridField(values, self.box, md, self.check if check is None else check)

    def interp(self, pts) -> np.ndarray:
        """Multilinear interpolation at ``pts`` (shape ``(..., n)``); zero outside the box."""
        return interpolate(self.values, self.box, pts)

    def lq_norm(self, q: float = 2.0, y_p: float = 2.0) -> float:
        """Discrete ``L_q(R^n; l_p^m)`` norm."""
        r = _lp_norm(self.values, y_p)
        if math.isinf(q):
            return float(r.max())
        return float((np.sum(r ** q) * self.cell_volume) ** (1.0 / q))


def interpolate(values: np.ndarray, box: tuple[float, float], pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    n = values.ndim - 1
    res = values.shape[0]
    a, b = box
    h = (b - a) / (res - 1)
    shp = pts.shape[:-1]
    p = pts.reshape(-1, n)
    u = (p - a) / h
    inside = np.all((u >= 0) & (u <= res - 1), axis=1)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, res - 2)
    fr = np.clip(u - i0, 0.0, 1.0)
    out = np.zeros((len(p), values.shape[-1]))
    for corner in range(1 << n):
        w = np.ones(len(p))
        idx = []
        for d in range(n):
            bit = (corner >> d) & 1
            w = w * (fr[:, d] if bit else 1.0 - fr[:, d])
            idx.append(i0[:, d] + bit)
        out += w[:, None] * values[tuple(idx)]
    out[~inside] = 0.0
    return out.reshape(shp + (values.shape[-1],))


def _check_layer(f: GridField) -> None:
    w = max(1, f.res // 8)
    top = float(np.abs(f.values).max()) if f.values.size else 0.0
    if top == 0.0:
        return
    layer = 0.0
    for d in range(f.n):
        lo = [slice(None)] * f.n
        hi = [slice(None)] * f.n
        lo[d] = slice(0, w)
        hi[d] = slice(f.res - w, f.res)
        layer = max(layer, float(np.abs(f.values[tuple(lo)]).max()), float(np.abs(f.values[tuple(hi)]).max()))
    if layer > LAYER_TOL * top:
        ext = support_extent(f)
        need = ext / (1.0 - 2.0 * w / (f.res - 1))
        raise AdmissibilityError(
            f"support reaches the boundary layer ({w} cells) of box [{f.box[0]:g}, {f.box[1]:g}]; "
            f"required box at least [{-need:.4g}, {need:.4g}] at res {f.res}")


def support_extent(f: GridField) -> float:
    """Largest ``|x_i|`` over the support."""
    mask = f.support_mask
    if not mask.any():
        return 0.0
    ax = np.abs(f.axis)
    ext = 0.0
    for d in range(f.n):
        other = tuple(i for i in range(f.n) if i != d)
        line = mask.any(axis=other) if other else mask
        ext = max(ext, float(ax[line].max()))
    return ext


def support_volume(f: GridField) -> float:
    """``h^n`` times the number of grid points where ``f != 0``."""
    return float(np.count_nonzero(f.support_mask)) * f.cell_volume


# test-function generators ------------------------------------------------


@dataclass(frozen=True)
class TestFunctionSpec:
    """Closed-form test function; ``params`` depend on ``kind``.

    gaussian-bump       center, s, amplitude, cut:  amplitude * exp(-|x-c|^2 / 4s)
    compact-bump        center, radius, amplitude:  exp(1 - 1/(1 - |x-c|^2/R^2))
    smoothed-cone       space, radius, center, amplitude, mollify:  (R - ||x-c||_X)_+
    random-bandlimited  modes, band, radius, center:  windowed random cosine sum
    coordinate-affine   offset, matrix, plateau, outer:  (c + A x) on |x| <= plateau
    extension           space, profile, ...:  global extension of a profile on B_X
    """

    __test__ = False

    kind: str
    params: dict = field(default_factory=dict)
    m: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown test function kind {self.kind!r}; expected one of {KINDS}")
        if self.m < 1:
            raise ValueError("m must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _jsonable(self.params), "m": self.m, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "TestFunctionSpec":
        return cls(d["kind"], dict(d.get("params", {})), int(d.get("m", 1)), int(d.get("seed", 0)))


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, NormedSpace):
        return x.descriptor()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _space_param(params: dict, n: int) -> NormedSpace:
    sp = params.get("space")
    if sp is None:
        return NormedSpace.lp(n, 2.0)
    return sp if isinstance(sp, NormedSpace) else NormedSpace.from_descriptor(sp)


def _vec(params: dict, key: str, n: int, default=0.0) -> np.ndarray:
    v = params.get(key)
    if v is None:
        return np.full(n, float(default))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return np.full(n, float(v[0])) if v.size == 1 else v


def _amplitude(params: dict, m: int) -> np.ndarray:
    a = params.get("amplitude")
    if a is None:
        return np.ones(m)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    return np.full(m, float(a[0])) if a.size == 1 else a


def smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        e0 = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        e1 = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return e0 / (e0 + e1)


def _bump(r2: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", over="ignore"):
        inside = r2 < 1.0
        out = np.zeros_like(r2)
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def profile_eval(params: dict, X: NormedSpace, pts: np.ndarray, m: int) -> np.ndarray:
    """Profiles for functions on ``B_X`` (values outside ``B_X`` are incidental)."""
    prof = params.get("profile", "half-norm")
    r = norm_eval(X, pts)
    r = np.asarray(r, dtype=float)
    amp = _amplitude(params, m)
    if prof == "half-norm":
        s = 0.5 * r
    elif prof == "norm":
        s = r
    elif prof == "smoothed-abs":
        d = float(params.get("delta", 0.05))
        s = np.sqrt(r * r + d * d) - d
    elif prof == "cone":
        s = np.maximum(0.0, 1.0 - r)
    elif prof == "affine":
        c = _vec(params, "offset", m)
        A = np.atleast_2d(np.asarray(params.get("matrix", np.eye(m, X.dim)[:m]), dtype=float))
        return c + pts @ A.T
    else:
        raise ValueError(f"unknown profile {prof!r}; expected one of {LOCAL_PROFILES}")
    return s[..., None] * amp


def extension_eval(params: dict, X: NormedSpace, pts: np.ndarray, m: int) -> np.ndarray:
    """``F = f - f(0)`` on ``B_X`` and ``max(0, n+1-n||x||) (f(x/||x||) - f(0))`` outside."""
    n = X.dim
    f0 = profile_eval(params, X, np.zeros((1, n)), m)[0]
    r = np.asarray(norm_eval(X, pts), dtype=float)
    safe = np.where(r > 0, r, 1.0)
    outside = r > 1.0
    y = np.where(outside[..., None], pts / safe[..., None], pts)
    base = profile_eval(params, X, y, m) - f0
    factor = np.where(outside, np.maximum(0.0, n + 1.0 - n * r), 1.0)
    return factor[..., None] * base


def evaluate(spec: TestFunctionSpec, pts) -> np.ndarray:
    """Exact pointwise values of a test function (before any mollification)."""
    pts = np.asarray(pts, dtype=float)
    n = pts.shape[-1]
    m = spec.m
    P = spec.params
    kind = spec.kind
    if kind == "gaussian-bump":
        c = _vec(P, "center", n)
        s = float(P.get("s", 1.0))
        d = pts - c
        g = np.exp(-np.einsum("...i,...i->...", d, d) / (4.0 * s))
        g[g < float(P.get("cut", 1e-16))] = 0.0
        return g[..., None] * _amplitude(P, m)
    if kind == "compact-bump":
        c = _vec(P, "center", n)
        R = float(P.get("radius", 1.0))
        d = (pts - c) / R
        return _bump(np.einsum("...i,...i->...", d, d))[..., None] * _amplitude(P, m)
    if kind == "smoothed-cone":
        X = _space_param(P, n)
        c = _vec(P, "center", n)
        R = float(P.get("radius", 1.0))
        amp = P.get("amplitude")
        amp = np.ones(m) / math.sqrt(m) if amp is None else _amplitude(P, m)
        return np.maximum(0.0, R - np.asarray(norm_eval(X, pts - c)))[..., None] * amp
    if kind == "random-bandlimited":
        rng = stream(spec.seed, "bandlimited", n, m)
        modes = int(P.get("modes", 12))
        band = float(P.get("band", 3.0))
        R = float(P.get("radius", 4.0))
        c = _vec(P, "center", n)
        dirs = rng.standard_normal((modes, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        om = dirs * (band * rng.uniform(0.0, 1.0, modes) ** (1.0 / n))[:, None]
        ph = rng.uniform(0.0, 2.0 * np.pi, (modes, m))
        amp = rng.standard_normal((modes, m)) / math.sqrt(modes)
        d = pts - c
        arg = d @ om.T
        out = np.zeros(pts.shape[:-1] + (m,))
        for k in range(modes):
            out += np.cos(arg[..., k][..., None] + ph[k]) * amp[k]
        w = _bump(np.einsum("...i,...i->...", d, d) / (R * R))
        return out * w[..., None]
    if kind == "coordinate-affine":
        cvec = _vec(P, "offset", m)
        A = np.asarray(P.get("matrix", np.ones((m, n))), dtype=float).reshape(m, n)
        r1 = float(P.get("plateau", 1.0))
        r2 = float(P.get("outer", 2.0 * r1))
        rr = np.sqrt(np.einsum("...i,...i->...", pts, pts))
        phi = smooth_step((r2 - rr) / (r2 - r1))
        return (cvec + pts @ A.T) * phi[..., None]
    if kind == "extension":
        return extension_eval(P, _space_param(P, n), pts, m)
    raise ValueError(kind)


def mollify(values: np.ndarray, h: float, width: float) -> np.ndarray:
    """Gaussian smoothing with standard deviation ``width`` (zero-padded FFT)."""
    n = values.ndim - 1
    res = values.shape[0]
    N = 2 * res
    axes = tuple(range(n))
    F = np.fft.rfftn(values, s=(N,) * n, axes=axes)
    k2 = _freq_sq(N, h, n)
    F *= np.exp(-0.5 * width * width * k2)[..., None]
    out = np.fft.irfftn(F, s=(N,) * n, axes=axes)
    return out[(slice(0, res),) * n]


def _freq_sq(N: int, h: float, n: int) -> np.ndarray:
    ks = [2 * np.pi * np.fft.fftfreq(N, d=h)] * (n - 1) + [2 * np.pi * np.fft.rfftfreq(N, d=h)]
    grids = np.meshgrid(*ks, indexing="ij", sparse=True)
    return sum(g * g for g in grids)


def make_field(spec: TestFunctionSpec, box, res: int, n: int | None = None) -> GridField:
    """Sample a test function on ``[a, b]^n`` with ``res`` points per axis.

    ``n`` defaults to the length of the spec's ``center``/space, else 1.
    Smoothed cones are mollified at scale ``2h`` after sampling.
    """
    if res < 32:
        raise ValueError("res must be at least 32")
    if not _is_pow2(res):
        raise ValueError("res must be a power of two")
    if n is None:
        n = _infer_dim(spec)
    a, b = float(box[0]), float(box[1])
    ax = a + (b - a) / (res - 1) * np.arange(res)
    pts = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1)
    vals = evaluate(spec, pts)
    h = (b - a) / (res - 1)
    if spec.kind == "smoothed-cone" and spec.params.get("mollify", True):
        vals = mollify(vals, h, 2.0 * h)
        top = np.abs(vals).max()
        vals[np.abs(vals) < 1e-14 * top] = 0.0
    return GridField(vals, (a, b), {"spec": spec.to_dict(), "n": n})


def make_local_field(spec_params: dict, X: NormedSpace, box, res: int, m: int = 1) -> GridField:
    """A function meant only on ``B_X`` (profile kinds), sampled without the support check."""
    n = X.dim
    a, b = float(box[0]), float(box[1])
    ax = a + (b - a) / (res - 1) * np.arange(res)
    pts = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1)
    vals = profile_eval(spec_params, X, pts, m)
    return GridField(vals, (a, b), {"local": _jsonable(spec_params), "space": X.descriptor()}, check=False)


def _infer_dim(spec: TestFunctionSpec) -> int:
    P = spec.params
    if "dim" in P:
        return int(P["dim"])
    for key in ("center",):
        if key in P and np.size(P[key]) > 1:
            return int(np.size(P[key]))
    if "space" in P:
        return _space_param(P, 1).dim
    if "matrix" in P:
        return int(np.asarray(P["matrix"], dtype=float).reshape(spec.m, -1).shape[1])
    return 1


# Lipschitz constants -----------------------------------------------------


def neighbor_offsets(n: int) -> np.ndarray:
    """Half of ``{-1,0,1}^n \\ {0}`` (one of each +/- pair)."""
    offs = np.array(np.meshgrid(*([[-1, 0, 1]] * n), indexing="ij")).reshape(n, -1).T
    keep = []
    for o in offs:
        nz = np.nonzero(o)[0]
        if len(nz) and o[nz[0]] > 0:
            keep.append(o)
    return np.array(keep, dtype=np.int64)


def lipschitz_constant(f: GridField, X: NormedSpace | None = None, y_p: float = 2.0,
                       backend: str | None = None) -> float:
    """Largest ``||f(x) - f(y)||_Y / ||x - y||_X`` over neighbouring grid pairs.

    Neighbours are the axis and diagonal neighbours.  This is a lower bound
    for the Lipschitz constant that increases towards it as ``h -> 0``.
    """
    from . import kernels

    X = NormedSpace.lp(f.n) if X is None else X
    if X.dim != f.n:
        raise ValueError("space dimension does not match the field")
    offs = neighbor_offsets(f.n)
    lens = np.asarray(norm_eval(X, offs * f.h), dtype=float)
    return kernels.grid_lipschitz(f.values, offs, lens, float(y_p), backend=backend)


# binary IO ---------------------------------------------------------------

_HEADER = struct.Struct("<4sIqqqdd")


def write_field(path, f: GridField, extra: dict | None = None) -> Path:
    """Write ``path`` (binary) and ``path + '.json'`` (sidecar)."""
    path = Path(path)
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, f.n, f.m, f.res, f.box[0], f.box[1])
    body = np.ascontiguousarray(f.values, dtype="<f8").tobytes(order="C")
    path.write_bytes(head + body)
    side = {"format": "heatdiff-grid", "version": FORMAT_VERSION, "n": f.n, "m": f.m, "res": f.res,
            "box": list(f.box), "h": f.h, "dtype": "float64-le", "order": "row-major",
            "shape": list(f.values.shape), "meta": _jsonable(f.meta)}
    if extra:
        side.update(_jsonable(extra))
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return path


def read_field(path, check: bool = True) -> GridField:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for a grid header")
    magic, ver, n, m, res, a, b = _HEADER.unpack_from(raw)
    if magic != MAGIC or ver != FORMAT_VERSION:
        raise ValueError("not a heatdiff grid file")
    count = res ** n * m
    body = np.frombuffer(raw, dtype="<f8", count=count, offset=_HEADER.size)
    meta: dict[str, Any] = {}
    side = Path(str(path) + ".json")
    if side.exists():
        meta = json.loads(side.read_text()).get("meta", {})
    return GridField(body.reshape((res,) * n + (m,)).astype(np.float64), (a, b), meta, check)
