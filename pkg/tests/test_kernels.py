import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from heatdiff import kernels
from heatdiff.fields import neighbor_offsets

BACKENDS = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])


def lp_oracle(a, b, C):
    """Transportation LP solved by HiGHS (independent of the simplex kernels)."""
    ns, nt = C.shape
    A_eq = np.zeros((ns + nt, ns * nt))
    for i in range(ns):
        A_eq[i, i * nt:(i + 1) * nt] = 1.0
    for j in range(nt):
        A_eq[ns + j, j::nt] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def problem(seed, ns, nt):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.1, 1.0, ns)
    b = rng.uniform(0.1, 1.0, nt)
    b *= a.sum() / b.sum()
    P = rng.uniform(-1, 1, (ns, 2))
    Q = rng.uniform(-1, 1, (nt, 2))
    C = np.linalg.norm(P[:, None] - Q[None], axis=-1)
    return a, b, C


def test_backend_flag():
    assert kernels.BACKEND in ("compiled", "python")
    with pytest.raises(ValueError):
        kernels._pick("fortran")


def test_forced_fallback_at_import():
    env = dict(os.environ, HEATDIFF_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", "import heatdiff.kernels as k; print(k.BACKEND)"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("seed,ns,nt", [(0, 5, 5), (1, 12, 7), (2, 30, 41), (3, 1, 6), (4, 60, 60)])
def test_simplex_matches_linprog(backend, seed, ns, nt):
    a, b, C = problem(seed, ns, nt)
    rows, cols, flows, cost, u, v, it = kernels.transport_simplex(a, b, C, backend=backend)
    assert cost == pytest.approx(lp_oracle(a, b, C), rel=1e-9, abs=1e-12)
    # primal feasibility
    assert np.allclose(np.bincount(rows, flows, ns), a, atol=1e-9)
    assert np.allclose(np.bincount(cols, flows, nt), b, atol=1e-9)
    assert np.all(flows >= -1e-12)
    # dual feasibility and complementary slackness certify optimality
    assert np.all(u[:, None] + v[None, :] <= C + 1e-9)
    pos = flows > 1e-12
    assert np.allclose(u[rows[pos]] + v[cols[pos]], C[rows[pos], cols[pos]], atol=1e-9)


@pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled kernels not built")
@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 25), st.integers(1, 25))
def test_simplex_backends_agree(seed, ns, nt):
    a, b, C = problem(seed, ns, nt)
    cp = kernels.transport_simplex(a, b, C, backend="python")[3]
    cc = kernels.transport_simplex(a, b, C, backend="compiled")[3]
    assert cc == pytest.approx(cp, rel=1e-12, abs=1e-14)


def test_simplex_degenerate_masses():
    # equal integer masses create degenerate bases
    a = np.ones(6)
    b = np.ones(6)
    C = np.abs(np.arange(6)[:, None] - np.arange(6)[None, ::-1]).astype(float)
    for be in BACKENDS:
        cost = kernels.transport_simplex(a, b, C, backend=be)[3]
        assert cost == pytest.approx(lp_oracle(a, b, C), abs=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("y_p", [1.0, 2.0, 3.0, math.inf])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_grid_lipschitz_matches_brute_force(backend, y_p, n):
    rng = np.random.default_rng(n)
    shape = (6,) * n + (2,)
    vals = rng.normal(size=shape)
    offs = neighbor_offsets(n)
    lens = np.linalg.norm(offs, axis=1) * 0.5
    got = kernels.grid_lipschitz(vals, offs, lens, y_p, backend=backend)
    best = 0.0
    for idx in np.ndindex(*shape[:-1]):
        for o, ln in zip(offs, lens):
            j = tuple(np.add(idx, o))
            if all(0 <= k < 6 for k in j):
                d = vals[j] - vals[idx]
                nrm = np.abs(d).max() if math.isinf(y_p) else (np.abs(d) ** y_p).sum() ** (1 / y_p)
                best = max(best, nrm / ln)
    assert got == pytest.approx(best, rel=1e-12)


def test_neighbor_offsets_half_set():
    for n in (1, 2, 3):
        offs = neighbor_offsets(n)
        assert len(offs) == (3 ** n - 1) // 2
        full = {tuple(o) for o in offs} | {tuple(-o) for o in offs}
        assert len(full) == 3 ** n - 1
