import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatdiff.fields import (AdmissibilityError, GridField, TestFunctionSpec, evaluate, lipschitz_constant,
                             make_field, make_local_field, read_field, support_volume, write_field)
from heatdiff.spaces import NormedSpace, norm_eval

L1 = NormedSpace.lp(2, 1)

SPECS = [
    TestFunctionSpec("smoothed-cone", {"space": L1.descriptor(), "radius": 1.5}),
    TestFunctionSpec("gaussian-bump", {"s": 0.3, "center": [0.1, 0.2]}),
    TestFunctionSpec("random-bandlimited", {"radius": 2.0, "band": 2.0}, seed=3),
    TestFunctionSpec("compact-bump", {"radius": 2.0, "center": [0.0, 0.0]}),
]


def test_gaussian_bump_peak():
    spec = TestFunctionSpec("gaussian-bump", {"s": 0.25})
    f = make_field(spec, (-8, 8), 256)
    assert f.n == 1 and f.m == 1
    assert evaluate(spec, np.zeros((1, 1)))[0, 0] == 1.0
    # the grid straddles the centre at distance h/2: exp(-(h/2)^2 / (4 s))
    assert 1.0 >= f.values.max() >= math.exp(-f.h ** 2 / 4.0) * (1 - 1e-14)


def test_affine_plateau_has_constant_gradient():
    A = np.array([[0.3, -0.4]])
    spec = TestFunctionSpec("coordinate-affine", {"offset": [0.5], "matrix": A.tolist(), "plateau": 1.0,
                                                  "outer": 2.0})
    f = make_field(spec, (-4, 4), 128, 2)
    ax = f.axis
    inner = np.nonzero(np.abs(ax) < 0.6)[0]
    sub = f.values[np.ix_(inner, inner)][..., 0]
    gx = np.diff(sub, axis=0) / f.h
    gy = np.diff(sub, axis=1) / f.h
    assert np.allclose(gx, 0.3, atol=1e-10) and np.allclose(gy, -0.4, atol=1e-10)


def test_bandlimited_deterministic():
    spec = TestFunctionSpec("random-bandlimited", {"radius": 2.0}, seed=3)
    a = make_field(spec, (-8, 8), 64, 2)
    b = make_field(spec, (-8, 8), 64, 2)
    assert np.array_equal(a.values, b.values)
    c = make_field(TestFunctionSpec("random-bandlimited", {"radius": 2.0}, seed=4), (-8, 8), 64, 2)
    assert not np.array_equal(a.values, c.values)


def test_boundary_rejection_names_box():
    spec = TestFunctionSpec("gaussian-bump", {"s": 4.0})
    with pytest.raises(AdmissibilityError, match="required box"):
        make_field(spec, (-8, 8), 128)


def test_res_validation():
    spec = TestFunctionSpec("gaussian-bump", {"s": 0.25})
    with pytest.raises(ValueError):
        make_field(spec, (-8, 8), 16)
    with pytest.raises(ValueError):
        make_field(spec, (-8, 8), 100)
    with pytest.raises(ValueError):
        TestFunctionSpec("nope")


def test_gridfield_is_read_only():
    f = make_field(TestFunctionSpec("gaussian-bump", {"s": 0.25}), (-8, 8), 64)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_interp_zero_outside():
    f = make_field(TestFunctionSpec("gaussian-bump", {"s": 0.25}), (-8, 8), 64)
    assert f.interp(np.array([[9.0]]))[0, 0] == 0.0
    # grid points are reproduced exactly
    assert f.interp(f.axis[10:11, None])[0, 0] == f.values[10, 0]


# Lipschitz constants -------------------------------------------------------------


def _affine_field(z, res=64, box=(-2.0, 2.0)):
    ax = np.linspace(*box, res)
    P = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
    return GridField((1.5 + P @ np.asarray(z))[..., None], box, check=False)


@pytest.mark.parametrize("z", [(0.6, 0.0), (0.0, -1.3), (0.7, 0.7), (-0.4, 0.4)])
def test_lipschitz_affine_exact_along_neighbour_directions(z):
    f = _affine_field(z)
    assert lipschitz_constant(f, NormedSpace.lp(2)) == pytest.approx(float(np.linalg.norm(z)), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0.1, 3.0))
def test_lipschitz_affine_direction_gap(theta, r):
    # neighbour pairs see 8 directions 45 degrees apart: a lower bound within cos(pi/8)
    z = r * np.array([math.cos(theta), math.sin(theta)])
    L = lipschitz_constant(_affine_field(z), NormedSpace.lp(2))
    assert r * math.cos(math.pi / 8) * (1 - 1e-12) <= L <= r * (1 + 1e-12)


def test_lipschitz_zero_field():
    f = GridField(np.zeros((32, 32, 1)), (-1, 1))
    assert lipschitz_constant(f) == 0.0


@pytest.mark.parametrize("res", [256, 512])
def test_lipschitz_smoothed_cone(res):
    f = make_field(SPECS[0], (-8, 8), res, 2)
    L = lipschitz_constant(f, L1)
    # the l_1 cone is 1-Lipschitz in l_1; mollification cannot raise that
    assert L <= 1.0 + f.h
    assert L >= 1.0 - 4 * f.h


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_lipschitz_refinement_monotone(spec):
    X = L1 if spec.kind == "smoothed-cone" else NormedSpace.lp(2)
    vals = [lipschitz_constant(make_field(spec, (-8, 8), r, 2), X) for r in (64, 128, 256)]
    assert vals[0] <= vals[1] * (1 + 1e-12) and vals[1] <= vals[2] * (1 + 1e-12)


def test_lipschitz_vector_valued_target_norm():
    res, box = 64, (-2.0, 2.0)
    ax = np.linspace(*box, res)
    vals = np.stack([ax, -2.0 * ax], axis=-1)
    f = GridField(vals, box, check=False)
    assert lipschitz_constant(f, y_p=1.0) == pytest.approx(3.0, rel=1e-12)
    assert lipschitz_constant(f, y_p=math.inf) == pytest.approx(2.0, rel=1e-12)
    assert lipschitz_constant(f, y_p=2.0) == pytest.approx(math.sqrt(5.0), rel=1e-12)


# support volume ---------------------------------------------------------------------


def test_support_volume_interval():
    half = 127.0 / 32.0  # h = 1/16 at res 128
    f = make_field(TestFunctionSpec("compact-bump", {"radius": 1.0}), (-half, half), 128)
    assert f.h == pytest.approx(1.0 / 16.0)
    assert abs(support_volume(f) - 2.0) <= f.h


def test_support_volume_zero():
    assert support_volume(GridField(np.zeros((64, 1)), (-1, 1))) == 0.0


def test_support_volume_square_plateau():
    res, box = 128, (-4.0, 4.0)
    ax = np.linspace(*box, res)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    vals = ((np.abs(X) <= 1) & (np.abs(Y) <= 1)).astype(float)[..., None]
    f = GridField(vals, box)
    assert abs(support_volume(f) - 4.0) <= 4 * f.h + f.h ** 2


# translation invariance ----------------------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(st.integers(-20, 20), st.integers(-20, 20))
def test_translation_invariance(dx, dy):
    from heatdiff.lps import temporal_g

    f = make_field(TestFunctionSpec("compact-bump", {"radius": 2.0}), (-8, 8), 128, 2)
    g = f.with_values(np.roll(f.values, (dx, dy), axis=(0, 1)))
    assert lipschitz_constant(g) == pytest.approx(lipschitz_constant(f), rel=1e-12)
    assert support_volume(g) == support_volume(f)
    assert temporal_g(g).value == pytest.approx(temporal_g(f).value, rel=1e-12)


# local fields and extension ----------------------------------------------------------


def test_local_field_carries_meta():
    X = NormedSpace.lp(2)
    f = make_local_field({"profile": "half-norm"}, X, (-2, 2), 64)
    assert f.meta["local"]["profile"] == "half-norm"
    P = f.points()
    assert np.allclose(f.values[..., 0], 0.5 * norm_eval(X, P))


def test_extension_is_one_lipschitz_global():
    X = NormedSpace.lp(2, 1)
    spec = TestFunctionSpec("extension", {"space": X.descriptor(), "profile": "half-norm"})
    F = make_field(spec, (-4, 4), 256, 2)
    # vanishes outside (1 + 1/n) B_X
    P = F.points()
    assert np.all(F.values[norm_eval(X, P) >= 1.5 + 1e-12] == 0.0)
    assert lipschitz_constant(F, X) <= 3.0 * 0.5 * 1.05


# binary IO ----------------------------------------------------------------------------


def test_roundtrip(tmp_path):
    f = make_field(TestFunctionSpec("random-bandlimited", {"radius": 2.0}, m=2, seed=1), (-8, 8), 64, 2)
    p = write_field(tmp_path / "f.bin", f, extra={"note": "x"})
    g = read_field(p)
    assert np.array_equal(f.values, g.values) and f.box == g.box
    assert g.meta["spec"]["seed"] == 1
    raw = p.read_bytes()
    magic, ver, n, m, res, a, b = struct.unpack_from("<4sIqqqdd", raw)
    assert (n, m, res, a, b) == (2, 2, 64, -8.0, 8.0)
    body = np.frombuffer(raw[struct.calcsize("<4sIqqqdd"):], dtype="<f8")
    assert np.array_equal(body, f.values.ravel(order="C"))


def test_read_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"nonsense" * 10)
    with pytest.raises(ValueError):
        read_field(p)
