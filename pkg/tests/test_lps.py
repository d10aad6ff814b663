import math

import numpy as np
import pytest

from heatdiff.fields import GridField, TestFunctionSpec, make_field
from heatdiff.heat import field_gradient, max_time
from heatdiff.lps import (FunctionalReport, ScaleGrid, difference_g, difference_profile, directional_g,
                          dyadic_martingale_ratio, frullani_constant, pisier_martingale_test, spatial_div_constant,
                          spatial_div_g, spatial_div_single_t, temporal_g)

FIELDS = {
    "gaussian": TestFunctionSpec("gaussian-bump", {"s": 0.3}),
    "compact": TestFunctionSpec("compact-bump", {"radius": 2.0}),
    "bandlimited": TestFunctionSpec("random-bandlimited", {"radius": 2.0}, seed=1),
}


def field(name, n, res=None, m=1):
    spec = FIELDS[name]
    if m != 1:
        spec = TestFunctionSpec(spec.kind, spec.params, m=m, seed=spec.seed)
    # in one dimension the dt/t tail decays like t^{-1/2}: a wider box keeps it small
    box = (-16, 16) if n == 1 else (-8, 8)
    return make_field(spec, box, res or (512 if n == 1 else 128), n)


def zero(n, m=1):
    return GridField(np.zeros((64,) * n + (m,)), (-8, 8))


# scale grid -----------------------------------------------------------------------------


def test_scale_grid_validation():
    with pytest.raises(ValueError):
        ScaleGrid(0.0, 1.0)
    with pytest.raises(ValueError):
        ScaleGrid(1.0, 0.5)
    with pytest.raises(ValueError):
        ScaleGrid(0.1, 1.0, points=8)
    g = ScaleGrid.per_decade(1e-3, 1.0, 12)
    assert g.points == 37 and g.nodes[0] == pytest.approx(1e-3) and g.nodes[-1] == pytest.approx(1.0)
    assert g.weights.sum() == pytest.approx(math.log(1e3))


def test_scale_grid_respects_admissible_range():
    f = field("gaussian", 1)
    g = ScaleGrid.for_field(f)
    assert g.t_max == pytest.approx(max_time(f))
    with pytest.raises(ValueError, match="admissible"):
        temporal_g(f, grid=ScaleGrid(1e-3, 10 * max_time(f)))


def test_report_rejects_negative_value():
    with pytest.raises(ValueError):
        FunctionalReport("x", -1.0, 0.0, None)


# temporal -----------------------------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("name", list(FIELDS))
def test_temporal_q2_is_half_the_norm(n, name):
    f = field(name, n)
    r = temporal_g(f)
    assert r.value == pytest.approx(f.lq_norm(2.0) / 2.0, rel=0.01)
    assert r.discretization_error_estimate >= 0


def test_temporal_vector_valued():
    f = field("bandlimited", 1, m=3)
    assert temporal_g(f).value == pytest.approx(f.lq_norm(2.0) / 2.0, rel=0.01)


def test_temporal_zero_and_validation():
    assert temporal_g(zero(1)).value == 0.0
    with pytest.raises(ValueError):
        temporal_g(field("gaussian", 1), q=1.5)


def test_temporal_bound_ratio_recorded():
    f = field("compact", 2)
    r = temporal_g(f, q=4.0)
    assert r.bound_value == pytest.approx(math.sqrt(2) * f.lq_norm(4.0))
    assert 0 < r.ratio < 1


# spatial divergence --------------------------------------------------------------------------


def test_spatial_div_of_gradient_1d():
    # div H_t grad f = Delta H_t f, and with the sqrt(t) weight the q = 2 value is ||f'||_2 / sqrt(2)
    f = field("gaussian", 1)
    g = field_gradient(f)[..., 0]
    vec = GridField(np.ascontiguousarray(g), f.box, check=False)
    val = spatial_div_g(vec).value
    assert val == pytest.approx(vec.lq_norm(2.0) / math.sqrt(2.0), rel=0.01)
    assert val == pytest.approx(directional_g(vec, [1.0]).value, rel=0.01)


def test_spatial_div_bandlimited_ratio():
    vec = field("bandlimited", 2, m=2)
    r = spatial_div_g(vec)
    assert math.isfinite(r.value) and r.value > 0
    assert r.ratio <= 10


def test_spatial_div_zero_and_shape():
    assert spatial_div_g(zero(2, 2)).value == 0.0
    with pytest.raises(ValueError):
        spatial_div_g(field("bandlimited", 2))


# directional ---------------------------------------------------------------------------------------


@pytest.mark.parametrize("name", list(FIELDS))
def test_directional_q2_1d(name):
    f = field(name, 1)
    assert directional_g(f, [1.0]).value == pytest.approx(f.lq_norm(2.0) / math.sqrt(2.0), rel=0.01)


def test_directional_zero_direction():
    assert directional_g(field("gaussian", 2), [0.0, 0.0]).value == 0.0


def test_directional_near_delta_single_time():
    # a narrow gaussian: ||sqrt(t) d/dx H_t f||_1 -> ||f||_1 / sqrt(pi) once t >> s
    f = make_field(TestFunctionSpec("gaussian-bump", {"s": 1e-3}), (-8, 8), 4096, 1)
    r = directional_g(f, [1.0], q=1.0, grid=ScaleGrid.per_decade(1e-2, 1.0, 12))
    assert r.extras["sup_ratio"] == pytest.approx(1.0, rel=0.02)
    assert r.extras["sup_ratio"] <= 1.0 + 1e-6


# difference --------------------------------------------------------------------------------------------


@pytest.mark.parametrize("name", list(FIELDS))
def test_difference_q2_alpha3(name):
    f = field(name, 1)
    r = difference_g(f, 3.0)
    assert r.value / f.lq_norm(2.0) == pytest.approx(math.sqrt(math.log(4.0 / 3.0)), rel=0.01)
    assert r.extras["exact_value"] == pytest.approx(r.value, rel=0.01)
    assert r.value <= math.sqrt(math.log(3.0)) * f.lq_norm(2.0)


def test_difference_frullani_constant():
    assert math.sqrt(frullani_constant(3.0)) == pytest.approx(0.53636, abs=5e-6)


def test_difference_vanishes_as_alpha_tends_to_one():
    f = field("gaussian", 1)
    vals = [difference_g(f, a).value for a in (2.0, 1.1, 1.01, 1.001)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-3 * f.lq_norm(2.0)
    with pytest.raises(ValueError):
        difference_g(f, 1.0)


def test_difference_telescoping():
    f = field("bandlimited", 2)
    a = 1.7
    times = np.geomspace(1e-3, max_time(f) / a ** 2, 20)
    whole = difference_profile(f, a * a, times)
    first = difference_profile(f, a, times)
    second = difference_profile(f, a, a * times)
    assert np.all(whole <= first + second + 1e-10)


# invariants --------------------------------------------------------------------------------------------


def test_q2_constants_independent_of_field():
    vals = [temporal_g(field(nm, 2)).value / field(nm, 2).lq_norm(2.0) for nm in FIELDS]
    assert max(vals) - min(vals) <= 0.01
    vals = [difference_g(field(nm, 2), 2.0).value / field(nm, 2).lq_norm(2.0) for nm in FIELDS]
    assert max(vals) - min(vals) <= 0.01


@pytest.mark.parametrize("lam", [2.0, 0.5])
def test_scale_covariance(lam):
    s = 0.1
    f = make_field(TestFunctionSpec("gaussian-bump", {"s": s}), (-16, 16), 1024, 1)
    g = make_field(TestFunctionSpec("gaussian-bump", {"s": s * lam * lam}), (-16, 16), 1024, 1)
    grid = ScaleGrid.per_decade(1e-3, 0.5, 24)
    grid_l = ScaleGrid.per_decade(1e-3 * lam * lam, 0.5 * lam * lam, 24)
    for q in (2.0, 4.0):
        a = temporal_g(f, q, grid).value / f.lq_norm(q)
        b = temporal_g(g, q, grid_l).value / g.lq_norm(q)
        assert b == pytest.approx(a, rel=0.01)


# single-time divergence -------------------------------------------------------------------------------


def test_spatial_div_constant_values():
    assert spatial_div_constant(1) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-14)
    assert spatial_div_constant(1) == pytest.approx(0.56419, abs=5e-6)
    assert spatial_div_constant(2) == pytest.approx(math.sqrt(math.pi) / 2, rel=1e-14)


def test_spatial_div_single_t_near_delta():
    f = make_field(TestFunctionSpec("gaussian-bump", {"s": 1e-3}), (-8, 8), 4096, 1)
    c = spatial_div_single_t(f, 0.5, q=1.0)
    assert c.holds
    assert c.value == pytest.approx(c.bound, rel=0.02)


@pytest.mark.parametrize("q", [1.0, 2.0, 4.0])
def test_spatial_div_single_t_bound_holds_2d(q):
    vec = field("bandlimited", 2, m=2)
    for t in (0.01, 0.1, 1.0):
        assert spatial_div_single_t(vec, t, q).holds


def test_spatial_div_single_t_zero():
    c = spatial_div_single_t(zero(1), 0.1)
    assert c.value == 0.0 and c.holds


# martingales ---------------------------------------------------------------------------------------------


def test_constant_martingale_ratio_zero():
    levels = [np.ones((1, 2)), np.ones((2, 2)), np.ones((4, 2))]
    assert dyadic_martingale_ratio(levels) == 0.0
    assert dyadic_martingale_ratio([np.zeros((1, 1)), np.zeros((2, 1))]) == 0.0


def test_scalar_q2_ratio_at_most_one():
    r = pisier_martingale_test(2.0, 1, depth=8, trials=2000, seed=3)
    assert r.ratios.max() <= 1.0 + 1e-12


def test_q4_ratio_stable_across_seeds():
    a = pisier_martingale_test(4.0, 8, depth=10, trials=10 ** 4, seed=0).max_ratio
    b = pisier_martingale_test(4.0, 8, depth=10, trials=10 ** 4, seed=1).max_ratio
    assert math.isfinite(a) and abs(a - b) <= 0.1 * max(a, b)


def test_pisier_deterministic_across_threads():
    a = pisier_martingale_test(4.0, 2, depth=6, trials=3000, seed=5, threads=1)
    b = pisier_martingale_test(4.0, 2, depth=6, trials=3000, seed=5, threads=4)
    assert np.array_equal(a.ratios, b.ratios)
    assert a.to_dict()["max_ratio"] == a.max_ratio


def test_pisier_validation():
    with pytest.raises(ValueError):
        pisier_martingale_test(1.5)
    with pytest.raises(ValueError):
        pisier_martingale_test(2.0, depth=17)
