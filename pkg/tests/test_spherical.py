import csv
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from anosovlab import spherical as S
from anosovlab.geometry import ConstantCurvature, disk_distance

from conftest import perturbed, random_disk_points


# ---------------------------------------------------------------- exact norm


@given(st.floats(0.01, 15.0))
@settings(max_examples=30, deadline=None)
def test_exact_norm_is_legendre_function(t):
    # ||L_t|| on H^2 is the spherical function P_{-1/2}(cosh t)
    ref = float(mp.legenp(-0.5, 0, mp.cosh(t), type=3))
    assert S.exact_norm_hyperbolic(2, t) == pytest.approx(ref, rel=1e-9)


def test_exact_norm_examples():
    assert S.exact_norm_hyperbolic(2, 0.0) == 1.0
    assert S.exact_norm_hyperbolic(2, 1e-6) == pytest.approx(1.0, abs=1e-9)
    assert S.exact_norm_hyperbolic(3, 2.0) == pytest.approx(2 / math.sinh(2), rel=1e-10)
    assert S.exact_norm_hyperbolic(3, 2.0) == pytest.approx(0.5514, abs=1e-4)
    ts = np.linspace(20, 30, 6)
    vals = np.array([S.exact_norm_hyperbolic(2, t) for t in ts])
    # P_{-1/2}(cosh t) ~ (2 sqrt2 / pi) t e^{-t/2}
    assert S.log_slope(ts, vals / ts) == pytest.approx(-0.5, abs=0.005)
    with pytest.raises(ValueError):
        S.exact_norm_hyperbolic(1, 1.0)


def test_log_slope_exact():
    ts = np.array([1.0, 2.0, 5.0])
    assert S.log_slope(ts, 3 * np.exp(-0.7 * ts)) == pytest.approx(-0.7, abs=1e-12)


# ---------------------------------------------------------------- Jacobians


@pytest.mark.parametrize("t", [0.1, 1.0, 5.0, 10.0])
def test_radial_jacobian_sinh(hyp, t):
    assert S.radial_jacobian(hyp, 0.2 - 0.3j, 1.1, t) == pytest.approx(math.sinh(t), rel=1e-6)


def test_radial_jacobian_small_t(pert):
    j = S.radial_jacobian(pert, 0.1j, 0.4, 1e-3)
    assert j / 1e-3 == pytest.approx(1.0, abs=1e-6)
    assert S.radial_jacobian(pert, 0.1j, 0.4, 0.0) == 0.0
    with pytest.raises(ValueError):
        S.radial_jacobian(pert, 0j, 0.0, -1.0)


def test_jacobian_symmetry(pert, rng):
    x, y = random_disk_points(rng, 2, 3.0)
    for a, b in [(x, y), (0.1 + 0.2j, -0.6 + 0.1j)]:
        assert S.jacobian(pert, a, b) == pytest.approx(S.jacobian(pert, b, a), rel=1e-5)


def test_modified_jacobian_examples(hyp):
    assert S.modified_jacobian(hyp, 0j, math.tanh(0.25)) == 1.0
    assert S.modified_jacobian(hyp, 0j, math.tanh(1.0)) == pytest.approx(math.sinh(2), rel=1e-6)
    assert math.sinh(2) == pytest.approx(3.6269, abs=1e-4)


def test_aligned_triple_ratio_bounded(pert):
    for s in [0.5, 1.5, 3.0]:
        r = S.aligned_triple_ratio(pert, 0.1j, -0.7 + 0.2j, s)
        assert 0.05 < r < 20.0


# ---------------------------------------------------------------- spherical means


def gaussian(z):
    return np.exp(-disk_distance(0j, z) ** 2)


def sphere_average_oracle(r, t):
    """(1/2 pi) int f over the circle of radius t about a point at distance r from 0."""
    def g(phi):
        c = math.cosh(r) * math.cosh(t) - math.sinh(r) * math.sinh(t) * math.cos(phi)
        return math.exp(-math.acosh(max(c, 1.0)) ** 2)

    return integrate.quad(g, 0.0, 2 * math.pi, epsabs=1e-13, limit=200)[0] / (2 * math.pi)


@pytest.mark.parametrize("r,t", [(0.0, 1.0), (0.8, 0.5), (1.5, 2.0), (0.3, 3.0)])
def test_spherical_mean_radial_gaussian(hyp, r, t):
    x = math.tanh(r / 2)
    for form in ("direction", "surface"):
        got = S.apply_spherical_mean(hyp, gaussian, x, t, 64, form)
        assert got == pytest.approx(sphere_average_oracle(r, t), abs=1e-4)


def test_spherical_mean_trivial_cases(pert):
    one = lambda z: np.ones(np.shape(z))
    for form in ("direction", "surface"):
        assert S.apply_spherical_mean(pert, one, 0.2j, 1.3, 64, form) == pytest.approx(1.0, abs=1e-4)
    assert S.apply_spherical_mean(pert, gaussian, 0.3, 0.0) == pytest.approx(gaussian(0.3))
    with pytest.raises(ValueError):
        S.apply_spherical_mean(pert, one, 0j, 1.0, 8)


def test_sphere_quadrature_radius(pert):
    q = S.sphere_quadrature(pert, 0.1 + 0.1j, 1.7, 16)
    for e in q.endpoints:
        assert float(S._distances(pert, 0.1 + 0.1j, e)) == pytest.approx(1.7, rel=1e-8)


def test_ball_grid_volume(hyp):
    g = S.BallGridFunction.build(4.0, 0.05, hyp)
    assert g.weights.sum() == pytest.approx(2 * math.pi * (math.cosh(4) - 1), rel=0.01)
    h = np.diff(np.sort(np.unique(np.round(np.abs(2 * np.arctanh(np.abs(g.nodes))), 9))))
    assert np.all(h <= 0.05 + 1e-9)


def test_ball_grid_interpolation(hyp, rng):
    g = S.BallGridFunction.build(4.0, 0.05, hyp)
    gg = g.with_values(gaussian(g.nodes))
    z = random_disk_points(rng, 200, 3.5)
    assert np.max(np.abs(gg.evaluate(z, 3) - gaussian(z))) < 1e-3


# ---------------------------------------------------------------- norms of L_t


@pytest.mark.parametrize("t", [1.0, 3.0])
def test_power_norm_isotropic(hyp, t):
    est = S.sm_norm_power(hyp, t)
    ex = S.exact_norm_hyperbolic(2, t)
    assert abs(est.norm - ex) <= 0.1 * ex
    assert est.norm <= 1.02
    assert S.sm_norm_power(hyp, 0.0).norm == 1.0


def test_power_norm_perturbed_contraction(pert):
    est = S.sm_norm_power(pert, 1.0, R=3.0, grid=S.GridSpec(h=0.1, n_directions=24))
    assert est.norm <= 1.02
    with pytest.raises(ValueError):
        S.sm_norm_power(pert, 2.0, R=3.0)


def test_lower_bound_below_upper(hyp):
    lb = S.sm_norm_lower(hyp, 0j, 3.0, 10_000, seed=1)
    up = S.sm_norm_power(hyp, 3.0).norm
    assert 0 < lb.value <= up + 3 * lb.stderr + 0.02
    with pytest.raises(ValueError):
        S.sm_norm_lower(hyp, 0j, 1.0)
    with pytest.raises(ValueError):
        S.sm_norm_lower(hyp, 0j, 3.0, mc_samples=100)


# ---------------------------------------------------------------- pressure estimators


def test_annulus_pressure_small(hyp):
    prof = S._radial_profiles(hyp, 32, np.arange(0.05, 10.025, 0.05), 0)
    for q, ref in [(0, 1.0), (1, 0.0), (2, -1.0)]:
        a = S.annulus_pressure(hyp, q, 10.0, _profiles=prof)
        assert a.value == pytest.approx(ref, abs=0.08)


def test_poincare_exponent_small(hyp, group):
    e = S.poincare_critical_exponent(hyp, group, 0.0, max_radius=10.0)
    assert e.value == pytest.approx(1.0, abs=0.15)


# ---------------------------------------------------------------- thin triangles


def test_gromov_degenerate(hyp):
    x, z = 0.1 + 0.2j, -0.5 + 0.3j
    y = S._geodesic_point(hyp, x, z, 0.7)
    assert S.gromov_delta(hyp, x, y, z) <= 1e-6
    assert S.gromov_delta(hyp, x, x, x) == 0.0


def test_gromov_bounded_by_ideal_triangle(hyp):
    rng = np.random.default_rng(0)
    worst = max(S.gromov_delta(hyp, *S._random_points(rng, 3, 10.0)) for _ in range(200))
    # the insize of an ideal triangle is log 3
    assert 0.5 < worst < math.log(3.0)


@given(st.floats(0.0, 2 * math.pi), st.floats(0.5, 3.0))
@settings(max_examples=10, deadline=None)
def test_gromov_symmetric(a, s):
    hyp = ConstantCurvature(1.0)
    x = 0.3j
    y = complex(np.tanh(s / 2) * np.exp(1j * a))
    z = -0.4 + 0.1j
    d = S.gromov_delta(hyp, x, y, z)
    assert d == pytest.approx(S.gromov_delta(hyp, z, y, x), abs=1e-7)


def test_divergence_rates(hyp):
    w = S.direction_pair_at_separation(hyp, 0.1j, 0.3, 8.0, 0.5)
    fit = S.geodesic_divergence(hyp, 0.1j, 0.3, w, 8.0, 0.5)
    assert fit.rate == pytest.approx(1.0, abs=0.1)
    assert fit.separation[-1] == pytest.approx(0.5, rel=1e-6)


def test_divergence_positive_perturbed():
    pert = perturbed()
    w = S.direction_pair_at_separation(pert, 0.1j, 0.3, 6.0, 0.5)
    assert S.geodesic_divergence(pert, 0.1j, 0.3, w, 6.0, 0.5).rate > 0


def test_temperness_and_x_minus_j(hyp):
    C, n = S.temperness_constant(hyp, 100)
    assert n == 100 and 1.0 <= C < 2.0
    assert S.x_minus_j_gap(hyp, 6.0, 30) < 3.0


def test_spherical_csv(tmp_path):
    rows = [{"t": 1.0, "norm_power": 0.9, "norm_exact": None, "lower_bound": 0.5,
             "lower_stderr": 0.01, "R": 80.0, "grid_h": 0.05}]
    S.write_spherical_csv(tmp_path / "s.csv", rows, "h1")
    out = list(csv.reader(open(tmp_path / "s.csv")))
    assert out[0] == S.SPHERICAL_HEADER + ["config_hash"]
    assert out[1][2] == "" and out[1][-1] == "h1"
