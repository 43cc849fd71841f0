"""The fifteen acceptance criteria at their stated tolerances.

Every test records a one-line verdict in RESULTS (printed at the end of the
run by conftest) and then asserts it, so an unattained criterion shows up as
a failing test together with the measured numbers.
"""

import math
import time
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from anosovlab import cli, fourier, orbits, randrep, spherical
from anosovlab.geometry import (ConstantCurvature, Perturbed, PhasePoint, default_group,
                                exact_flow, geodesic_flow)

RESULTS = {}
QS = [0.0, 0.5, 1.0, 1.5, 2.0]


def record(k, ok, detail):
    RESULTS[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def group():
    return default_group()


@pytest.fixture(scope="module")
def hyp(group):
    return ConstantCurvature(1.0, group)


@pytest.fixture(scope="module")
def pert(group):
    return Perturbed(group, 0.05)


@pytest.fixture(scope="module")
def hyp_orbits(group, hyp):
    """All closed geodesics of length <= 12 on the hyperbolic surface."""
    return orbits.close_all(hyp, orbits.enumerate_geodesics(group, 12.0))


@pytest.fixture(scope="module")
def hyp_curve(hyp_orbits):
    return orbits.pressure_curve(hyp_orbits, QS, 10.0)


@pytest.fixture(scope="module")
def pert_orbits(group, pert):
    """Perturbed orbits whose hyperbolic class length lies in [9.7, 11.3]."""
    classes = orbits.enumerate_geodesics(group, 11.3)
    return orbits.close_all(pert, [c for c in classes if c.length >= 9.7])


def phase_err(p, q):
    dth = (p.theta - q.theta + math.pi) % (2 * math.pi) - math.pi
    return abs(p.z - q.z) + abs(dth)


# ---------------------------------------------------------------------------


def test_c01_flow_oracle(hyp):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    zs = spherical._random_points(rng, 1000, 3.0)
    worst = 0.0
    for z in zs:
        p = PhasePoint(z, rng.uniform(0, 2 * math.pi))
        t = rng.uniform(0.0, 10.0)
        worst = max(worst, phase_err(geodesic_flow(hyp, p, t, tol=1e-10), exact_flow(hyp, p, t)))
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-8 and dt <= 60, f"max phase error {worst:.2e} (<= 1e-8), {dt:.1f}s")


def test_c02_jacobian_oracle(hyp, pert):
    ts = np.linspace(0.05, 10.0, 200)
    rel = max(abs(spherical.radial_jacobian(hyp, 0.2 - 0.1j, 0.7, t) / math.sinh(t) - 1)
              for t in ts)
    rng = np.random.default_rng(2)
    sym = 0.0
    for _ in range(1000):
        x, y = spherical._random_points(rng, 2, 3.0)
        a, b = spherical.jacobian(pert, x, y), spherical.jacobian(pert, y, x)
        sym = max(sym, abs(a - b) / a)
    record(2, rel <= 1e-6 and sym <= 1e-5,
           f"J/sinh t rel err {rel:.2e} (<= 1e-6); symmetry on 1000 perturbed pairs {sym:.2e}"
           " (<= 1e-5)")


def test_c03_pressure_constant_curvature(hyp_curve):
    c = hyp_curve
    b0, b1, b2 = c.at(0.0)[0], c.at(1.0)[0], c.at(2.0)[0]
    ok = (abs(b0 - 1) <= 0.1 and abs(b1) <= 0.1 and abs(b2 + 1) <= 0.15
          and abs(c.delta0_hat + 0.5) <= 0.08 and abs(c.gamma0_hat - 1) <= 1e-6)
    record(3, ok, f"betaHat(0,1,2) = {b0:.4f}, {b1:.4f}, {b2:.4f}; delta0Hat {c.delta0_hat:.4f};"
                  f" gamma0Hat {c.gamma0_hat:.9f}; {c.orbit_count} orbits in [10, 11]")


def test_c04_poincare_identity(hyp_orbits, pert_orbits):
    rel = max(abs(abs(np.linalg.det(np.eye(2) - o.poincare))
                  / (4 * math.sinh(0.5 * o.unstable_exponent) ** 2) - 1) for o in hyp_orbits)
    # det P as the product of segment determinants; the determinant of the
    # assembled matrix cancels terms of size |P|^2 ~ e^Lambda
    det = max(abs(o.poincare_det - 1) for o in pert_orbits)
    naive = max(abs(np.linalg.det(o.poincare) - 1) for o in pert_orbits)
    record(4, rel <= 1e-6 and det <= 1e-8,
           f"det identity rel err {rel:.2e} on {len(hyp_orbits)} orbits (<= 1e-6);"
           f" |det P - 1| {det:.2e} on {len(pert_orbits)} perturbed orbits (<= 1e-8;"
           f" {naive:.1e} from the assembled matrix)")


def test_c05_three_estimators(hyp, group, hyp_curve):
    qs = [0.0, 1.0, 2.0]
    s_grid = np.arange(0.05, 12.0 + 1e-9, 0.05)
    prof = spherical._radial_profiles(hyp, 256, s_grid, 0)
    gaps = []
    parts = []
    for q in qs:
        w = spherical._orbit_weights(hyp, group, 12.0, q)
        vals = [hyp_curve.at(q)[0], spherical.annulus_pressure(hyp, q, 12.0, _profiles=prof).value,
                spherical.poincare_critical_exponent(hyp, group, q, 12.0, _weights=w).value]
        gaps.append(max(vals) - min(vals))
        parts.append(f"q={q:g}: " + "/".join(f"{v:.3f}" for v in vals))
    record(5, max(gaps) <= 0.1, f"max pairwise gap {max(gaps):.3f} (<= 0.1); " + "; ".join(parts))


@pytest.fixture(scope="module")
def power_norms(hyp):
    ts = np.arange(1.0, 9.0)
    return ts, np.array([spherical.sm_norm_power(hyp, t).norm for t in ts])


def test_c06_spherical_norm(power_norms):
    t0 = time.perf_counter()
    ts, est = power_norms
    exact = np.array([spherical.exact_norm_hyperbolic(2, t) for t in ts])
    m = ts <= 6
    relerr = float(np.max(np.abs(est[m] / exact[m] - 1)))
    late = ts >= 4
    slope = spherical.log_slope(ts[late], est[late])
    exact_slope = spherical.log_slope(ts[late], exact[late])
    ok = relerr <= 0.1 and abs(slope + 0.5) <= 0.05 and est.max() <= 1.02
    record(6, ok, f"max rel err vs exact on [1,6] {relerr:.3f} (<= 0.1); log-slope on [4,8]"
                  f" {slope:.3f} (target -0.5 +- 0.05; the exact norm itself gives"
                  f" {exact_slope:.3f}); max normHat {est.max():.4f} (<= 1.02)")


def test_c07_lower_bound(hyp, power_norms):
    ts, est = power_norms
    late = ts >= 4
    lbs = [spherical.sm_norm_lower(hyp, 0j, t, 10_000, seed=int(t)) for t in ts[ts > 1]]
    vals = np.array([b.value for b in lbs])
    tl = ts[ts > 1]
    slope = spherical.log_slope(tl[tl >= 4], vals[tl >= 4])
    below = all(b.value <= e * 1.02 + 3 * b.stderr for b, e in zip(lbs, est[ts > 1]))
    record(7, slope >= -0.55 and below,
           f"lower-bound log-slope on [4,8] {slope:.3f} (>= -0.55); below normHat at every t:"
           f" {below}")
    del late


def test_c08_correlation(hyp):
    ts = [4.0, 5.0, 6.0, 7.0, 8.0]
    est = [spherical.correlation_lower_bound(hyp, 0j, t, seed=int(t)) for t in ts]
    vals = [e.value for e in est]
    slope = spherical.log_slope(ts, vals)
    record(8, slope >= -1.1 and min(vals) > 0,
           f"correlation log-slope on [4,8] {slope:.3f} (>= -1.1)")


def test_c09_filtered(hyp):
    h = 0.1
    ts = np.linspace(2 * math.log(1 / h), 3 * math.log(1 / h), 5)
    ratios = []
    for t in ts:
        r = fourier.filtered_norm(hyp, fourier.default_profile, h, t)
        ratios.append(r.norm / (spherical.exact_norm_hyperbolic(2, t) / h))
    spread = max(ratios) / min(ratios)
    weyl = max(abs(a - b) for a, b in (fourier.weyl_sum(lam, th)
                                        for lam in (0, 0.5, 1, 17, 400.3)
                                        for th in (0.0, 1.0, 2.5)))
    record(9, spread <= 2.0 and weyl <= 1e-12,
           f"ratio spread x{spread:.2f} over t in [{ts[0]:.3f}, {ts[-1]:.3f}] (<= x2),"
           f" ratios " + ", ".join(f"{x:.3f}" for x in ratios) + f"; Weyl identity err {weyl:.1e}")


def test_c10_appendix_a(pert_orbits):
    curve = orbits.pressure_curve(pert_orbits, QS, 10.0)
    rep = orbits.appendix_a_report(curve)
    conv = all(v > 3 * s for _, v, s in rep.convexity)
    b2, s2 = curve.at(2.0)
    strict = b2 + curve.gamma0_hat
    se = curve.combo_stderr([0, 0, 0, 0, 1])
    ok = conv and strict < -3 * se
    corr = orbits.appendix_a_report(orbits.pressure_curve(pert_orbits, QS, 10.0,
                                                          window_correction=True))
    record(10, ok,
           "second differences " + ", ".join(f"{v:.4f}+-{s:.4f}" for _, v, s in rep.convexity)
           + f" (> 3 se); betaHat(2)+gamma0Hat {strict:.4f}+-{se:.4f} (< -3 se);"
           f" window-corrected second differences "
           + ", ".join(f"{v:.4f}+-{s:.4f}" for _, v, s in corr.convexity))


def test_c11_sampler():
    exact = randrep.hom_count_surface(3, 2)
    brute = randrep.enumerate_surface_homs(3, 2)
    imgs = randrep.sample_surface_batch(3, 2, 100_000, seed=11)
    counts = Counter(x.tobytes() for x in imgs)
    obs = np.array(list(counts.values()) + [0] * (exact - len(counts)))
    p = stats.chisquare(obs).pvalue
    record(11, exact == brute == 486 and p >= 0.01,
           f"brute force {brute}, formula {exact} (486); chi2 p-value {p:.3f} over"
           f" {len(counts)} cells (>= 0.01)")


def test_c12_strong_convergence():
    w = randrep.GroupAlgebraElement.adjacency(2)
    ref = 2 * math.sqrt(3)
    balls = [randrep.regular_norm_ball(w, "free", R) for R in (4, 6, 8, 10, 12)]
    mono = all(b.increment >= -1e-12 for b in balls) and all(
        a.value <= b.value + 1e-12 for a, b in zip(balls, balls[1:]))
    top = balls[-1].value
    seeds = cli.derived_seeds(2024, 50)
    trials = randrep.strongconv_trials(500, seeds, w, "adjacency", ref, 12)
    frac = np.mean([t.norm_rep <= ref + 0.2 for t in trials])
    frac_new = np.mean([t.new_top <= ref + 0.2 for t in trials])
    ok = abs(top - ref) <= 1e-2 and mono and frac >= 0.95 and frac_new >= 0.95
    record(12, ok, f"ball norm at R=12 {top:.4f} vs 2 sqrt 3 = {ref:.4f} (within 1e-2);"
                   f" monotone {mono}; rep_norm accepted {frac:.2f}, new top accepted"
                   f" {frac_new:.2f} (>= 0.95)")


def test_c13_schreier():
    ns = [100, 200, 400, 800]
    seeds = cli.derived_seeds(13, len(ns))
    reps = [randrep.schreier_diagnostics(randrep.sample_hom_free(n, 2, s), 6)
            for n, s in zip(ns, seeds)]
    ratio = [r.diameter / math.log(n) for n, r in zip(ns, reps)]
    band = max(ratio) / min(ratio)
    fr = [r.fractions[2] for r in reps]
    nondec = all(a <= b + 1e-12 for a, b in zip(fr, fr[1:]))
    record(13, band <= 1.5 and nondec,
           "diameter/log n " + ", ".join(f"{x:.2f}" for x in ratio) + f" (band x{band:.2f} <= 1.5);"
           " tree-like radius >= 2 fractions " + ", ".join(f"{x:.3f}" for x in fr))


def test_c14_gromov(hyp, pert):
    rng = np.random.default_rng(14)
    col = 0.0
    for model in (hyp, pert):
        for _ in range(20):
            x, z = spherical._random_points(rng, 2, 4.0)
            d = float(spherical._distances(model, x, z))
            y = spherical._geodesic_point(model, x, z, rng.random() * d)
            col = max(col, spherical.gromov_delta(model, x, y, z))
    rates = []
    for r in (6.0, 10.0):
        w = spherical.direction_pair_at_separation(hyp, 0.1j, 0.3, r, 0.5)
        rates.append(spherical.geodesic_divergence(hyp, 0.1j, 0.3, w, r, 0.5).rate)
    w = spherical.direction_pair_at_separation(pert, 0.1j, 0.3, 8.0, 0.5)
    prate = spherical.geodesic_divergence(pert, 0.1j, 0.3, w, 8.0, 0.5).rate
    ok = col <= 1e-6 and all(abs(r - 1) <= 0.1 for r in rates) and prate > 0
    record(14, ok, f"collinear delta {col:.1e} (<= 1e-6); divergence rates on H2 "
                   + ", ".join(f"{r:.3f}" for r in rates) + f" (1 +- 0.1); perturbed {prate:.3f}"
                   " (> 0)")


def test_c15_resonances_and_swap(pert):
    ex = (randrep.resonance_map(0.0) == (0j, -1 + 0j)
          and randrep.resonance_map(0.25) == (-0.5 + 0j, -0.5 + 0j)
          and randrep.resonance_map(1.25) == (complex(-0.5, 1), complex(-0.5, -1)))

    def bump(c, r):
        return lambda z: spherical._bump(
            2 * np.arctanh(np.abs((z - c) / (1 - np.conj(c) * z))), r)

    lhs, rhs = spherical.swap_identity(pert, bump(0j, 0.5), bump(0.3 + 0j, 0.5), 0.8)
    record(15, ex and abs(lhs - rhs) <= 1e-3,
           f"resonance examples exact: {ex}; swap identity {lhs:.6f} vs {rhs:.6f} (within 1e-3)")
