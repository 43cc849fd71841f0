import csv
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from anosovlab import randrep as RR
from anosovlab.errors import NotZeroSum, RejectionBudgetExceeded

ADJ2 = RR.GroupAlgebraElement.adjacency(2)


# ---------------------------------------------------------------- counts and sampling


@pytest.mark.parametrize("n,g,expected", [(1, 1, 1), (1, 3, 1), (2, 1, 4), (2, 2, 16),
                                          (3, 1, 18), (3, 2, 486)])
def test_hom_count_exact(n, g, expected):
    assert RR.hom_count_surface(n, g) == expected
    if math.factorial(n) ** (2 * g) <= 1296:
        assert RR.enumerate_surface_homs(n, g) == expected


def test_hom_count_commuting_pairs():
    # |Hom(Z^2, S_n)| = n! p(n)
    for n in range(1, 9):
        p = sum(1 for _ in RR.partitions(n))
        assert RR.hom_count_surface(n, 1) == math.factorial(n) * p


def test_hook_dimensions():
    assert RR.hook_dimension((3, 1)) == 3
    assert RR.hook_dimension((2, 2)) == 2
    for n in range(1, 8):
        assert sum(RR.hook_dimension(l) ** 2 for l in RR.partitions(n)) == math.factorial(n)


def test_surface_sampler_uniform():
    # the 18 commuting pairs of S_3 are hit uniformly
    imgs = RR.sample_surface_batch(3, 1, 3600, seed=7)
    counts = Counter(tuple(map(tuple, x)) for x in imgs)
    assert len(counts) == 18
    assert stats.chisquare(list(counts.values())).pvalue > 1e-3


# the acceptance rate |Hom| / n!^{2g} falls off factorially; keep n small
@given(st.integers(2, 6), st.integers(1, 2), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_sampled_relation_holds(n, g, seed):
    hom = RR.sample_hom_surface(n, g, seed)
    assert hom.relation_holds()
    assert sorted(hom.images[0].tolist()) == list(range(n))
    words = [w for k in range(g) for w in ((2 * k,), (2 * k + 1,), (~(2 * k),), (~(2 * k + 1),))]
    rel = tuple(s for w in words for s in w)
    assert np.array_equal(hom.word(rel), np.arange(n))


def test_rejection_budget():
    with pytest.raises(RejectionBudgetExceeded):
        RR.sample_hom_surface(10, 2, 0, max_rejects=5000)


def test_sampling_reproducible_and_trivial():
    a = RR.sample_hom_surface(5, 2, 5)
    b = RR.sample_hom_surface(5, 2, 5)
    assert np.array_equal(a.images, b.images)
    one = RR.sample_hom_surface(1, 2, 0)
    assert one.rejects == 0 and one.images.shape == (4, 1)
    with pytest.raises(ValueError):
        RR.sample_hom_free(0, 2)


# ---------------------------------------------------------------- standard representation


@given(st.integers(2, 30), st.integers(0, 2 ** 32 - 1),
       st.lists(st.sampled_from([0, 1, -1, -2]), max_size=6))
@settings(max_examples=40, deadline=None)
def test_apply_std_homomorphism(n, seed, word):
    hom = RR.sample_hom_free(n, 2, seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    x -= x.mean()
    y = RR.apply_std(hom, word, x)
    assert abs(y.sum()) < 1e-10
    assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(x))
    step = x
    for s in reversed(word):
        step = RR.apply_std(hom, (s,), step)
    assert np.allclose(step, y)
    # (rho(p) x)[p[i]] = x[i]
    p = hom.word(tuple(word))
    assert np.allclose(y[p], x)


def test_apply_std_errors_and_identity():
    hom = RR.sample_hom_free(5, 2, 1)
    with pytest.raises(NotZeroSum):
        RR.apply_std(hom, (0,), np.ones(5))
    x = np.array([1.0, -1.0, 0.0, 2.0, -2.0])
    assert np.array_equal(RR.apply_std(hom, (), x), x)
    assert np.allclose(RR.apply_std(hom, (0, ~0), x), x)


def test_trace_is_fixed_points_minus_one():
    hom = RR.sample_hom_free(40, 2, 3)
    for w in [(0,), (1,), (0, 1), (0, 0, ~1), ()]:
        fix = int(np.sum(hom.word(w) == np.arange(40)))
        assert RR.trace_std(hom, w) == pytest.approx(fix - 1, abs=1e-9)


def test_group_algebra_elements():
    e = RR.GroupAlgebraElement({(0, ~0): 2.0, (): 1.0, (1,): 0.0})
    assert e.terms == {(): 3.0}
    assert ADJ2.self_adjoint and ADJ2.l1 == 4.0 and ADJ2.max_length == 1
    w = RR.GroupAlgebraElement({(0, 1): 1j})
    assert not w.self_adjoint
    assert w.adjoint().terms == {(~1, ~0): -1j}


def test_rep_norm_trivial_cases():
    ident = RR.PermutationHom(6, "free", 2, np.stack([np.arange(6)] * 2))
    assert RR.rep_norm(ADJ2, ident).value == pytest.approx(4.0)
    assert RR.rep_norm(RR.GroupAlgebraElement.delta(), RR.sample_hom_free(50, 2, 0)).value \
        == pytest.approx(1.0)
    assert RR.rep_norm(RR.GroupAlgebraElement.delta((0,)), RR.sample_hom_free(50, 2, 0)).value \
        == pytest.approx(1.0)
    assert RR.rep_norm(ADJ2, RR.sample_hom_free(1, 2, 0)).value == 0.0
    with pytest.raises(ValueError):
        RR.rep_norm(RR.GroupAlgebraElement.delta((0,) * 33), ident)


def test_rep_norm_lanczos_matches_dense():
    hom = RR.sample_hom_free(120, 2, 11)
    A = RR._std_operator(hom, ADJ2)
    dense = np.linalg.norm(RR._dense(A), 2)
    assert RR.rep_norm(ADJ2, hom).value == pytest.approx(dense, rel=1e-6)


def test_new_spectrum_is_permutation_spectrum_minus_trivial():
    hom = RR.sample_hom_free(30, 2, 4)
    full = RR.permutation_spectrum(hom, ADJ2)
    assert full[0] == pytest.approx(4.0)
    new = RR.new_spectrum(hom, ADJ2, k=5)
    assert np.allclose(new, full[1:6], atol=1e-9)
    assert RR.new_spectrum(RR.sample_hom_free(1, 2, 0), ADJ2) == []
    with pytest.raises(ValueError):
        RR.new_spectrum(hom, RR.GroupAlgebraElement({(0,): 1.0}))


# ---------------------------------------------------------------- regular representation


@pytest.mark.parametrize("R", [1, 3, 6])
def test_ball_norm_rank_one_is_path(R):
    r = RR.regular_norm_ball(RR.GroupAlgebraElement.adjacency(1), "free", R, rank=1)
    assert r.size == 2 * R + 1
    assert r.value == pytest.approx(2 * math.cos(math.pi / (2 * R + 2)), rel=1e-10)


def test_ball_norm_free_rank_two():
    d = RR.regular_norm_ball(RR.GroupAlgebraElement.delta(), "free", 4)
    assert d.value == pytest.approx(1.0)
    vals = [RR.regular_norm_ball(ADJ2, "free", R).value for R in (2, 4, 6)]
    assert vals[0] <= vals[1] <= vals[2] < RR.kesten_norm(2)
    assert RR.kesten_norm(2) == pytest.approx(2 * math.sqrt(3))


def test_ball_norm_surface_small():
    adj = RR.GroupAlgebraElement.adjacency(4)
    r = RR.regular_norm_ball(adj, "surface", 3)
    assert r.increment >= -1e-12
    assert 2 * math.sqrt(7) * 0.5 < r.value < 8.0
    with pytest.raises(ValueError):
        RR.regular_norm_ball(adj, "torus", 3)


# ---------------------------------------------------------------- Schreier graphs and misc


def test_schreier():
    one = RR.schreier_diagnostics(RR.sample_hom_free(1, 2, 0))
    assert one.diameter == 0
    # a single 5-cycle and the identity: a cycle graph with loops
    hom = RR.PermutationHom(5, "free", 2, np.array([[1, 2, 3, 4, 0], [0, 1, 2, 3, 4]]))
    rep = RR.schreier_diagnostics(hom, 3)
    assert rep.diameter == 2
    assert np.all(rep.radius == 0)
    big = RR.schreier_diagnostics(RR.sample_hom_free(400, 2, 2), 4)
    assert big.fractions[1] >= big.fractions[2] >= big.fractions[4]
    assert big.diameter > 0


def test_resonance_map():
    assert RR.resonance_map(0.0) == (0j, -1 + 0j)
    a, b = RR.resonance_map(0.25)
    assert a == b == -0.5
    assert RR.resonance_map(1.25) == (complex(-0.5, 1), complex(-0.5, -1))
    with pytest.raises(ValueError):
        RR.resonance_map(-1.0)


def test_strongconv_trials_and_csv(tmp_path):
    ref = RR.kesten_norm(2)
    trials = RR.strongconv_trials(80, [1, 2], ADJ2, "adjacency", ref, 8)
    assert all(t.norm_rep <= 4.0 + 1e-9 for t in trials)
    assert all(t.gap == pytest.approx(t.norm_rep - ref) for t in trials)
    assert all(t.new_top <= t.norm_rep + 1e-9 for t in trials)
    RR.write_strongconv_csv(tmp_path / "s.csv", trials, "h")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == RR.STRONGCONV_HEADER + ["config_hash"]
    assert len(rows) == 3
