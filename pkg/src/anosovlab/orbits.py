"""Closed geodesics, Poincare maps and periodic-orbit pressure estimates.

Closed geodesics on the quotient are conjugacy classes of hyperbolic group
elements.  They are enumerated geometrically: every closed geodesic has a
lift passing within the inradius of the domain centre, so a ball of group
elements of radius ``2 asinh(cosh(r_in) sinh(L/2))`` contains a
representative of every class of length at most ``L``.  Conjugates are
identified through a canonical lift (the one closest to the origin).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.optimize import brentq

from . import _ball
from .errors import (DegenerateOrbit, EmptyWindow, NoClosure, NumericalError,
                     OrbitEnumerationOverflow)
from .geometry import (ConstantCurvature, JacobiState, PhasePoint, _run,
                       axis_foot, axis_point, deck_transform, exact_flow_arrays,
                       fixed_points, mobius,
                       riccati_integral, translate_to, translation_length)

DEFAULT_CAP = 8_000_000


# ---------------------------------------------------------------------------
# group balls


@dataclass
class GroupBall:
    """Group elements g with d(0, g 0) <= radius, found by breadth-first search."""

    group: object
    radius: float
    a: np.ndarray
    b: np.ndarray
    dist: np.ndarray
    parent: np.ndarray
    letter: np.ndarray

    def __len__(self):
        return len(self.a)

    def matrix(self, k):
        a, b = self.a[k], self.b[k]
        return np.array([[a, b], [np.conj(b), np.conj(a)]])

    def word(self, k):
        letters = self.group.letters
        out = []
        while self.parent[k] >= 0:
            out.append(letters[self.letter[k]])
            k = self.parent[k]
        return tuple(reversed(out))


def group_ball(group, radius, cap=DEFAULT_CAP):
    """All elements with displacement d(0, g 0) <= radius.

    The search explores out to ``radius + circumradius``: the tiles met by the
    segment from 0 to g(0) form a chain of side-adjacent elements whose
    displacements stay below that bound, so nothing inside ``radius`` is
    missed.
    """
    sa, sb = group.side_arrays
    explore = radius + group.circumradius + 1e-6
    ea, eb, dist, parent, letter, n, over = _ball.bfs_ball(sa, sb, explore, int(cap))
    if over:
        raise OrbitEnumerationOverflow(
            f"more than {cap} group elements within displacement {explore:.3f}")
    ea, eb, dist, parent, letter = ea[:n], eb[:n], dist[:n], parent[:n], letter[:n]
    keep = np.flatnonzero(dist <= radius)
    # re-index parents; ancestors of kept elements may lie outside the radius,
    # so words are resolved against the full tree first
    return _subset_ball(group, radius, ea, eb, dist, parent, letter, keep)


def _subset_ball(group, radius, ea, eb, dist, parent, letter, keep):
    if len(keep) == len(ea):
        return GroupBall(group, radius, ea, eb, dist, parent, letter)
    ball = GroupBall(group, radius, ea, eb, dist, parent, letter)
    sub = GroupBall(group, radius, ea[keep], eb[keep], dist[keep],
                    parent[keep], letter[keep])
    sub._full = ball
    sub._index = keep
    sub.word = lambda k: ball.word(keep[k])
    return sub


# ---------------------------------------------------------------------------
# words


def free_reduce(word):
    out = []
    for l in word:
        if out and out[-1] == ~l:
            out.pop()
        else:
            out.append(l)
    return tuple(out)


def cyclic_reduce(word):
    w = list(free_reduce(word))
    while len(w) >= 2 and w[0] == ~w[-1]:
        w = w[1:-1]
    return tuple(w)


def min_rotation(word):
    if not word:
        return ()
    return min(tuple(word[i:] + word[:i]) for i in range(len(word)))


def inverse_word(word):
    return tuple(~l for l in reversed(word))


def is_literal_power(word):
    n = len(word)
    for p in range(1, n // 2 + 1):
        if n % p == 0 and word == word[:p] * (n // p):
            return True
    return False


def word_to_str(word):
    """Generators as a,b,c,...; inverses upper case."""
    out = []
    for l in word:
        k = l if l >= 0 else ~l
        ch = chr(ord("a") + k)
        out.append(ch if l >= 0 else ch.upper())
    return "".join(out)


def str_to_word(s):
    out = []
    for ch in s:
        if ch.islower():
            out.append(ord(ch) - ord("a"))
        else:
            out.append(~(ord(ch.lower()) - ord("a")))
    return tuple(out)


# ---------------------------------------------------------------------------
# class enumeration


@dataclass(frozen=True)
class GeodesicClass:
    """A primitive oriented conjugacy class; geometry is for curvature -1."""

    word: tuple
    length: float
    rho: float
    key: tuple


def _class_key(group, g, step=0.1):
    xm, xp = fixed_points(g)
    ell = translation_length(g)
    f = axis_foot(xm, xp)
    e = mobius(translate_to(-f), xp)
    rot = e / abs(e)
    sa, sb = group.side_arrays
    return _ball.canonical_chord(complex(xm), complex(xp), complex(f), complex(rot),
                                 ell, sa, sb, step)


def _cluster(keys, tol=1e-6):
    """Labels grouping nearly equal key rows (rho, angle_minus, angle_plus)."""
    keys = np.asarray(keys)
    if len(keys) == 0:
        return np.zeros(0, dtype=int)
    order = np.lexsort((keys[:, 2], keys[:, 1]))
    labels = -np.ones(len(keys), dtype=int)
    reps = []
    nl = 0
    for i in order:
        k = keys[i]
        found = -1
        # scan recent representatives with nearly equal first angle
        for j in range(len(reps) - 1, -1, -1):
            r = reps[j][1]
            if k[1] - r[1] > tol:
                break
            if abs(k[2] - r[2]) <= tol and abs(k[0] - r[0]) <= tol:
                found = reps[j][0]
                break
        if found < 0:
            found = nl
            nl += 1
            reps.append((found, k))
        labels[i] = found
    return labels


def enumerate_geodesics(group, max_length, cap=DEFAULT_CAP, margin=0.05):
    """Primitive oriented closed geodesics of the hyperbolic metric with
    length <= max_length, one GeodesicClass per conjugacy class, sorted by
    (length, word)."""
    if max_length <= 0:
        return []
    rin = group.inradius + margin
    radius = 2.0 * math.asinh(math.cosh(rin) * math.sinh(max_length / 2.0))
    ball = group_ball(group, radius, cap=cap)
    a = ball.a
    tr = 2.0 * np.abs(a.real)
    hyper = tr > 2.0 + 1e-12
    ell = np.zeros(len(a))
    ell[hyper] = 2.0 * np.arccosh(tr[hyper] / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        coshrho = np.abs(ball.b) / np.sinh(ell / 2.0)
    cand = np.flatnonzero(hyper & (ell <= max_length + 1e-9) & (coshrho <= math.cosh(rin)))

    # primitive roots: among elements sharing an oriented axis keep the shortest
    axes = []
    for k in cand:
        xm, xp = fixed_points(ball.matrix(k))
        axes.append((0.0, _ball._angle(xm), _ball._angle(xp)))
    lab = _cluster(axes)
    shortest = {}
    for i, k in enumerate(cand):
        l = lab[i]
        if l not in shortest or ell[k] < ell[shortest[l]]:
            shortest[l] = k
    prim = sorted(shortest.values())

    keys = np.array([_class_key(group, ball.matrix(k)) for k in prim])
    clab = _cluster(keys)
    out = {}
    for i, k in enumerate(prim):
        c = clab[i]
        w = min_rotation(cyclic_reduce(ball.word(k)))
        prev = out.get(c)
        if prev is None or (len(w), w) < (len(prev[0]), prev[0]):
            out[c] = (w, ell[k], keys[i])
    res = [GeodesicClass(w, float(l), float(key[0]), (round(key[1], 9), round(key[2], 9)))
           for w, l, key in out.values()]
    res.sort(key=lambda c: (c.length, c.word))
    return res


def enumerate_classes(group, max_word_length, cap=2_000_000):
    """Primitive conjugacy classes met by cyclically reduced words of length
    <= max_word_length; one minimal-rotation representative each.

    Both orientations are kept (a class and its inverse are different
    oriented closed geodesics); use :func:`inversion_pairs` to match them.
    """
    if max_word_length < 1:
        return []
    letters = group.letters
    seen = {}
    keys = []
    words = []
    lengths = []
    count = 0
    for n in range(1, max_word_length + 1):
        for w in product(letters, repeat=n):
            if any(w[i + 1] == ~w[i] for i in range(n - 1)):
                continue
            if n > 1 and w[0] == ~w[-1]:
                continue
            if min_rotation(w) != w or is_literal_power(w):
                continue
            count += 1
            if count > cap:
                raise OrbitEnumerationOverflow(f"more than {cap} candidate words")
            g = group.word_matrix(w)
            if abs(np.trace(g).real) <= 2.0 + 1e-9:
                continue
            keys.append(_class_key(group, g))
            words.append(w)
            lengths.append(translation_length(g))
    if not words:
        return []
    lab = _cluster(np.array(keys))
    best = {}
    for i, w in enumerate(words):
        l = lab[i]
        if l not in best or (len(w), w) < (len(words[best[l]]), words[best[l]]):
            best[l] = i
    # a class whose length is an integer multiple of another class on the
    # same canonical lift is a proper power
    by_key = {}
    for l, i in best.items():
        by_key.setdefault(l, []).append(i)
    out = []
    root_len = {}
    for l, i in best.items():
        root_len[l] = lengths[i]
    keyarr = np.array(keys)
    for l, i in best.items():
        mine = keyarr[i]
        power = False
        for l2, i2 in best.items():
            if l2 == l:
                continue
            if np.allclose(keyarr[i2][1:], mine[1:], atol=1e-7):
                ratio = lengths[i] / lengths[i2]
                if ratio > 1.5 and abs(ratio - round(ratio)) < 1e-7:
                    power = True
                    break
        if not power:
            out.append(words[i])
    out.sort(key=lambda w: (len(w), w))
    return out


def inversion_pairs(words, group):
    """Index pairs (i, j) with words[j] representing the inverse class of words[i]."""
    keys = [_class_key(group, group.word_matrix(w)) for w in words]
    inv = [_class_key(group, group.word_matrix(inverse_word(w))) for w in words]
    pairs = []
    for i, k in enumerate(inv):
        for j, k2 in enumerate(keys):
            if j > i and np.allclose(k, k2, atol=1e-7):
                pairs.append((i, j))
    return pairs


# ---------------------------------------------------------------------------
# closing geodesics


@dataclass
class ClosedGeodesic:
    word: tuple
    length: float
    unstable_exponent: float
    base_point: PhasePoint
    closure_residual: float
    poincare: np.ndarray | None = field(default=None, repr=False)
    poincare_det: float | None = None


def phase_residual(p, q):
    """Chart distance between phase points: hyperbolic-scaled |dz| + |d theta|."""
    dz = abs(p.z - q.z) * 2.0 / (1.0 - max(abs(p.z), abs(q.z)) ** 2)
    dth = abs((p.theta - q.theta + math.pi) % (2 * math.pi) - math.pi)
    return dz + dth


def _transport_matrix(model, p, period, tol, segment=1.5):
    """Jacobi transport P over one period and det P.

    P is the product of the transports over segments of length <= segment.
    det P is the product of the segment determinants: the entries of P grow
    like e^{Lambda/2}, so the determinant formed from them loses about
    |P|^2 machine epsilons to cancellation, while every segment stays O(1).
    """
    n = max(1, int(math.ceil(period / segment)))
    h = period / n
    P = np.eye(2)
    det = 1.0
    z = [p.z.real, p.z.imag, p.theta]
    for _ in range(n):
        # the Jacobi components carry relative error control, so the
        # tolerance is not tightened for growth along the orbit
        y = _run(model, z + [1.0, 0.0, 0.0, 1.0], [h], njac=2, tol=tol, recentre=True,
                 horizon=0.0)[0]
        M = np.array([[y[3], y[5]], [y[4], y[6]]])
        P = M @ P
        det *= M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        z = [y[0], y[1], y[2]]
    return P, det


def _unstable_slope(P):
    w, v = np.linalg.eig(P)
    i = int(np.argmax(np.abs(w)))
    if abs(abs(w[i]) - 1.0) < 1e-6:
        raise DegenerateOrbit(f"Poincare eigenvalues {w} near the unit circle")
    vec = np.real(v[:, i])
    return vec[1] / vec[0]


def close_geodesic(model, word, tol=1e-9, integ_tol=1e-12, max_iter=30):
    """Closed geodesic in the free homotopy class of ``word``."""
    group = model.group
    word = cyclic_reduce(tuple(word))
    if not word:
        raise DegenerateOrbit("trivial word has no closed geodesic")
    g = group.word_matrix(word)
    if abs(np.trace(g).real) <= 2.0:
        raise DegenerateOrbit("word is not hyperbolic")
    ell0 = translation_length(g)
    xm, xp = fixed_points(g)
    p0 = PhasePoint(*axis_point(xm, xp, 0.0))
    if isinstance(model, ConstantCurvature):
        base, length = p0, ell0 / model.kappa
    else:
        base, length = _shoot(model, g, p0, ell0, tol, integ_tol, max_iter)
    end, target, _ = _end_and_target(model, g, base, length, integ_tol)
    res = phase_residual(end, target)
    P, det = _transport_matrix(model, base, length, integ_tol)
    u0 = _unstable_slope(P)
    _, lam = riccati_integral(model, base, length, u0, tol=integ_tol)
    return ClosedGeodesic(word, float(length), float(lam), base, float(res), P, float(det))


def _su11(a, b):
    return np.array([[a, b], [np.conj(b), np.conj(a)]])


def _end_and_target(model, g, p, length, tol, q=None):
    """phi_length(p) and g q (default q = p), both in the re-centred chart of
    the endpoint.

    Re-centring keeps the integration near the origin, where the chart has
    full precision; the target is carried along by the accumulated
    isometry, which is a short group element times a small translation.
    """
    acc = np.array([1.0 + 0j, 0j])
    y = _run(model, [p.z.real, p.z.imag, p.theta], [length], tol=tol, recentre=True,
             acc=acc)[0]
    A = _su11(acc[0], acc[1])
    return PhasePoint(complex(y[0], y[1]), y[2]), deck_transform(A @ g, p if q is None else q), A


def _gap(y, q):
    dz = (y.z - q.z) * 2.0 / (1.0 - abs(q.z) ** 2)
    dth = (y.theta - q.theta + math.pi) % (2 * math.pi) - math.pi
    return np.array([dz.real, dz.imag, dth])


def _shoot(model, g, p0, ell0, tol, integ_tol, max_iter, segment=1.5, dx=1e-7):
    """Multiple shooting for phi_L(p) = g p.

    The hyperbolic orbit is cut into k pieces of length <= ``segment``; node
    i is stored as a point w_i near the fundamental domain together with a
    fixed group element gamma_i (gamma_i w_i lies on the lift).  Unknowns are
    the normal and angle offsets of node 0, the nodes 1..k-1 and the period;
    Newton runs on the 3k matching conditions with a finite-difference
    Jacobian assembled block by block.  When the line search stalls the
    difference step is cut by 100 (twice at most); near convergence the
    truncation error of a coarse step can exceed the residual.
    """
    group = model.group
    k = max(1, int(math.ceil(ell0 / segment)))
    n0 = 1j * np.exp(1j * p0.theta)
    scale = (1.0 - abs(p0.z) ** 2) / 2.0
    gam = [np.eye(2, dtype=complex)]
    nodes = [p0]
    for i in range(1, k):
        zi, thi = exact_flow_arrays(1.0, p0.z, p0.theta, i * ell0 / k)
        w, h = group.reduce(complex(zi))
        nodes.append(deck_transform(h, PhasePoint(complex(zi), float(thi))))
        gam.append(np.linalg.inv(h))
    gam.append(g)
    rel = [np.linalg.solve(gam[i], gam[i + 1]) for i in range(k)]

    def node(x, i):
        if i % k == 0:
            return PhasePoint(p0.z + x[0] * scale * n0, p0.theta + x[1])
        j = 2 + 3 * (i - 1)
        return PhasePoint(complex(x[j], x[j + 1]), x[j + 2])

    def segment_run(x, i):
        y, _, A = _end_and_target(model, rel[i], node(x, i), x[-1] / k, integ_tol)
        return y, A

    def block(x, i, run):
        y, A = run
        q = deck_transform(A @ rel[i], node(x, i + 1))
        return _gap(y, q)

    def residual(x):
        runs = [segment_run(x, i) for i in range(k)]
        return np.concatenate([block(x, i, runs[i]) for i in range(k)]), runs

    phi_mean = float(np.mean(model.phi(np.array([p0.z]))))
    x = np.zeros(3 * k)
    for i in range(1, k):
        j = 2 + 3 * (i - 1)
        x[j:j + 3] = nodes[i].z.real, nodes[i].z.imag, nodes[i].theta
    x[-1] = ell0 * math.exp(phi_mean)
    r, runs = residual(x)
    dx_min = dx * 1e-4
    for _ in range(max_iter):
        if np.linalg.norm(r) <= tol:
            return node(x, 0), float(x[-1])
        J = np.zeros((3 * k, 3 * k))
        for c in range(3 * k - 1):
            i = 0 if c < 2 else 1 + (c - 2) // 3          # node owning unknown c
            xp = x.copy()
            xp[c] += dx
            # as a start point of segment i
            J[3 * i:3 * i + 3, c] = (block(xp, i, segment_run(xp, i)) - r[3 * i:3 * i + 3]) / dx
            # as the target of segment i - 1
            im = (i - 1) % k
            if im != i:
                J[3 * im:3 * im + 3, c] = (block(xp, im, runs[im]) - r[3 * im:3 * im + 3]) / dx
            else:
                J[3 * i:3 * i + 3, c] = (block(xp, i, segment_run(xp, i)) - r[3 * i:3 * i + 3]) / dx
        xp = x.copy()
        xp[-1] += dx
        J[:, -1] = (residual(xp)[0] - r) / dx
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise NoClosure(f"singular shooting Jacobian: {exc}") from exc
        lam = 1.0
        while True:
            xn = x + lam * step
            try:
                rn, rruns = residual(xn)
            except NumericalError:
                rn = None
            if rn is not None and np.linalg.norm(rn) < np.linalg.norm(r):
                break
            lam *= 0.5
            if lam < 1e-3:
                break
        if lam < 1e-3:
            if dx <= dx_min * 1.5:
                raise NoClosure(f"line search failed at residual {np.linalg.norm(r):.3e}")
            dx *= 0.01
            continue
        x, r, runs = xn, rn, rruns
    if np.linalg.norm(r) <= tol:
        return node(x, 0), float(x[-1])
    raise NoClosure(f"residual {np.linalg.norm(r):.3e} after {max_iter} Newton steps")


def poincare_data(model, geo, tol=1e-12):
    """(P, Lambda, |det(I - P)|) from Jacobi transport over one period."""
    P, _ = _transport_matrix(model, geo.base_point, geo.length, tol)
    w = np.linalg.eigvals(P)
    rad = float(np.max(np.abs(w)))
    if abs(rad - 1.0) < 1e-6:
        raise DegenerateOrbit(f"Poincare eigenvalues {w} near the unit circle")
    return P, math.log(rad), float(abs(np.linalg.det(np.eye(2) - P)))


def close_all(model, classes, tol=1e-9, use_symmetry=True):
    """Close every class; reversed orientations reuse (length, Lambda).

    Time reversal maps the unstable bundle of an orbit onto the stable bundle
    of the reversed orbit and det P = 1, so both orientations share Lambda.
    """
    out = []
    done = {}
    group = model.group
    for c in classes:
        inv = min_rotation(cyclic_reduce(inverse_word(c.word)))
        if use_symmetry and inv in done:
            src = done[inv]
            out.append(ClosedGeodesic(c.word, src.length, src.unstable_exponent,
                                      src.base_point, src.closure_residual, src.poincare,
                                      src.poincare_det))
            continue
        geo = close_geodesic(model, c.word, tol=tol)
        done[c.word] = geo
        out.append(geo)
    return out


def write_orbits_csv(path, orbits, config_hash=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["word", "length", "lambda", "det_term", "residual"]
        if config_hash is not None:
            head.append("config_hash")
        w.writerow(head)
        for o in orbits:
            det = float(abs(np.linalg.det(np.eye(2) - o.poincare))) if o.poincare is not None else ""
            row = [word_to_str(o.word), repr(o.length), repr(o.unstable_exponent),
                   repr(det), repr(o.closure_residual)]
            if config_hash is not None:
                row.append(config_hash)
            w.writerow(row)


# ---------------------------------------------------------------------------
# pressure


@dataclass
class PressureCurve:
    qs: np.ndarray
    beta: np.ndarray
    stderr: np.ndarray
    window: tuple
    orbit_count: int
    gamma0_hat: float
    replicates: np.ndarray = field(repr=False)
    weighted: bool = True

    @property
    def samples(self):
        return list(zip(self.qs.tolist(), self.beta.tolist(), self.stderr.tolist()))

    def at(self, q):
        i = int(np.argmin(np.abs(self.qs - q)))
        if abs(self.qs[i] - q) > 1e-12:
            raise KeyError(f"q={q} not sampled")
        return float(self.beta[i]), float(self.stderr[i])

    @property
    def delta0_hat(self):
        return self.at(2.0)[0] / 2.0

    @property
    def htop_hat(self):
        return self.at(0.0)[0]

    def combo_stderr(self, coef):
        """Jackknife standard error of sum_k coef[k] * beta[k]."""
        coef = np.asarray(coef, dtype=float)
        vals = self.replicates @ coef
        m = len(vals)
        return float(math.sqrt((m - 1) / m * np.sum((vals - vals.mean()) ** 2)))


def _log_window_integral(P, intervals, T):
    """log of int over the intervals of exp(P (s - T)) ds."""
    tot = 0.0
    for a, b in intervals:
        a, b = a - T, b - T
        if abs(P) < 1e-12:
            tot += b - a
        else:
            tot += math.exp(P * a) * math.expm1(P * (b - a)) / P
    return math.log(tot)


def _window_beta(l, lam, qs, T, weighted, intervals=None):
    """(1/T) log of the window sums, or with ``intervals`` the rate P that
    solves log sum = P T + log int_W exp(P (s - T)) ds."""
    if len(l) == 0:
        return None
    out = np.empty(len(qs))
    for i, q in enumerate(qs):
        x = -q * lam + (np.log(l) if weighted else 0.0)
        m = x.max()
        logsum = m + math.log(np.sum(np.exp(x - m)))
        if intervals is None:
            out[i] = logsum / T
        else:
            def f(P):
                return P * T + _log_window_integral(P, intervals, T) - logsum
            P0 = logsum / T
            out[i] = brentq(f, P0 - 5.0, P0 + 5.0, xtol=1e-14)
    return out


def pressure_curve(orbits, qs, T, n_sub=10, weighted=True, window_correction=False):
    """betaHat(q) from the periodic orbits with length in [T, T+1].

    ``weighted=True`` sums l(gamma) e^{-q Lambda}: weighting each primitive
    orbit by its length removes the 1/T prime-orbit factor, whose log T / T
    bias is large at desk-scale T.  ``weighted=False`` is the plain sum.

    The weighted window sum behaves like int_T^{T+1} e^{P s} ds, so
    (1/T) log of it carries the bias log((e^P - 1)/P) / T; it is about
    +-0.05 at T = 10 and adds about 1/(12 T) to every second difference.
    ``window_correction=True`` solves for P instead (weighted sums only).

    Error bars: delete-one-sub-window jackknife over the occupied slices among
    ``n_sub`` equal ones; infinite when fewer than two are occupied.
    """
    if window_correction and not weighted:
        raise ValueError("the window correction needs weighted sums")
    qs = np.asarray(sorted(qs), dtype=float)
    # fixed summation order
    orbits = sorted(orbits, key=lambda o: (o.length, o.word))
    lengths = np.array([o.length for o in orbits])
    lams = np.array([o.unstable_exponent for o in orbits])
    inwin = (lengths >= T) & (lengths < T + 1.0)
    full = [(T, T + 1.0)] if window_correction else None
    beta = _window_beta(lengths[inwin], lams[inwin], qs, T, weighted, full)
    if beta is None:
        raise EmptyWindow(f"no closed geodesic with length in [{T}, {T + 1}]")
    sub = np.floor((lengths - T) * n_sub).astype(int)
    reps = []
    # empty slices would add copies of the full-window value
    for k in np.unique(sub[inwin]):
        keep = inwin & (sub != k)
        iv = None
        if window_correction:
            cut = (T + k / n_sub, T + (k + 1) / n_sub)
            iv = [(a, b) for a, b in ((T, cut[0]), (cut[1], T + 1.0)) if b > a]
        r = _window_beta(lengths[keep], lams[keep], qs, T, weighted, iv)
        if r is not None:
            reps.append(r)
    reps = np.array(reps)
    m = len(reps)
    if m >= 2:
        err = np.sqrt((m - 1) / m * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
    else:
        err = np.full(len(qs), np.inf)
    gamma0 = float(np.min(lams / lengths))
    return PressureCurve(qs, beta, err, (float(T), float(T) + 1.0), int(inwin.sum()),
                         gamma0, reps, weighted)


def write_pressure_csv(path, curve, config_hash=None):
    d0 = curve.delta0_hat if np.any(np.isclose(curve.qs, 2.0)) else float("nan")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["q", "beta_hat", "stderr", "T", "n_orbits", "delta0_hat", "gamma0_hat"]
        if config_hash is not None:
            head.append("config_hash")
        w.writerow(head)
        for q, b, e in curve.samples:
            row = [repr(q), repr(b), repr(e), repr(curve.window[0]), curve.orbit_count,
                   repr(d0), repr(curve.gamma0_hat)]
            if config_hash is not None:
                row.append(config_hash)
            w.writerow(row)


@dataclass
class AppendixAReport:
    convexity: list          # (q, second difference, stderr)
    convexity_margin: float
    convexity_stderr: float
    strict_margins: list     # (q, betaHat(q) + (q-1) gamma0Hat, stderr)
    derivatives: list        # (q, finite-difference beta', -gamma0Hat)

    def rows(self):
        out = [("convexity", q, v, s) for q, v, s in self.convexity]
        out += [("strict", q, v, s) for q, v, s in self.strict_margins]
        out += [("derivative", q, v, g) for q, v, g in self.derivatives]
        return out


def appendix_a_report(curve):
    """Convexity and strict-inequality margins of the sampled pressure curve."""
    qs = curve.qs
    n = len(qs)
    conv = []
    for i in range(1, n - 1):
        h1 = qs[i] - qs[i - 1]
        h2 = qs[i + 1] - qs[i]
        # second divided difference scaled to unit spacing
        c = np.zeros(n)
        c[i - 1] = 2.0 / (h1 * (h1 + h2))
        c[i] = -2.0 / (h1 * h2)
        c[i + 1] = 2.0 / (h2 * (h1 + h2))
        v = float(c @ curve.beta)
        conv.append((float(qs[i]), v, curve.combo_stderr(c)))
    if conv:
        j = int(np.argmin([v - 0.0 for _, v, _ in conv]))
        cm, cs = conv[j][1], conv[j][2]
    else:
        cm, cs = float("nan"), float("nan")
    strict = []
    g0 = curve.gamma0_hat
    for i, q in enumerate(qs):
        if q > 1.0:
            c = np.zeros(n)
            c[i] = 1.0
            strict.append((float(q), float(curve.beta[i] + (q - 1.0) * g0), curve.combo_stderr(c)))
    der = []
    for i in range(n - 1):
        d = (curve.beta[i + 1] - curve.beta[i]) / (qs[i + 1] - qs[i])
        der.append((float(0.5 * (qs[i] + qs[i + 1])), float(d), -g0))
    return AppendixAReport(conv, cm, cs, strict, der)
