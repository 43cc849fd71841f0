"""Compiled breadth-first search of group elements and axis canonicalisation.

Elements are SU(1,1) pairs (a, b).  The hyperboloid coordinates of the
orbit point g(0) are X = 2 a b (complex, for the two spatial coordinates);
distinct orbit points are at least the systole apart in X, so a hash on
unit cells of X with a 3x3 neighbourhood probe dedupes exactly.
"""

import math

import numpy as np
from numba import njit

from ._kernels import compose, mobius, reduce_to_domain


@njit(cache=True)
def _cell_hash(cx, cy, mask):
    h = (cx * 73856093) ^ (cy * 19349663)
    return h & mask


@njit(cache=True)
def _lookup(tx, ty, tv, mask, X, xa, xb, tol):
    cx0 = int(math.floor(X.real))
    cy0 = int(math.floor(X.imag))
    for dx in range(-1, 2):
        for dy in range(-1, 2):
            cx = cx0 + dx
            cy = cy0 + dy
            s = _cell_hash(cx, cy, mask)
            while tv[s] >= 0:
                if tx[s] == cx and ty[s] == cy:
                    k = tv[s]
                    if abs(xa[k] * xb[k] * 2.0 - X) <= tol:
                        return k
                s = (s + 1) & mask
    return -1


@njit(cache=True)
def _insert(tx, ty, tv, mask, X, k):
    cx = int(math.floor(X.real))
    cy = int(math.floor(X.imag))
    s = _cell_hash(cx, cy, mask)
    while tv[s] >= 0:
        s = (s + 1) & mask
    tx[s] = cx
    ty[s] = cy
    tv[s] = k


@njit(cache=True)
def bfs_ball(side_a, side_b, explore, cap):
    """Elements g with d(0, g 0) <= explore reachable through such elements.

    Returns (a, b, dist, parent, letter, n, overflow).  ``letter`` indexes
    side_a/side_b; element k = element parent[k] * side[letter[k]].
    """
    size = 1
    while size < 4 * cap:
        size *= 2
    mask = size - 1
    tx = np.zeros(size, dtype=np.int64)
    ty = np.zeros(size, dtype=np.int64)
    tv = -np.ones(size, dtype=np.int64)
    ea = np.empty(cap, dtype=np.complex128)
    eb = np.empty(cap, dtype=np.complex128)
    dist = np.empty(cap)
    parent = np.empty(cap, dtype=np.int64)
    letter = np.empty(cap, dtype=np.int64)
    ea[0] = 1.0 + 0.0j
    eb[0] = 0.0j
    dist[0] = 0.0
    parent[0] = -1
    letter[0] = -1
    _insert(tx, ty, tv, mask, 0.0j, 0)
    n = 1
    head = 0
    coshmax = math.cosh(explore / 2.0)
    nside = side_a.shape[0]
    while head < n:
        a0 = ea[head]
        b0 = eb[head]
        for k in range(nside):
            a, b = compose(a0, b0, side_a[k], side_b[k])
            if abs(a) > coshmax:
                continue
            X = 2.0 * a * b
            tol = 1e-6 * (1.0 + abs(X))
            if _lookup(tx, ty, tv, mask, X, ea, eb, tol) >= 0:
                continue
            if n >= cap:
                return ea, eb, dist, parent, letter, n, True
            ea[n] = a
            eb[n] = b
            dist[n] = 2.0 * math.acosh(max(abs(a), 1.0))
            parent[n] = head
            letter[n] = k
            _insert(tx, ty, tv, mask, X, n)
            n += 1
        head += 1
    return ea, eb, dist, parent, letter, n, False


@njit(cache=True)
def _line_rho(e1, e2):
    """Distance from 0 to the geodesic with ideal endpoints e1, e2."""
    den = abs(e1 - e2)
    if den <= 1e-300:
        return 1e300
    return math.asinh(abs(e1 + e2) / den)


@njit(cache=True)
def _angle(z):
    a = math.atan2(z.imag, z.real)
    if a < 0:
        a += 2.0 * math.pi
    if a > 2.0 * math.pi - 1e-10:
        a = 0.0
    return a


@njit(cache=True)
def canonical_chord(xm, xp, foot, rot, length, side_a, side_b, step):
    """Canonical lift of the closed geodesic with axis (xm -> xp).

    Walks one period of the axis, reducing sample points into the domain and
    collecting the lifts g(axis) for the reducing g and its side neighbours.
    Returns (rho, angle_minus, angle_plus) of the lift closest to 0, ties
    broken by the smaller endpoint angles.
    """
    hint = np.array([1.0 + 0.0j, 0.0j])
    nstep = int(math.ceil(length / step)) + 1
    best_rho = 1e300
    best_m = 10.0
    best_p = 10.0
    # the axis point at arclength s is T(rot * tanh(s/2)), T(w) = (w + f)/(1 + conj(f) w)
    for i in range(nstep):
        s = length * i / (nstep - 1)
        w = rot * math.tanh(s / 2.0)
        z = (w + foot) / (1.0 + np.conj(foot) * w)
        _, ga, gb = reduce_to_domain(z, side_a, side_b, hint)
        for k in range(-1, side_a.shape[0]):
            if k < 0:
                a = ga
                b = gb
            else:
                a, b = compose(side_a[k], side_b[k], ga, gb)
            em = mobius(a, b, xm)
            ep = mobius(a, b, xp)
            em = em / abs(em)
            ep = ep / abs(ep)
            rho = _line_rho(em, ep)
            am = _angle(em)
            ap = _angle(ep)
            if rho < best_rho - 1e-7:
                best_rho = rho
                best_m = am
                best_p = ap
            elif rho <= best_rho + 1e-7:
                if am < best_m - 1e-7 or (am <= best_m + 1e-7 and ap < best_p):
                    best_rho = min(rho, best_rho)
                    best_m = am
                    best_p = ap
    return best_rho, best_m, best_p
