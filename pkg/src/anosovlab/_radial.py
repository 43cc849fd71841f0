"""Rotation-invariant transport on the hyperbolic plane.

A function on the unit tangent bundle that is invariant under rotations
about the origin o is a function U(r, beta) of the distance r to o and the
angle beta between the direction and the outward radial direction.  Its
vertical Fourier modes are the Fourier modes of U in beta, so

    U(r, beta) = sum_n C_n(r) exp(i n beta) / sqrt(2 pi).

The pull-back e^{-tX} U at (r, beta) is U(r', beta') where (r', beta') is the
backward characteristic.  Everything is in curvature -1 units.

The characteristic is computed from the perpendicular dropped from o onto
the geodesic, which keeps all formulas free of cancellation for large r.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def backward_characteristic(r, beta, t):
    """(r', beta') of phi_{-t}(x, v) with d(o, x) = r and v at angle beta."""
    sb = math.sin(beta)
    # the backward path leaves x along -v, which makes angle |beta| with the
    # direction from x to o; A is that angle
    A = abs(beta)
    cosA = math.cos(A)
    rho = math.asinh(math.sinh(r) * abs(sb))
    # foot of the perpendicular from o, at signed distance p along the path
    T = math.tanh(r) * cosA
    if cosA > 0:
        e2 = math.exp(-2.0 * r)
        one_m_T = 2.0 * e2 / (1.0 + e2) + math.tanh(r) * 2.0 * math.sin(0.5 * A) ** 2
        p = 0.5 * math.log((1.0 + T) / one_m_T)
    else:
        p = math.atanh(T)
    q = t - p
    chq = math.cosh(q)
    shr = math.sinh(0.5 * rho)
    shq = math.sinh(0.5 * q)
    # cosh r' - 1 = 2 sinh^2(rho/2) cosh q + 2 sinh^2(q/2)
    half = shr * shr * chq + shq * shq
    rp = 2.0 * math.asinh(math.sqrt(half))
    psi = math.atan2(math.tanh(rho), math.sinh(abs(q)))
    if q > 0:
        bp = math.pi - psi
    else:
        bp = psi
    if sb < 0:
        bp = -bp
    return rp, bp


@njit(cache=True)
def _catmull(x):
    """Catmull-Rom weights for offsets -1, 0, 1, 2 at fractional position x."""
    x2 = x * x
    x3 = x2 * x
    return (-0.5 * x3 + x2 - 0.5 * x,
            1.5 * x3 - 2.5 * x2 + 1.0,
            -1.5 * x3 + 2.0 * x2 + 0.5 * x,
            0.5 * x3 - 0.5 * x2)


@njit(cache=True)
def _angle_nodes(r, per_unit, pad, db, bc):
    """Half-circle nodes beta in (0, pi) with weights.

    [bc, pi] carries uniform nodes of spacing at most db.  Below bc the
    characteristics pass close to o and r' changes on the scale e^{-r}, so
    (0, bc) is covered log-uniformly down to bc e^{-L}, L = r + pad.
    """
    nu = max(4, int(math.ceil((math.pi - bc) / db)))
    L = r + pad
    ng = max(4, int(math.ceil(per_unit * L)))
    b = np.empty(nu + ng)
    w = np.empty(nu + ng)
    hu = (math.pi - bc) / nu
    for j in range(nu):
        b[j] = bc + (j + 0.5) * hu
        w[j] = hu
    for j in range(ng):
        tau = (j + 0.5) / ng
        x = bc * math.exp(-L * (1.0 - tau))
        b[nu + j] = x
        w[nu + j] = L * x / ng
    return b, w


@njit(cache=True)
def build_nodes(radii, dr, R, t, per_unit, pad, db, bc, cubic):
    """Quadrature nodes on every output ring.

    Returns arrays (ring, beta, beta', weight, idx[4], w[4], parity[4]) with
    the radial interpolation stencil at r'.  Stencil entries beyond the
    Dirichlet radius R are -1.
    """
    nr = radii.shape[0]
    total = 0
    for i in range(nr):
        b, _ = _angle_nodes(radii[i], per_unit, pad, db, bc)
        total += 2 * b.shape[0]
    ring = np.empty(total, dtype=np.int64)
    beta = np.empty(total)
    betap = np.empty(total)
    wq = np.empty(total)
    idx = np.zeros((total, 4), dtype=np.int64)
    wts = np.zeros((total, 4))
    par = np.zeros((total, 4), dtype=np.int64)
    k = 0
    for i in range(nr):
        bs, ws = _angle_nodes(radii[i], per_unit, pad, db, bc)
        for side in range(2):
            for j in range(bs.shape[0]):
                b = bs[j] if side == 0 else -bs[j]
                ring[k] = i
                beta[k] = b
                wq[k] = ws[j]
                rp, bp = backward_characteristic(radii[i], b, t)
                betap[k] = bp
                if rp >= R:
                    for s in range(4):
                        idx[k, s] = -1
                    k += 1
                    continue
                x = rp / dr - 0.5
                i0 = int(math.floor(x))
                fr = x - i0
                if cubic:
                    c0, c1, c2, c3 = _catmull(fr)
                    cw = (c0, c1, c2, c3)
                    for s in range(4):
                        ii = i0 - 1 + s
                        sign = 1
                        if ii < 0:
                            ii = -ii - 1
                            sign = -1
                        idx[k, s] = ii if ii < nr else -1
                        wts[k, s] = cw[s]
                        par[k, s] = sign
                else:
                    for s in range(2):
                        ii = i0 + s
                        sign = 1
                        if ii < 0:
                            ii = -ii - 1
                            sign = -1
                        idx[k, s] = ii if ii < nr else -1
                        wts[k, s] = fr if s == 1 else 1.0 - fr
                        par[k, s] = sign
                    idx[k, 2] = -1
                    idx[k, 3] = -1
                k += 1
    return ring, beta, betap, wq, idx, wts, par


@njit(cache=True)
def apply(C, m0_in, m0_out, nout, ring, beta, betap, wq, idx, wts, par, nr):
    """out[i, b] = (1/sqrt(2pi)) int U_in(r', beta') e^{-i m beta} dbeta, m = m0_out + b.

    C[i, a] holds mode m0_in + a.  ``par`` = -1 marks reflected ghost rings,
    where mode n picks up (-1)^n.
    """
    nin = C.shape[1]
    out = np.zeros((nr, nout), dtype=np.complex128)
    inv = 1.0 / math.sqrt(2.0 * math.pi)
    for k in range(ring.shape[0]):
        if idx[k, 0] < 0 and idx[k, 1] < 0 and idx[k, 2] < 0 and idx[k, 3] < 0:
            continue
        e1 = complex(math.cos(betap[k]), math.sin(betap[k]))
        ph = complex(math.cos(m0_in * betap[k]), math.sin(m0_in * betap[k]))
        val = 0.0j
        for a in range(nin):
            n = m0_in + a
            c = 0.0j
            for s in range(4):
                ii = idx[k, s]
                if ii >= 0:
                    w = wts[k, s]
                    if par[k, s] < 0 and (n % 2) != 0:
                        w = -w
                    c += w * C[ii, a]
            val += c * ph
            ph *= e1
        val *= inv * inv * wq[k]
        i = ring[k]
        e1 = complex(math.cos(beta[k]), -math.sin(beta[k]))
        ph = complex(math.cos(m0_out * beta[k]), -math.sin(m0_out * beta[k]))
        for b in range(nout):
            out[i, b] += val * ph
            ph *= e1
    return out


@njit(cache=True)
def apply_adjoint(D, ringw, m0_in, nin, m0_out, ring, beta, betap, wq, idx, wts, par, nr):
    """Adjoint of ``apply`` for the inner product sum_i ringw[i] sum_n conj(a) b."""
    nout = D.shape[1]
    out = np.zeros((nr, nin), dtype=np.complex128)
    inv = 1.0 / math.sqrt(2.0 * math.pi)
    for k in range(ring.shape[0]):
        if idx[k, 0] < 0 and idx[k, 1] < 0 and idx[k, 2] < 0 and idx[k, 3] < 0:
            continue
        i = ring[k]
        e1 = complex(math.cos(beta[k]), math.sin(beta[k]))
        ph = complex(math.cos(m0_out * beta[k]), math.sin(m0_out * beta[k]))
        g = 0.0j
        for b in range(nout):
            g += D[i, b] * ph
            ph *= e1
        g *= inv * inv * wq[k] * ringw[i]
        if g == 0.0:
            continue
        e1 = complex(math.cos(betap[k]), -math.sin(betap[k]))
        ph = g * complex(math.cos(m0_in * betap[k]), -math.sin(m0_in * betap[k]))
        for a in range(nin):
            n = m0_in + a
            for s in range(4):
                ii = idx[k, s]
                if ii >= 0:
                    w = wts[k, s]
                    if par[k, s] < 0 and (n % 2) != 0:
                        w = -w
                    out[ii, a] += w * ph
            ph *= e1
    for ii in range(nr):
        for a in range(nin):
            out[ii, a] /= ringw[ii]
    return out
