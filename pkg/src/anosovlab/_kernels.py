"""Compiled inner loops: conformal metric evaluation and a DOP853 integrator.

Everything in here works on plain arrays so numba can compile it once and
cache it.  A model is flattened by ``geometry.SurfaceModel.kernel_params``
into the tuple ``P``::

    P = (kind, kappa, eps, r0, centers, cfac, side_a, side_b)

``kind`` is 0 for constant curvature and 1 for the periodic conformal
perturbation.  ``centers`` are the orbit points of the bump centre that can
touch the Dirichlet domain, ``cfac[k] = 2 / (1 - |c_k|^2)``, and ``side_a``,
``side_b`` hold the eight side pairings in SU(1,1) form ``z -> (a z + b) /
(conj(b) z + conj(a))``.

State layout for the integrator::

    [x, y, theta, (j1, j1', j2, j2'), (u, int u)]

with ``njac`` Jacobi pairs (0, 1 or 2) and an optional Riccati block.
"""

import math

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

N_STAGES = _dop.N_STAGES
A = np.ascontiguousarray(_dop.A[:N_STAGES, :N_STAGES])
B = np.ascontiguousarray(_dop.B)
C = np.ascontiguousarray(_dop.C[:N_STAGES])
E3 = np.ascontiguousarray(_dop.E3)
E5 = np.ascontiguousarray(_dop.E5)

STATUS_OK = 0
STATUS_STEP = 1
STATUS_BOUNDARY = 2
STATUS_RICCATI = 3
STATUS_MAXSTEPS = 4


@njit(cache=True)
def mobius(a, b, z):
    return (a * z + b) / (np.conj(b) * z + np.conj(a))


@njit(cache=True)
def compose(a1, b1, a2, b2):
    """SU(1,1) product g1 * g2 in (a, b) form."""
    return a1 * a2 + b1 * np.conj(b2), a1 * b2 + b1 * np.conj(a2)


@njit(cache=True)
def reduce_to_domain(z, side_a, side_b, hint):
    """Greedy reduction of z into the Dirichlet domain centred at 0.

    ``hint`` (length-2 complex array) holds the previous reducing element and
    is updated in place; starting from it keeps the loop to 0-1 passes along
    a trajectory.  Returns (w, a, b) with w = g(z), g = (a, b).
    """
    ga = hint[0]
    gb = hint[1]
    w = mobius(ga, gb, z)
    if abs(w) >= 1.0 or not np.isfinite(w.real):
        ga = 1.0 + 0.0j
        gb = 0.0j
        w = z
    for _ in range(400):
        best = abs(w)
        kbest = -1
        for k in range(side_a.shape[0]):
            v = mobius(side_a[k], side_b[k], w)
            av = abs(v)
            if av < best * (1.0 - 1e-14) - 1e-15:
                best = av
                kbest = k
        if kbest < 0:
            break
        w = mobius(side_a[kbest], side_b[kbest], w)
        ga, gb = compose(side_a[kbest], side_b[kbest], ga, gb)
    hint[0] = ga
    hint[1] = gb
    return w, ga, gb


@njit(cache=True)
def bump_profile(x):
    """Smooth step: 1 near 0, 0 for x >= 1.  Returns (b, b_x, b_xx)."""
    if x >= 1.0:
        return 0.0, 0.0, 0.0
    if x <= 1e-3:
        return 1.0, 0.0, 0.0
    rho = 1.0 / (1.0 - x) - 1.0 / x
    if rho > 700.0:
        return 0.0, 0.0, 0.0
    # s = 1 / (1 + e^rho); s(1 - s) and 1 - 2s are formed without cancellation
    e = math.exp(-abs(rho))
    if rho >= 0:
        s = e / (1.0 + e)
    else:
        s = 1.0 / (1.0 + e)
    sm = e / ((1.0 + e) * (1.0 + e))
    one_m_2s = math.tanh(0.5 * rho)
    r1 = 1.0 / (1.0 - x) ** 2 + 1.0 / x ** 2
    r2 = 2.0 / (1.0 - x) ** 3 - 2.0 / x ** 3
    b1 = -sm * r1
    b2 = one_m_2s * sm * r1 * r1 - sm * r2
    return s, b1, b2


@njit(cache=True)
def bump_field(w, eps, r0, centers, cfac):
    """phi, Euclidean complex gradient and hyperbolic Laplacian of the bump sum."""
    bw = 1.0 - (w.real * w.real + w.imag * w.imag)
    ucut = math.cosh(r0)
    phi = 0.0
    grad = 0.0j
    lap = 0.0
    for k in range(centers.shape[0]):
        c = centers[k]
        dwc = w - c
        a2 = dwc.real * dwc.real + dwc.imag * dwc.imag
        q = cfac[k] * a2 / bw
        if q >= ucut - 1.0:
            continue
        # cosh d = 1 + q, kept in this form for accuracy near the centre
        d = 2.0 * math.asinh(math.sqrt(0.5 * q))
        x = d / r0
        b, bx, bxx = bump_profile(x)
        phi += b
        if bx != 0.0 or bxx != 0.0:
            bd = bx / r0
            bdd = bxx / (r0 * r0)
            gu = cfac[k] * (2.0 * dwc * bw + 2.0 * w * a2) / (bw * bw)
            gd = gu / math.sqrt(q * (q + 2.0))
            grad += bd * gd
            lap += bdd + bd / math.tanh(d)
    return eps * phi, eps * grad, eps * lap


@njit(cache=True)
def metric_data(z, P, hint):
    """(grad of log conformal factor as complex, Gauss curvature, e^{-lambda}, phi)."""
    kind = P[0]
    kappa = P[1]
    bz = 1.0 - (z.real * z.real + z.imag * z.imag)
    ghyp = 2.0 * z / bz
    if kind == 0:
        return ghyp, -kappa * kappa, 0.5 * kappa * bz, 0.0
    eps = P[2]
    r0 = P[3]
    w, ga, gb = reduce_to_domain(z, P[6], P[7], hint)
    phi, gw, lap = bump_field(w, eps, r0, P[4], P[5])
    den = np.conj(gb) * z + np.conj(ga)
    gprime = 1.0 / (den * den)
    gz = np.conj(gprime) * gw
    K = math.exp(-2.0 * phi) * (-1.0 - lap)
    return ghyp + gz, K, 0.5 * bz * math.exp(-phi), phi


@njit(cache=True)
def rhs(y, out, P, hint, njac, ric):
    z = complex(y[0], y[1])
    g, K, em, _ = metric_data(z, P, hint)
    c = math.cos(y[2])
    s = math.sin(y[2])
    out[0] = em * c
    out[1] = em * s
    out[2] = em * (c * g.imag - s * g.real)
    i = 3
    for _ in range(njac):
        out[i] = y[i + 1]
        out[i + 1] = -K * y[i]
        i += 2
    if ric:
        out[i] = -K - y[i] * y[i]
        out[i + 1] = y[i]
    return K


@njit(cache=True)
def recenter(y, P, hint, acc):
    """Move the state into the fundamental domain (the origin when the
    curvature is constant) and left-compose the applied isometry into acc."""
    z = complex(y[0], y[1])
    if P[0] == 0:
        s = 1.0 / math.sqrt(1.0 - abs(z) ** 2)
        ga = complex(s, 0.0)
        gb = -z * s
        y[0] = 0.0
        y[1] = 0.0
    else:
        w, ga, gb = reduce_to_domain(z, P[6], P[7], hint)
        den = np.conj(gb) * z + np.conj(ga)
        gprime = 1.0 / (den * den)
        y[0] = w.real
        y[1] = w.imag
        y[2] += math.atan2(gprime.imag, gprime.real)
        hint[0] = 1.0 + 0.0j
        hint[1] = 0.0j
    a, b = compose(ga, gb, acc[0], acc[1])
    acc[0] = a
    acc[1] = b


@njit(cache=True)
def integrate(y0, times, P, hint, njac, ric, tol_unit, recentre, max_steps,
              ric_hi, chart):
    """Integrate from t=0 through the monotone list ``times`` (same sign).

    Error control is per unit step: the local error estimate of every step
    must stay below ``tol_unit * |h|``.  Returns (states, status, nsteps).
    ``ric_hi`` > 0 enables the Riccati range guard u in [0, ric_hi].
    Re-centring isometries are accumulated into ``chart`` (updated in place),
    so chart^{-1} maps the final chart back to the initial one.
    """
    n = y0.shape[0]
    nout = times.shape[0]
    outs = np.empty((nout, n))
    y = y0.copy()
    K = np.empty((N_STAGES + 1, n))
    f = np.empty(n)
    tmp = np.empty(n)
    ynew = np.empty(n)
    rhs(y, f, P, hint, njac, ric)
    t = 0.0
    status = STATUS_OK
    nsteps = 0
    if nout == 0:
        return outs, status, nsteps
    direction = 1.0 if times[nout - 1] >= 0 else -1.0
    h = 0.05 * direction
    ric_i = 3 + 2 * njac
    for io in range(nout):
        tend = times[io]
        while direction * (tend - t) > 1e-15:
            if nsteps >= max_steps:
                status = STATUS_MAXSTEPS
                break
            if direction * (t + h - tend) > 0:
                h = tend - t
            accepted = False
            while not accepted:
                K[0, :] = f
                for s in range(1, N_STAGES):
                    for j in range(n):
                        acc = 0.0
                        for m in range(s):
                            acc += A[s, m] * K[m, j]
                        tmp[j] = y[j] + h * acc
                    rhs(tmp, K[s], P, hint, njac, ric)
                for j in range(n):
                    acc = 0.0
                    for m in range(N_STAGES):
                        acc += B[m] * K[m, j]
                    ynew[j] = y[j] + h * acc
                zz = ynew[0] * ynew[0] + ynew[1] * ynew[1]
                if not (zz < 1.0):
                    h *= 0.25
                    if abs(h) < 1e-13:
                        status = STATUS_BOUNDARY
                        break
                    continue
                rhs(ynew, K[N_STAGES], P, hint, njac, ric)
                e5 = 0.0
                e3 = 0.0
                for j in range(n):
                    a5 = 0.0
                    a3 = 0.0
                    for m in range(N_STAGES + 1):
                        a5 += E5[m] * K[m, j]
                        a3 += E3[m] * K[m, j]
                    sc = max(1.0, abs(y[j]), abs(ynew[j]))
                    e5 += (a5 / sc) ** 2
                    e3 += (a3 / sc) ** 2
                if e5 == 0.0 and e3 == 0.0:
                    err = 0.0
                else:
                    err = e5 / math.sqrt((e5 + 0.01 * e3) * n)
                # err * |h| is the local error; compare with tol_unit * |h|
                ratio = err / tol_unit
                if ratio <= 1.0:
                    accepted = True
                    t += h
                    for j in range(n):
                        y[j] = ynew[j]
                        f[j] = K[N_STAGES, j]
                    nsteps += 1
                    if ratio == 0.0:
                        fac = 4.0
                    else:
                        fac = min(4.0, 0.9 * ratio ** (-1.0 / 7.0))
                    hn = h * fac
                    if abs(hn) > 0.5:
                        hn = 0.5 * direction
                    h = hn
                else:
                    h *= max(0.2, 0.9 * ratio ** (-1.0 / 7.0))
                    if abs(h) < 1e-12:
                        status = STATUS_STEP
                        break
            if status != STATUS_OK:
                break
            if ric and ric_hi > 0.0:
                u = y[ric_i]
                if u < -1e-9 or u > ric_hi:
                    status = STATUS_RICCATI
                    break
            if recentre and y[0] * y[0] + y[1] * y[1] > 0.25:
                recenter(y, P, hint, chart)
                rhs(y, f, P, hint, njac, ric)
        if status != STATUS_OK:
            for j in range(io, nout):
                for k in range(n):
                    outs[j, k] = y[k]
            break
        for k in range(n):
            outs[io, k] = y[k]
    return outs, status, nsteps


@njit(cache=True)
def curvature_many(zs, P, hint):
    out = np.empty(zs.shape[0])
    for i in range(zs.shape[0]):
        _, K, _, _ = metric_data(zs[i], P, hint)
        out[i] = K
    return out


@njit(cache=True)
def phi_many(zs, P, hint):
    out = np.empty(zs.shape[0])
    for i in range(zs.shape[0]):
        _, _, _, phi = metric_data(zs[i], P, hint)
        out[i] = phi
    return out


@njit(cache=True)
def flow_many(z0, th0, ts, P, tol_unit, max_steps):
    """Endpoints of many independent geodesics; used by grid operators."""
    m = z0.shape[0]
    zout = np.empty(m, dtype=np.complex128)
    thout = np.empty(m)
    status = np.zeros(m, dtype=np.int64)
    hint = np.array([1.0 + 0.0j, 0.0j])
    acc = np.array([1.0 + 0.0j, 0.0j])
    times = np.empty(1)
    y0 = np.empty(3)
    for i in range(m):
        y0[0] = z0[i].real
        y0[1] = z0[i].imag
        y0[2] = th0[i]
        times[0] = ts[i]
        if ts[i] == 0.0:
            zout[i] = z0[i]
            thout[i] = th0[i]
            continue
        outs, st, _ = integrate(y0, times, P, hint, 0, False, tol_unit, False,
                                max_steps, 0.0, acc)
        zout[i] = complex(outs[0, 0], outs[0, 1])
        thout[i] = outs[0, 2]
        status[i] = st
    return zout, thout, status


@njit(cache=True)
def jacobian_many(z0, th0, ts, P, tol_unit, max_steps):
    """j(t) with j(0)=0, j'(0)=1 along many rays; charts are re-centred."""
    m = z0.shape[0]
    jout = np.empty(m)
    status = np.zeros(m, dtype=np.int64)
    hint = np.array([1.0 + 0.0j, 0.0j])
    acc = np.array([1.0 + 0.0j, 0.0j])
    times = np.empty(1)
    y0 = np.empty(5)
    for i in range(m):
        y0[0] = z0[i].real
        y0[1] = z0[i].imag
        y0[2] = th0[i]
        y0[3] = 0.0
        y0[4] = 1.0
        times[0] = ts[i]
        if ts[i] == 0.0:
            jout[i] = 0.0
            continue
        acc[0] = 1.0 + 0.0j
        acc[1] = 0.0j
        outs, st, _ = integrate(y0, times, P, hint, 1, False, tol_unit, True,
                                max_steps, 0.0, acc)
        jout[i] = outs[0, 3]
        status[i] = st
    return jout, status
