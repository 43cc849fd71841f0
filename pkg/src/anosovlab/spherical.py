"""Spherical means on the universal cover.

The spherical mean L_t f(x) is the average of f over the endpoints of the
unit-speed geodesics of length t leaving x.  This module carries the
Jacobian J(x, y), norm estimators for L_t from above (power iteration) and
from below (an explicit test function), closed-form hyperbolic oracles,
annulus and Poincare-series pressure estimates, and a few diagnostics of
the thin-triangle geometry.

Points of the cover are complex numbers in the unit disk; directions are
angles.  Hyperbolic radii refer to the disk metric 4|dz|^2/(1-|z|^2)^2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, sparse
from scipy.special import gammaln

from . import _kernels as kern
from . import _radial
from .errors import FitFailure, NoConvergence, OutOfDomain
from .geometry import (DEFAULT_TOL, ConstantCurvature, JacobiState, PhasePoint,
                       _run, _tol_unit, connect, disk_distance, exact_flow_arrays,
                       jacobi_transport, unstable_riccati)
from .orbits import group_ball

# ---------------------------------------------------------------------------
# vectorised flow helpers


def _endpoints(model, z, th, t, tol=DEFAULT_TOL):
    """Base points and directions of phi_t at arrays (z, th)."""
    z = np.asarray(z, dtype=complex)
    th = np.asarray(th, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), z.shape)
    if isinstance(model, ConstantCurvature):
        zz = np.empty(z.shape, complex)
        tt = np.empty(z.shape)
        for s in np.unique(t):
            m = t == s
            zz[m], tt[m] = exact_flow_arrays(model.kappa, z[m], th[m], s)
        return zz, tt
    tu = _tol_unit(model, float(np.max(np.abs(t))) if t.size else 0.0, tol)
    zz, tt, st = kern.flow_many(z.ravel(), th.ravel(), np.ascontiguousarray(t.ravel()),
                                model.kernel_params(), tu, 2_000_000)
    if np.any(st != 0):
        from .errors import StepFailure
        raise StepFailure(f"{int(np.sum(st != 0))} trajectories failed")
    return zz.reshape(z.shape), tt.reshape(z.shape)


def _jacobians(model, z, th, t, tol=DEFAULT_TOL):
    """j(t) with j(0)=0, j'(0)=1 along the geodesics from (z, th)."""
    z = np.asarray(z, dtype=complex)
    t = np.broadcast_to(np.asarray(t, dtype=float), z.shape)
    if isinstance(model, ConstantCurvature):
        k = model.kappa
        return np.sinh(k * t) / k
    th = np.broadcast_to(np.asarray(th, dtype=float), z.shape)
    tu = _tol_unit(model, float(np.max(np.abs(t))) if t.size else 0.0, tol)
    j, st = kern.jacobian_many(z.ravel(), np.ascontiguousarray(th.ravel()),
                               np.ascontiguousarray(t.ravel()),
                               model.kernel_params(), tu, 2_000_000)
    if np.any(st != 0):
        from .errors import StepFailure
        raise StepFailure(f"{int(np.sum(st != 0))} Jacobi solves failed")
    return j.reshape(z.shape)


def _distances(model, x, y):
    """Model distances between the entries of x and y."""
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    if isinstance(model, ConstantCurvature):
        return disk_distance(x, y) / model.kappa
    x, y = np.broadcast_arrays(x, y)
    out = np.empty(x.shape)
    for i in np.ndindex(x.shape):
        out[i] = connect(model, x[i], y[i])[0]
    return out


def _volume_factor(model, z):
    """Density of the model area form against the hyperbolic one."""
    return np.exp(2.0 * model.phi(np.asarray(z, dtype=complex)))


# ---------------------------------------------------------------------------
# Jacobians


def radial_jacobian(model, x, v, t, tol=DEFAULT_TOL):
    """J(x, exp_x(t v)): the Jacobi field j(t) with j(0)=0, j'(0)=1."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 0.0
    return jacobi_transport(model, PhasePoint(complex(x), float(v)), t,
                            JacobiState(0.0, 1.0), tol=tol).j


def jacobian(model, x, y, tol=DEFAULT_TOL):
    """J(x, y) through the connecting geodesic from x."""
    d, th = connect(model, x, y)
    return radial_jacobian(model, x, th, d, tol=tol)


def modified_jacobian(model, x, y, tol=DEFAULT_TOL):
    """1 inside distance 1, J(x, y) beyond."""
    d, th = connect(model, x, y)
    if d <= 1.0:
        return 1.0
    return radial_jacobian(model, x, th, d, tol=tol)


def aligned_triple_ratio(model, x, z, s):
    """J~(x,z) / (J~(x,y) J~(y,z)) for y on [x, z] at distance s from x."""
    d, th = connect(model, x, z)
    y = _endpoints(model, np.array([x]), np.array([th]), s)[0][0]
    return (modified_jacobian(model, x, z)
            / (modified_jacobian(model, x, y) * modified_jacobian(model, y, z)))


# ---------------------------------------------------------------------------
# spheres


@dataclass
class SphereQuadrature:
    center: complex
    radius: float
    directions: np.ndarray
    endpoints: np.ndarray
    jacobians: np.ndarray


def sphere_quadrature(model, x, t, n_directions=64, offset=0.5):
    th = 2.0 * math.pi * (np.arange(n_directions) + offset) / n_directions
    z0 = np.full(n_directions, complex(x))
    ends, _ = _endpoints(model, z0, th, t)
    jac = _jacobians(model, z0, th, t) if t > 0 else np.zeros(n_directions)
    return SphereQuadrature(complex(x), float(t), th, ends, jac)


def _evaluate(f, z):
    if isinstance(f, BallGridFunction):
        return f.evaluate(z)
    return np.asarray(f(z))


def apply_spherical_mean(model, f, x, t, n_directions=64, form="direction"):
    """L_t f(x).

    ``form="direction"`` averages f over the endpoints of equally spaced
    directions.  ``form="surface"`` integrates J^{-1} f against the arclength
    of the sphere S(x, t), measured from the polygon through the endpoints;
    the two agree up to quadrature error.
    """
    if n_directions < 16:
        raise ValueError("n_directions must be >= 16")
    if t == 0:
        return _evaluate(f, np.array([complex(x)]))[0]
    q = sphere_quadrature(model, x, t, n_directions)
    vals = _evaluate(f, q.endpoints)
    if form == "direction":
        return vals.mean()
    if form != "surface":
        raise ValueError(f"unknown form {form!r}")
    # arclength of the arc over [theta_i - d/2, theta_i + d/2]: two half
    # chords and one full chord, combined by Richardson extrapolation
    half = sphere_quadrature(model, x, t, n_directions, offset=0.0).endpoints
    nxt = np.roll(half, -1)
    fine = _distances(model, half, q.endpoints) + _distances(model, q.endpoints, nxt)
    coarse = _distances(model, half, nxt)
    ds = (4.0 * fine - coarse) / 3.0
    return np.sum(vals / q.jacobians * ds) / (2.0 * math.pi)


# ---------------------------------------------------------------------------
# ball grids


@dataclass
class BallGridFunction:
    """Values on rings of nodes filling the hyperbolic ball B(0, R).

    Ring i sits at hyperbolic radius (i + 1/2) h and carries enough nodes
    that neighbours are at most h apart.  Weights are model areas.
    """

    radius: float
    h: float
    ring_r: np.ndarray
    ring_n: np.ndarray
    ring_start: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray = None

    @classmethod
    def build(cls, radius, h, model=None, values=None):
        nr = int(math.ceil(radius / h))
        ring_r = (np.arange(nr) + 0.5) * h
        ring_n = np.maximum(6, np.ceil(2.0 * math.pi * np.sinh(ring_r) / h)).astype(int)
        ring_start = np.concatenate([[0], np.cumsum(ring_n)[:-1]])
        pts = []
        wts = []
        for i, (r, n) in enumerate(zip(ring_r, ring_n)):
            a = 2.0 * math.pi * (np.arange(n) + 0.5 * (i % 2)) / n
            pts.append(math.tanh(r / 2.0) * np.exp(1j * a))
            wts.append(np.full(n, 2.0 * math.pi * math.sinh(r) * h / n))
        nodes = np.concatenate(pts)
        weights = np.concatenate(wts)
        if model is not None:
            weights = weights * _volume_factor(model, nodes)
        if values is None:
            values = np.zeros(nodes.shape)
        return cls(float(radius), float(h), ring_r, ring_n, ring_start, nodes, weights,
                   np.asarray(values))

    def __len__(self):
        return len(self.nodes)

    def with_values(self, values):
        return BallGridFunction(self.radius, self.h, self.ring_r, self.ring_n,
                                self.ring_start, self.nodes, self.weights,
                                np.asarray(values))

    def norm(self):
        return float(np.sqrt(np.sum(self.weights * np.abs(self.values) ** 2)))

    def _ring_stencil(self, i, a):
        """(indices, weights) for linear interpolation in angle on ring i."""
        n = self.ring_n[i]
        x = a * n / (2.0 * math.pi) - 0.5 * (i % 2)
        k0 = np.floor(x).astype(int)
        fr = x - k0
        return (self.ring_start[i] + k0 % n, self.ring_start[i] + (k0 + 1) % n,
                1.0 - fr, fr)

    def interpolation_matrix(self, z, order=1, outside="raise"):
        """Sparse matrix M with (M @ values) = interpolant at the points z.

        Points beyond the ball raise OutOfDomain, or give zero rows with
        ``outside="zero"``.
        """
        z = np.asarray(z, dtype=complex).ravel()
        r = 2.0 * np.arctanh(np.minimum(np.abs(z), 1.0 - 1e-16))
        a = np.mod(np.angle(z), 2.0 * math.pi)
        out = r > self.radius
        if np.any(out) and outside == "raise":
            raise OutOfDomain(f"{int(out.sum())} points beyond radius {self.radius}")
        nr = len(self.ring_r)
        x = r / self.h - 0.5
        i0 = np.floor(x).astype(int)
        fr = x - i0
        if order == 1:
            offs = [0, 1]
            rw = [1.0 - fr, fr]
        elif order == 3:
            offs = [-1, 0, 1, 2]
            rw = list(_catmull_np(fr))
        else:
            raise ValueError("order must be 1 or 3")
        rows, cols, vals = [], [], []
        pid = np.arange(len(z))
        for off, w in zip(offs, rw):
            ii = i0 + off
            # the centre: reflect through the origin onto the opposite ring
            ang = np.where(ii < 0, a + math.pi, a)
            ii = np.where(ii < 0, -ii - 1, ii)
            ok = (ii < nr) & ~out
            for ring in np.unique(ii[ok]):
                m = ok & (ii == ring)
                c0, c1, w0, w1 = self._ring_stencil(ring, ang[m])
                rows += [pid[m], pid[m]]
                cols += [c0, c1]
                vals += [w[m] * w0, w[m] * w1]
        if rows:
            rows = np.concatenate(rows)
            cols = np.concatenate(cols)
            vals = np.concatenate(vals)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(len(z), len(self.nodes)))

    def evaluate(self, z, order=1):
        z = np.asarray(z, dtype=complex)
        return (self.interpolation_matrix(z, order) @ self.values).reshape(z.shape)


def _catmull_np(x):
    x2 = x * x
    x3 = x2 * x
    return (-0.5 * x3 + x2 - 0.5 * x,
            1.5 * x3 - 2.5 * x2 + 1.0,
            -1.5 * x3 + 2.0 * x2 + 0.5 * x,
            0.5 * x3 - 0.5 * x2)


# ---------------------------------------------------------------------------
# norm of L_t from above


@dataclass(frozen=True)
class GridSpec:
    """Resolution of the discretised operators.

    ``h`` is the radial (and, for ball grids, nodal) spacing.  On the
    rotation-invariant path directions use a uniform spacing ``db`` above
    the angle ``bc`` and ``per_unit`` log-uniform nodes per unit of depth
    below it, to depth r + ``pad``.  ``n_directions`` is the sphere
    quadrature size on ball grids.
    """

    h: float = 0.05
    per_unit: float = 10.0
    pad: float = 4.0
    db: float = 0.05
    bc: float = 0.5
    n_directions: int = 32
    order: int = 3

    def for_modes(self, nmax):
        """Same grid with angles fine enough for |modes| <= nmax."""
        if nmax <= 0:
            return self
        db = min(self.db, 0.25 / nmax)
        bc = min(self.bc, 1.0 / nmax)
        return GridSpec(self.h, self.per_unit, self.pad, db, bc, self.n_directions, self.order)


@dataclass
class NormEstimate:
    norm: float
    iterations: int
    R: float
    h: float
    history: list = field(default_factory=list)


ISOTROPIC_RADIUS = 80.0


def _power(apply_op, apply_adj, x0, inner, tol, max_iter):
    x = x0 / math.sqrt(inner(x0, x0))
    lam_old = None
    hist = []
    for it in range(1, max_iter + 1):
        z = apply_adj(apply_op(x))
        lam = math.sqrt(inner(z, z))
        hist.append(lam)
        if lam == 0.0:
            return 0.0, it, hist
        x = z / lam
        if lam_old is not None and abs(lam - lam_old) <= tol * lam:
            return lam, it, hist
        lam_old = lam
    raise NoConvergence(f"power iteration: relative change {abs(lam - lam_old) / lam:.2e} "
                        f"after {max_iter} iterations")


def radial_operator(kappa, t, R, grid, modes_in=(0, 0), modes_out=(0, 0)):
    """Rotation-invariant discretisation of e^{-tX} between bands of vertical modes.

    ``modes_in`` and ``modes_out`` are inclusive ranges (lo, hi).  Returns
    (apply, adjoint, ring weights, radii) acting on coefficient arrays
    C[ring, mode - lo].
    """
    h = grid.h
    nr = int(round(R / h))
    radii = (np.arange(nr) + 0.5) * h
    ringw = 2.0 * math.pi * np.sinh(radii) * h
    nodes = _radial.build_nodes(radii, h, nr * h, kappa * t, grid.per_unit, grid.pad,
                                grid.db, grid.bc, grid.order == 3)
    lo_i, hi_i = modes_in
    lo_o, hi_o = modes_out

    def op(C):
        return _radial.apply(np.ascontiguousarray(C, dtype=complex), lo_i, lo_o,
                             hi_o - lo_o + 1, *nodes, nr)

    def adj(D):
        return _radial.apply_adjoint(np.ascontiguousarray(D, dtype=complex), ringw,
                                     lo_i, hi_i - lo_i + 1, lo_o, *nodes, nr)

    return op, adj, ringw, radii


def sm_norm_power(model, t, R=None, grid=None, tol=1e-4, max_iter=500):
    """Largest singular value of the discretised L_t on a Dirichlet ball.

    Constant curvature models use the reduction to rotation-invariant
    functions, which makes a large ball cheap (default radius 80 in
    hyperbolic units).  Other models use a ball grid, default R = t + 2.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    grid = grid or GridSpec()
    if model.isotropic:
        kappa = model.kappa
        R = ISOTROPIC_RADIUS if R is None else float(R)
        if R < kappa * t + 2.0:
            raise ValueError("R must be at least t + 2")
        if t == 0:
            return NormEstimate(1.0, 0, R, grid.h)
        op, adj, ringw, radii = radial_operator(kappa, t, R, grid)

        def inner(a, b):
            return float(np.real(np.sum(ringw[:, None] * np.conj(a) * b)))

        x0 = np.exp(-0.5 * radii)[:, None].astype(complex)
        lam, it, hist = _power(op, adj, x0, inner, tol, max_iter)
        return NormEstimate(math.sqrt(lam), it, R, grid.h, hist)

    R = t + 2.0 if R is None else float(R)
    if R < t + 2.0:
        raise ValueError("R must be at least t + 2")
    ball = BallGridFunction.build(R, grid.h, model)
    M = spherical_mean_matrix(model, ball, t, grid.n_directions, grid.order)
    w = ball.weights
    MT = M.T.tocsr()

    def op(x):
        return M @ x

    def adj(y):
        return (MT @ (w * y)) / w

    def inner(a, b):
        return float(np.sum(w * a * b))

    lam, it, hist = _power(op, adj, np.ones(len(ball)), inner, tol, max_iter)
    return NormEstimate(math.sqrt(lam), it, R, grid.h, hist)


def spherical_mean_matrix(model, ball, t, n_directions=32, order=3):
    """Sparse matrix of f -> L_t f on a ball grid with zero outside the ball."""
    n = len(ball)
    th = 2.0 * math.pi * (np.arange(n_directions) + 0.5) / n_directions
    z0 = np.repeat(ball.nodes, n_directions)
    t0 = np.tile(th, n)
    ends, _ = _endpoints(model, z0, t0, t)
    E = ball.interpolation_matrix(ends, order, outside="zero")
    avg = sparse.csr_matrix((np.full(n * n_directions, 1.0 / n_directions),
                             (np.repeat(np.arange(n), n_directions),
                              np.arange(n * n_directions))),
                            shape=(n, n * n_directions))
    return (avg @ E).tocsr()


# ---------------------------------------------------------------------------
# exact hyperbolic norm


def _logsinh(x):
    x = np.asarray(x, dtype=float)
    return x + np.log(-np.expm1(-2.0 * x)) - math.log(2.0)


def exact_norm_hyperbolic(d, t):
    """||L_t|| on L^2 of hyperbolic d-space.

    c_d (sinh t / sinh^{d-1} t) int_0^t (cosh t - cosh s)^{(d-3)/2} ds with
    c_d fixed by ||L_0|| = 1.  The integral is taken over s = t sin u, which
    removes the endpoint singularity in d = 2.
    """
    if d < 2 or int(d) != d:
        raise ValueError("d must be an integer >= 2")
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 1.0
    a = 0.5 * (d - 3)
    logc = -(0.5 * (3 - d) * math.log(2.0) + 0.5 * math.log(math.pi)
             + gammaln(0.5 * (d - 1)) - math.log(2.0) - gammaln(0.5 * d))
    ls = float(_logsinh(t))

    def integrand(u):
        su = math.sin(u)
        s = t * su
        # cosh t - cosh s = 2 sinh((t+s)/2) sinh((t-s)/2), t - s = t cos^2 u / (1 + sin u)
        tm = t * math.cos(u) ** 2 / (1.0 + su)
        if tm <= 0.0:
            return 0.0
        lg = math.log(2.0) + float(_logsinh(0.5 * (t + s))) + float(_logsinh(0.5 * tm))
        return math.exp(a * lg + (2 - d) * ls + logc) * t * math.cos(u)

    val, _ = integrate.quad(integrand, 0.0, 0.5 * math.pi, limit=200, epsabs=0.0,
                            epsrel=1e-12)
    return float(val)


# ---------------------------------------------------------------------------
# norm of L_t from below


@dataclass
class LowerBound:
    value: float
    stderr: float
    samples: int


def _polar_norms(model, x0, lo, hi, power, n_dir=32, n_r=200):
    """int_lo^hi int J(x0, exp(s w))^power ds dw over a polar grid."""
    if isinstance(model, ConstantCurvature):
        k = model.kappa
        f = lambda s: (np.sinh(k * s) / k) ** power
        val, _ = integrate.quad(f, lo, hi, limit=200)
        return 2.0 * math.pi * val
    th = 2.0 * math.pi * (np.arange(n_dir) + 0.5) / n_dir
    s, ws = np.polynomial.legendre.leggauss(n_r)
    s = lo + 0.5 * (hi - lo) * (s + 1.0)
    ws = 0.5 * (hi - lo) * ws
    tot = 0.0
    for a in th:
        y0 = [x0.real, x0.imag, a, 0.0, 1.0]
        tm = np.sort(s)
        js = _run(model, y0, tm, njac=1, recentre=True)[:, 3]
        order = np.argsort(s)
        jj = np.empty_like(js)
        jj[order] = js
        tot += np.sum(ws * jj ** power)
    return 2.0 * math.pi * tot / n_dir


def sm_norm_lower(model, x0, t, mc_samples=10_000, seed=0):
    """<L_t f, 1_B> / (||f|| ||1_B||) with f = 1_{d(x0,.) in [t-1,t+1]} J(x0,.)^{-1}
    and B = B(x0, 1).

    Points y of B are drawn in polar coordinates about x0 with the volume
    element J(x0, y) ds dw; every endpoint exp_y(t v) then lies in the
    annulus of f by the triangle inequality.
    """
    if mc_samples < 10_000:
        raise ValueError("mc_samples must be >= 10^4")
    if t <= 1:
        # at t = 1 the annulus reaches x0 and ||f||^2 = int ds / sinh s diverges
        raise ValueError("t must be > 1 so that f is supported away from x0")
    x0 = complex(x0)
    rng = np.random.default_rng(seed)
    n = int(mc_samples)
    s = rng.random(n)
    # stratified directions for the point and for the sphere
    w = 2.0 * math.pi * (np.arange(n) + rng.random(n)) / n
    v = rng.permutation(2.0 * math.pi * (np.arange(n) + rng.random(n)) / n)
    z0 = np.full(n, x0)
    y, _ = _endpoints(model, z0, w, s)
    Jy = _jacobians(model, z0, w, s)
    e, _ = _endpoints(model, y, v, t)
    if isinstance(model, ConstantCurvature):
        d = disk_distance(x0, e) / model.kappa
        Je = np.sinh(model.kappa * d) / model.kappa
    else:
        Je = np.empty(n)
        d = np.empty(n)
        for i in range(n):
            d[i], th = connect(model, x0, e[i])
            Je[i] = radial_jacobian(model, x0, th, d[i])
    inside = (d >= t - 1.0) & (d <= t + 1.0)
    g = 2.0 * math.pi * Jy * np.where(inside, 1.0 / Je, 0.0)
    num = g.mean()
    num_se = g.std(ddof=1) / math.sqrt(n)
    nf = math.sqrt(_polar_norms(model, x0, t - 1.0, t + 1.0, -1.0))
    nb = math.sqrt(_polar_norms(model, x0, 0.0, 1.0, 1.0))
    return LowerBound(num / (nf * nb), num_se / (nf * nb), n)


# ---------------------------------------------------------------------------
# pressure from annuli and orbit sums


@dataclass
class AnnulusEstimate:
    value: float
    stderr: float
    raw: float
    radii: np.ndarray
    log_integral: np.ndarray


def _radial_profiles(model, n_dir, s_grid, seed):
    """J and the integral of psi^u along radial geodesics from the origin."""
    rng = np.random.default_rng(seed)
    th = 2.0 * math.pi * (np.arange(n_dir) + rng.random(n_dir)) / n_dir
    J = np.empty((n_dir, len(s_grid)))
    U = np.empty((n_dir, len(s_grid)))
    for i, a in enumerate(th):
        p = PhasePoint(0j, float(a))
        u0 = unstable_riccati(model, p)
        y = _run(model, [0.0, 0.0, a, 0.0, 1.0, u0, 0.0], s_grid, njac=1, ric=True,
                 recentre=True)
        J[i] = y[:, 3]
        U[i] = y[:, 6]
    return J, U


def annulus_pressure(model, q, r, c=1.0, mc_samples=256, seed=0, n_groups=8,
                     s_step=0.05, _profiles=None):
    """Growth rate of A(s) = int_{A(o,s,c)} exp(-q int_o^y psi^u) dvol(y).

    The rate is the least-squares slope of log A(s) over s in [r/2, r]; the
    plain ratio (1/r) log A(r) is returned as ``raw``.  ``mc_samples`` radial
    directions are drawn with stratified jitter; the stderr is a jackknife
    over ``n_groups`` groups of directions.
    """
    if c < 1:
        raise ValueError("c must be >= 1")
    if r < 4:
        raise ValueError("r must be >= 4")
    s_grid = np.arange(s_step, r + 0.5 * s_step, s_step)
    if _profiles is None:
        J, U = _radial_profiles(model, mc_samples, s_grid, seed)
    else:
        J, U = _profiles
    dens = J * np.exp(-q * U)
    # J vanishes at s = 0; cum[:, k] integrates over [0, full[k]]
    dens = np.concatenate([np.zeros((dens.shape[0], 1)), dens], axis=1)
    cum = integrate.cumulative_trapezoid(dens, dx=s_step, axis=1, initial=0.0)
    full = np.concatenate([[0.0], s_grid])
    lo = np.searchsorted(full, full - c - 1e-9)
    sel = np.flatnonzero((full >= 0.5 * r - 1e-9) & (full >= c))
    shell = cum[:, sel] - cum[:, lo[sel]]

    def rate(rows):
        A = 2.0 * math.pi * shell[rows].mean(axis=0)
        y = np.log(A)
        return np.polyfit(full[sel], y, 1)[0], y

    allrows = np.arange(shell.shape[0])
    slope, logA = rate(allrows)
    groups = np.array_split(allrows, n_groups)
    reps = np.array([rate(np.setdiff1d(allrows, g))[0] for g in groups])
    se = math.sqrt((n_groups - 1) / n_groups * np.sum((reps - reps.mean()) ** 2))
    return AnnulusEstimate(float(slope), se, float(logA[-1] / r), full[sel], logA)


def _orbit_weights(model, group, radius, q, cap=8_000_000):
    """(d(o, g o), int_o^{g o} psi^u) for the orbit points of o within radius."""
    ball = group_ball(group, radius, cap)
    pts = np.array([b / np.conj(a) for a, b in zip(ball.a, ball.b)])[1:]
    if isinstance(model, ConstantCurvature):
        d = disk_distance(0j, pts) / model.kappa
        return d, model.kappa * d
    d = np.empty(len(pts))
    U = np.empty(len(pts))
    for i, z in enumerate(pts):
        d[i], th = connect(model, 0j, complex(z))
        p = PhasePoint(0j, th)
        u0 = unstable_riccati(model, p)
        y = _run(model, [0.0, 0.0, th, u0, 0.0], [d[i]], ric=True, recentre=True)[0]
        U[i] = y[4]
    return d, U


def poincare_partial_sum(model, group, s, q, radius, _weights=None):
    """sum over orbit points with d(o, g o) <= radius of exp(-s d - q int psi^u)."""
    d, U = _weights if _weights is not None else _orbit_weights(model, group, radius, q)
    m = d <= radius
    return float(np.sum(np.exp(-s * d[m] - q * U[m])))


@dataclass
class ExponentEstimate:
    value: float
    stderr: float
    shells: np.ndarray
    log_sums: np.ndarray


def poincare_critical_exponent(model, group, q, max_radius=12.0, shell_width=1.0,
                               _weights=None):
    """Critical exponent of s -> sum_g exp(-s d(o, g o) - q int_o^{g o} psi^u).

    Orbit points are binned into displacement shells [k, k + w); the exponent
    is the slope of the log shell sums over the outer half of the shells.
    """
    d, U = _weights if _weights is not None else _orbit_weights(model, group, max_radius, q)
    edges = np.arange(0.0, max_radius + 1e-9, shell_width)
    mids, logs = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo < 0.5 * max_radius:
            continue
        m = (d >= lo) & (d < hi)
        if not np.any(m):
            continue
        mids.append(0.5 * (lo + hi))
        logs.append(math.log(np.sum(np.exp(-q * U[m]))))
    mids = np.array(mids)
    logs = np.array(logs)
    if len(mids) < 3:
        raise FitFailure("fewer than three nonempty shells")
    coef, cov = np.polyfit(mids, logs, 1, cov=True)
    return ExponentEstimate(float(coef[0]), float(math.sqrt(cov[0, 0])), mids, logs)


# ---------------------------------------------------------------------------
# thin triangles


def _geodesic_point(model, x, y, s):
    d, th = connect(model, x, y)
    return complex(_endpoints(model, np.array([complex(x)]), np.array([th]), s)[0][0])


def gromov_delta(model, x, y, z):
    """Diameter of the inscribed triple of the geodesic triangle xyz.

    The inscribed point on [x, y] sits at distance (y|z)_x from x, where
    (y|z)_x = (d(x,y) + d(x,z) - d(y,z)) / 2, and likewise on the other sides.
    """
    x, y, z = complex(x), complex(y), complex(z)
    dxy = float(_distances(model, x, y))
    dyz = float(_distances(model, y, z))
    dxz = float(_distances(model, x, z))
    a = max(0.5 * (dxy + dxz - dyz), 0.0)
    b = max(0.5 * (dxy + dyz - dxz), 0.0)
    c = max(0.5 * (dxz + dyz - dxy), 0.0)
    p1 = x if dxy == 0 else _geodesic_point(model, x, y, min(a, dxy))
    p2 = y if dyz == 0 else _geodesic_point(model, y, z, min(b, dyz))
    p3 = x if dxz == 0 else _geodesic_point(model, x, z, min(a, dxz))
    if dxz == 0:
        p3 = z
    pts = [p1, p2, p3]
    del c
    return max(float(_distances(model, pts[i], pts[j]))
               for i in range(3) for j in range(i + 1, 3))


@dataclass
class DivergenceFit:
    rate: float
    prefactor: float
    times: np.ndarray
    separation: np.ndarray


def geodesic_divergence(model, x, v, w, r, eta, n_times=41, t_min=1.0):
    """Rate c in d(phi_t(x,v), phi_t(x,w)) <= C exp(-c (r - t)).

    Separations are distances between base points; the rate is the slope of
    their logarithm over t in [t_min, r] and the prefactor is the largest
    separation * exp(c (r - t)) divided by eta.
    """
    x = complex(x)
    times = np.linspace(0.0, r, n_times)
    zv, _ = _endpoints(model, np.full(n_times, x), np.full(n_times, float(v)), times)
    zw, _ = _endpoints(model, np.full(n_times, x), np.full(n_times, float(w)), times)
    sep = np.array([float(_distances(model, a, b)) if i else 0.0
                    for i, (a, b) in enumerate(zip(zv, zw))])
    if sep[-1] > eta * (1.0 + 1e-6):
        raise ValueError(f"endpoint separation {sep[-1]:.4g} exceeds eta = {eta}")
    inc = np.diff(sep[1:])
    if np.any(inc < -1e-9 * sep[1:].max()):
        raise FitFailure("separation is not monotone")
    m = times >= t_min
    rate = float(np.polyfit(times[m], np.log(sep[m]), 1)[0])
    pref = float(np.max(sep[1:] * np.exp(rate * (r - times[1:]))) / eta)
    return DivergenceFit(rate, pref, times, sep)


def direction_pair_at_separation(model, x, v, r, eta):
    """Direction w such that exp_x(r v), exp_x(r w) are eta apart (bisection)."""
    x = complex(x)
    end_v = _endpoints(model, np.array([x]), np.array([float(v)]), r)[0][0]

    def gap(da):
        e = _endpoints(model, np.array([x]), np.array([float(v) + da]), r)[0][0]
        return float(_distances(model, end_v, e)) - eta

    lo, hi = 0.0, 1e-3
    while gap(hi) < 0:
        hi *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    return float(v) + lo


# ---------------------------------------------------------------------------
# correlation lower bound


def _bump(d, radius):
    """Smooth step 1/(1 + e^rho), rho = 1/(1-x) - 1/x, in x = d / radius."""
    x = np.asarray(d, dtype=float) / radius
    out = np.where(x <= 0.0, 1.0, 0.0)
    m = (x > 0.0) & (x < 1.0)
    xm = x[m]
    rho = 1.0 / (1.0 - xm) - 1.0 / xm
    out[m] = 0.5 * (1.0 - np.tanh(0.5 * rho))
    return out


@dataclass
class CorrelationEstimate:
    value: float
    stderr: float
    norm: float
    norm_stderr: float
    n_elements: int


def correlation_lower_bound(model, x0, t, mc_samples=20_000, seed=0, D=None, cap=2_000_000):
    """<L_t f~, chi> and ||f~|| for the orbit-smoothed test function.

    f~(x) = sum over g with t - D <= d(x0, g x0) <= t + D of
    J(x0, g x0)^{-1} chi(g^{-1} x), chi a smooth bump of radius D + 1 about
    x0 and D the circumradius of the fundamental domain.  Both quantities
    are Monte Carlo estimates with stderr.
    """
    if not isinstance(model, ConstantCurvature):
        raise NotImplementedError("correlation_lower_bound needs a constant curvature model")
    x0 = complex(x0)
    if x0 != 0:
        raise ValueError("x0 must be the origin, the centre of the fundamental domain")
    group = model.group
    k = model.kappa
    D = group.circumradius if D is None else float(D)
    rho = D + 1.0                      # bump radius, model units
    rho_h = k * rho
    big = group_ball(group, k * (t + D), cap)
    pts = big.b / np.conj(big.a)
    dist = disk_distance(0j, pts) / k
    sel = np.flatnonzero((dist >= t - D) & (dist <= t + D))
    if len(sel) == 0:
        return CorrelationEstimate(0.0, 0.0, 0.0, 0.0, 0)
    ga, gb = big.a[sel], big.b[sel]
    coef = k / np.sinh(k * dist[sel])
    # g is recovered from its orbit point through the element table
    small = group_ball(group, rho_h + group.circumradius + 1e-6)
    ea, eb = small.a, small.b
    sa, sb = group.side_arrays
    hint = np.array([1.0 + 0j, 0j])
    table = {}
    for i, (a, b) in enumerate(zip(ga, gb)):
        table[_key(b / np.conj(a))] = i

    def ftilde(z):
        """f~ at disk points z."""
        out = np.zeros(len(z))
        for m, zz in enumerate(z):
            w, ra, rb = kern.reduce_to_domain(complex(zz), sa, sb, hint)
            # g^{-1} z = eta w with eta ranging over the small ball
            p = (ea * w + eb) / (np.conj(eb) * w + np.conj(ea))
            dd = disk_distance(0j, p)
            near = np.flatnonzero(dd < rho_h)
            if len(near) == 0:
                continue
            # g = (eta r)^{-1} with r the reducing element; (a, b)^{-1} = (conj a, -b)
            ca = ea[near] * ra + eb[near] * np.conj(rb)
            cb = ea[near] * rb + eb[near] * np.conj(ra)
            chi = _bump(dd[near] / k, rho)
            for c_a, c_b, cv in zip(ca, cb, chi):
                gi = table.get(_key(-c_b / c_a))
                if gi is not None:
                    out[m] += coef[gi] * cv
        return out

    rng = np.random.default_rng(seed)
    n = int(mc_samples)
    # y uniform in B(x0, rho) in polar coordinates, weight 2 pi rho J
    s = rho * rng.random(n)
    th = 2.0 * math.pi * (np.arange(n) + rng.random(n)) / n
    y = np.tanh(0.5 * k * s) * np.exp(1j * th)
    Jy = np.sinh(k * s) / k
    chi_y = _bump(s, rho)
    v = rng.permutation(2.0 * math.pi * (np.arange(n) + rng.random(n)) / n)
    e, _ = exact_flow_arrays(k, y, v, t)
    g = 2.0 * math.pi * rho * Jy * chi_y * ftilde(e)
    val, val_se = g.mean(), g.std(ddof=1) / math.sqrt(n)
    # ||f~||^2 = sum_g c_g int chi(y) f~(g y) dy
    pick = rng.integers(0, len(sel), n)
    gy = (ga[pick] * y + gb[pick]) / (np.conj(gb[pick]) * y + np.conj(ga[pick]))
    h = len(sel) * coef[pick] * 2.0 * math.pi * rho * Jy * chi_y * ftilde(gy)
    nrm2, nrm2_se = h.mean(), h.std(ddof=1) / math.sqrt(n)
    nrm = math.sqrt(max(nrm2, 0.0))
    nrm_se = 0.5 * nrm2_se / nrm if nrm > 0 else 0.0
    return CorrelationEstimate(float(val), float(val_se), nrm, nrm_se, len(sel))


def _key(z, scale=1e6):
    return (round(z.real * scale), round(z.imag * scale))


# ---------------------------------------------------------------------------
# identities and constants


def swap_identity(model, chi1, chi2, t, n_r=48, n_a=48, n_dir=64, radius=1.5):
    """Both sides of int chi1(x) int_{S(x,t)} chi2 dsigma dx
    = int chi2(y) int_{S(y,t)} chi1 dsigma dy.

    The outer integrals use Gauss-Legendre in r and the trapezoid rule in
    angle over B(0, radius) (hyperbolic units), which must contain the
    supports of chi1 and chi2.  Returns (lhs, rhs).
    """
    r, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * radius * (r + 1.0)
    wr = 0.5 * radius * wr
    a = 2.0 * math.pi * np.arange(n_a) / n_a
    R, A = np.meshgrid(r, a, indexing="ij")
    pts = (np.tanh(R / 2.0) * np.exp(1j * A)).ravel()
    w = (np.outer(wr * np.sinh(r), np.full(n_a, 2.0 * math.pi / n_a))).ravel()
    w = w * _volume_factor(model, pts)

    def side(outer, inner):
        vals = outer(pts)
        keep = np.abs(vals) > 0
        tot = 0.0
        th = 2.0 * math.pi * (np.arange(n_dir) + 0.5) / n_dir
        z0 = np.repeat(pts[keep], n_dir)
        tt = np.tile(th, int(keep.sum()))
        ends, _ = _endpoints(model, z0, tt, t)
        jac = _jacobians(model, z0, tt, t)
        sph = (inner(ends) * jac).reshape(-1, n_dir).sum(axis=1) * 2.0 * math.pi / n_dir
        tot = np.sum(w[keep] * vals[keep] * sph)
        return float(tot)

    return side(chi1, chi2), side(chi2, chi1)


def temperness_constant(model, n_samples=1000, seed=0, max_dist=8.0):
    """Smallest C with log J(x,y) - log J(x,z) <= C d(y,z) + log C on samples.

    Triples have d(x,y), d(x,z) >= 1; returns (C, samples used).
    """
    rng = np.random.default_rng(seed)
    xs = _random_points(rng, n_samples, 2.0)
    rows = []
    for x in xs:
        a1, a2 = rng.uniform(0, 2 * math.pi, 2)
        s1, s2 = rng.uniform(1.0, max_dist, 2)
        J1 = radial_jacobian(model, x, a1, s1)
        J2 = radial_jacobian(model, x, a2, s2)
        y = _endpoints(model, np.array([x]), np.array([a1]), s1)[0][0]
        z = _endpoints(model, np.array([x]), np.array([a2]), s2)[0][0]
        rows.append((math.log(J1) - math.log(J2), float(_distances(model, y, z))))
    rows = np.array(rows)
    # the constraint lhs <= C d + log C is monotone in C; bisect
    lo, hi = 1.0, 2.0
    ok = lambda C: np.all(rows[:, 0] <= C * rows[:, 1] + math.log(C) + 1e-12)
    while not ok(hi):
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi, len(rows)


def _random_points(rng, n, radius):
    s = np.arccosh(1.0 + rng.random(n) * (math.cosh(radius) - 1.0))
    return np.tanh(s / 2.0) * np.exp(2j * math.pi * rng.random(n))


def x_minus_j(model, o, x, y, t):
    """(x_{-j}, y_j, j) for x, y with d(x, y) = t, measured from o.

    j is the integer with d(o,y) - d(o,x) in [j, j+1], r_j = (t - j)/2,
    x_{-j} = exp_o((r_x - r_j) v) and y_j = exp_o((r_y - r_{-j}) w).
    """
    rx, v = connect(model, o, x)
    ry, w = connect(model, o, y)
    j = int(math.floor(ry - rx))
    j = max(-int(math.floor(t)), min(int(math.floor(t)), j))
    rj = 0.5 * (t - j)
    rmj = 0.5 * (t + j)
    xm = _endpoints(model, np.array([complex(o)]), np.array([v]), max(rx - rj, 0.0))[0][0]
    yj = _endpoints(model, np.array([complex(o)]), np.array([w]), max(ry - rmj, 0.0))[0][0]
    return complex(xm), complex(yj), j


def x_minus_j_gap(model, t, n_samples=200, seed=0, o=0j):
    """max d(x_{-j}, y_j) over random pairs x, y with d(x, y) = t."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        rx = rng.uniform(0.0, t)
        x = _endpoints(model, np.array([complex(o)]), np.array([rng.uniform(0, 2 * math.pi)]),
                       rx)[0][0]
        y = _endpoints(model, np.array([x]), np.array([rng.uniform(0, 2 * math.pi)]), t)[0][0]
        xm, yj, _ = x_minus_j(model, o, x, y, t)
        worst = max(worst, float(_distances(model, xm, yj)))
    return worst


# ---------------------------------------------------------------------------
# output


SPHERICAL_HEADER = ["t", "norm_power", "norm_exact", "lower_bound", "lower_stderr", "R", "grid_h"]


def write_spherical_csv(path, rows, config_hash=None):
    """rows: dicts with the keys of SPHERICAL_HEADER (norm_exact may be None)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = SPHERICAL_HEADER + (["config_hash"] if config_hash is not None else [])
        w.writerow(head)
        for r in rows:
            out = ["" if r.get(k) is None else repr(float(r[k])) for k in SPHERICAL_HEADER]
            if config_hash is not None:
                out.append(config_hash)
            w.writerow(out)


def log_slope(ts, values):
    """Least-squares slope of log(values) against ts."""
    return float(np.polyfit(np.asarray(ts, float), np.log(np.asarray(values, float)), 1)[0])
