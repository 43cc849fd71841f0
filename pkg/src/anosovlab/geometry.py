"""Negatively curved surfaces as quotients of the Poincare disk.

Two metric families are supported:

* :class:`ConstantCurvature` -- the hyperbolic metric scaled to curvature
  ``-kappa**2``;
* :class:`Perturbed` -- ``exp(2 phi) g_hyp`` where ``phi`` is a Gamma-periodic
  sum of smooth bumps, so the metric descends to the compact quotient.

Group elements are handled in SU(1,1) form ``[[a, b], [conj(b), conj(a)]]``
acting on the disk; files and the public :class:`FuchsianGroup` carry the
SL(2,R) matrices acting on the upper half-plane, related by the Cayley map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels as kern
from .errors import (InvalidGroup, InvalidModel, NoConvergence,
                     PointOutsideDisk, RiccatiBlowup, StepFailure)

_CAYLEY = np.array([[1.0, -1.0j], [1.0, 1.0j]])
_CAYLEY_INV = np.linalg.inv(_CAYLEY)

DEFAULT_TOL = 1e-10


# ---------------------------------------------------------------------------
# Moebius helpers


def sl2r_to_su11(m):
    """Conjugate an SL(2,R) matrix to the disk model."""
    return _CAYLEY @ np.asarray(m, dtype=complex) @ _CAYLEY_INV


def su11_to_sl2r(g):
    m = _CAYLEY_INV @ np.asarray(g, dtype=complex) @ _CAYLEY
    return m.real


def mobius(g, z):
    g = np.asarray(g)
    return (g[0, 0] * z + g[0, 1]) / (g[1, 0] * z + g[1, 1])


def mobius_derivative(g, z):
    g = np.asarray(g)
    den = g[1, 0] * z + g[1, 1]
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    return det / (den * den)


def disk_distance(z, w):
    """Hyperbolic (curvature -1) distance in the disk; vectorised."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    num = np.abs(z - w)
    den = np.abs(1.0 - np.conj(z) * w)
    return 2.0 * np.arctanh(np.minimum(num / den, 1.0))


def translate_to(z0):
    """SU(1,1) element sending 0 to z0 without rotating directions at 0."""
    s = 1.0 / math.sqrt(1.0 - abs(z0) ** 2)
    return np.array([[s, s * z0], [s * np.conj(z0), s]], dtype=complex)


def translation_length(g):
    """Hyperbolic translation length of an SU(1,1) (or SL(2,R)) element."""
    tr = abs(np.trace(np.asarray(g)).real)
    return 2.0 * math.acosh(max(tr / 2.0, 1.0))


def fixed_points(g):
    """(repelling, attracting) fixed points on the unit circle of a hyperbolic g."""
    a = g[0, 0]
    b = g[0, 1]
    c = g[1, 0]
    d = g[1, 1]
    disc = np.sqrt((a - d) ** 2 + 4 * b * c)
    p1 = (a - d + disc) / (2 * c)
    p2 = (a - d - disc) / (2 * c)
    if abs(mobius_derivative(g, p1)) < 1.0:
        return p2 / abs(p2), p1 / abs(p1)
    return p1 / abs(p1), p2 / abs(p2)


def axis_foot(xi_minus, xi_plus):
    """Point of the geodesic (xi_minus, xi_plus) closest to the origin."""
    s = xi_minus + xi_plus
    if abs(s) < 1e-15:
        return 0j
    u = s / abs(s)
    cosb = min(abs(s) / 2.0, 1.0)
    sinb = math.sqrt(max(1.0 - cosb * cosb, 0.0))
    return u * (1.0 - sinb) / cosb


def axis_point(xi_minus, xi_plus, s):
    """Point at signed hyperbolic arclength s from the foot, towards xi_plus.

    Returns (z, theta) with theta the direction of motion.
    """
    f = axis_foot(xi_minus, xi_plus)
    tinv = translate_to(-f)
    e = mobius(tinv, xi_plus)
    e = e / abs(e)
    w = e * math.tanh(s / 2.0)
    t = translate_to(f)
    z = mobius(t, w)
    theta = math.atan2(e.imag, e.real) + np.angle(mobius_derivative(t, w))
    return complex(z), float(theta) % (2 * math.pi)


# ---------------------------------------------------------------------------
# Groups


@dataclass(frozen=True)
class FuchsianGroup:
    """Surface group given by SL(2,R) side pairings of a Dirichlet domain at i.

    Letters of a word are generator indices ``k`` (``0 <= k < 2g``) or their
    bitwise complements ``~k`` for inverses.
    """

    genus: int
    generators: tuple
    relation_word: tuple

    def __post_init__(self):
        gens = tuple(np.array(m, dtype=float).reshape(2, 2) for m in self.generators)
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "relation_word", tuple(int(x) for x in self.relation_word))
        self.validate()

    def validate(self):
        if self.genus < 1:
            raise InvalidGroup("genus must be positive")
        if len(self.generators) != 2 * self.genus:
            raise InvalidGroup(f"expected {2 * self.genus} generators, got {len(self.generators)}")
        for i, m in enumerate(self.generators):
            if abs(np.linalg.det(m) - 1.0) > 1e-12:
                raise InvalidGroup(f"generator {i}: det = {np.linalg.det(m)!r}")
            if abs(np.trace(m)) <= 2.0:
                raise InvalidGroup(f"generator {i} is not hyperbolic")
        if self.relation_word:
            prod = self.word_matrix(self.relation_word, sl2r=True)
            if not (np.allclose(prod, np.eye(2), atol=1e-9)
                    or np.allclose(prod, -np.eye(2), atol=1e-9)):
                raise InvalidGroup("relation word does not evaluate to +-identity")

    @property
    def rank(self):
        return 2 * self.genus

    @cached_property
    def su11(self):
        return tuple(sl2r_to_su11(m) for m in self.generators)

    @cached_property
    def letter_matrices(self):
        """Dict letter -> SU(1,1) matrix, for generators and inverses."""
        out = {}
        for k, g in enumerate(self.su11):
            out[k] = g
            out[~k] = np.linalg.inv(g)
        return out

    @cached_property
    def letters(self):
        return tuple(list(range(self.rank)) + [~k for k in range(self.rank)])

    @cached_property
    def side_arrays(self):
        """(a, b) arrays of the side pairings for the compiled kernels."""
        a = np.array([self.letter_matrices[l][0, 0] for l in self.letters])
        b = np.array([self.letter_matrices[l][0, 1] for l in self.letters])
        return a, b

    def word_matrix(self, word, sl2r=False):
        m = np.eye(2, dtype=complex)
        for l in word:
            m = m @ self.letter_matrices[l]
        return su11_to_sl2r(m) if sl2r else m

    @cached_property
    def domain_vertices(self):
        """Vertices (disk coordinates) of the Dirichlet domain centred at 0."""
        from scipy.spatial import HalfspaceIntersection

        hs = []
        for l in self.letters:
            p = mobius(self.letter_matrices[l], 0j)
            rho = float(disk_distance(0j, p))
            u = p / abs(p)
            hs.append([u.real, u.imag, -math.tanh(rho / 2.0)])
        inter = HalfspaceIntersection(np.array(hs), np.zeros(2))
        k = inter.intersections
        kz = k[:, 0] + 1j * k[:, 1]
        kz = kz[np.argsort(np.angle(kz))]
        # Klein -> Poincare
        return kz / (1.0 + np.sqrt(1.0 - np.abs(kz) ** 2))

    @cached_property
    def inradius(self):
        return min(float(disk_distance(0j, mobius(g, 0j))) for g in self.letter_matrices.values()) / 2.0

    @cached_property
    def circumradius(self):
        return float(np.max(disk_distance(0j, self.domain_vertices)))

    def reduce(self, z):
        """Return (w, g) with w = g(z) in the Dirichlet domain, g in SU(1,1)."""
        sa, sb = self.side_arrays
        hint = np.array([1.0 + 0j, 0j])
        w, ga, gb = kern.reduce_to_domain(complex(z), sa, sb, hint)
        g = np.array([[ga, gb], [np.conj(gb), np.conj(ga)]])
        return complex(w), g

    # file format ---------------------------------------------------------

    def to_file(self, path):
        lines = [f"genus {self.genus}"]
        for m in self.generators:
            lines.append(" ".join(repr(float(x)) for x in m.ravel()))
        if self.relation_word:
            lines.append("relation " + " ".join(str(x) for x in self.relation_word))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path):
        text = Path(path).read_text().splitlines()
        rows = [ln.split("#")[0].strip() for ln in text]
        rows = [r for r in rows if r]
        if not rows or not rows[0].startswith("genus"):
            raise InvalidGroup(f"{path}: first line must be 'genus g'")
        genus = int(rows[0].split()[1])
        gens = []
        rel = ()
        for r in rows[1:]:
            if r.startswith("relation"):
                rel = tuple(int(x) for x in r.split()[1:])
                continue
            vals = [float(x) for x in r.split()]
            if len(vals) != 4:
                raise InvalidGroup(f"{path}: generator line needs 4 reals: {r!r}")
            gens.append(np.array(vals).reshape(2, 2))
        return cls(genus, tuple(gens), rel)


def bolza_group():
    """Genus-2 Bolza surface: opposite side pairings of the regular octagon.

    Generator k translates along the diameter at angle k*pi/4 by twice the
    octagon inradius (cosh(inradius) = 1 + sqrt 2).
    """
    c = 1.0 + math.sqrt(2.0)
    s = math.sqrt(c * c - 1.0)
    base = np.array([[c, s], [s, c]], dtype=complex)
    gens = []
    for k in range(4):
        r = np.diag([np.exp(0.5j * math.pi * k / 4), np.exp(-0.5j * math.pi * k / 4)])
        gens.append(su11_to_sl2r(r @ base @ np.linalg.inv(r)))
    relation = (0, ~1, 2, ~3, ~0, 1, ~2, 3)
    return FuchsianGroup(2, tuple(gens), relation)


_BOLZA = None


def default_group():
    global _BOLZA
    if _BOLZA is None:
        _BOLZA = bolza_group()
    return _BOLZA


# ---------------------------------------------------------------------------
# Models


@dataclass(frozen=True)
class PhasePoint:
    z: complex
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "z", complex(self.z))
        object.__setattr__(self, "theta", float(self.theta))
        if abs(self.z) >= 1.0:
            raise PointOutsideDisk(f"|z| = {abs(self.z)} >= 1")


@dataclass(frozen=True)
class JacobiState:
    j: float
    dj: float
    u: float | None = None


class SurfaceModel:
    """Common interface; see ConstantCurvature and Perturbed."""

    group: FuchsianGroup

    def kernel_params(self):
        raise NotImplementedError

    @property
    def isotropic(self):
        return False

    def curvature(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if np.any(np.abs(z) >= 1.0):
            raise PointOutsideDisk("curvature requested outside the disk")
        hint = np.array([1.0 + 0j, 0j])
        return kern.curvature_many(z, self.kernel_params(), hint)

    @cached_property
    def curvature_bracket(self):
        """(kappa_min, kappa_max) with -kappa_max^2 <= K <= -kappa_min^2."""
        k = self.curvature(domain_grid(self.group, 60))
        return math.sqrt(-k.max()), math.sqrt(-k.min())

    @property
    def kappa_min(self):
        return self.curvature_bracket[0]

    @property
    def kappa_max(self):
        return self.curvature_bracket[1]


@dataclass(frozen=True, eq=False)
class ConstantCurvature(SurfaceModel):
    kappa: float = 1.0
    group: FuchsianGroup = field(default_factory=default_group)

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvalidModel("kappa must be positive")

    @property
    def isotropic(self):
        return True

    @cached_property
    def _params(self):
        sa, sb = self.group.side_arrays
        return (0, float(self.kappa), 0.0, 1.0, np.zeros(1, dtype=complex),
                np.zeros(1), sa, sb)

    def kernel_params(self):
        return self._params

    @property
    def curvature_bracket(self):
        return float(self.kappa), float(self.kappa)

    def phi(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        return np.full(z.shape, -math.log(self.kappa))


@dataclass(frozen=True, eq=False)
class Perturbed(SurfaceModel):
    """Conformal metric exp(2 phi) g_hyp with phi = eps * sum of bumps over the
    Gamma-orbit of ``bump_center``; the bump is a smooth step in d/r0."""

    group: FuchsianGroup = field(default_factory=default_group)
    epsilon: float = 0.05
    bump_radius: float = 1.4
    bump_center: complex = 0j

    def __post_init__(self):
        if self.epsilon < 0:
            raise InvalidModel("epsilon must be >= 0")
        sep = orbit_separation(self.group, self.bump_center)
        if not self.bump_radius < sep / 2.0:
            raise InvalidModel(
                f"bump radius {self.bump_radius} must be below half the orbit "
                f"separation {sep / 2.0:.6f}")
        k = self.curvature(domain_grid(self.group, 80))
        if not np.all(k < 0):
            raise InvalidModel(f"sampled curvature reaches {k.max():.4g} >= 0")

    @cached_property
    def _params(self):
        from .orbits import group_ball

        g = self.group
        reach = g.circumradius + self.bump_radius + 0.5
        ball = group_ball(g, reach + float(disk_distance(0j, self.bump_center)) + g.circumradius)
        pts = []
        for a, b in zip(ball.a, ball.b):
            p = (a * self.bump_center + b) / (np.conj(b) * self.bump_center + np.conj(a))
            if disk_distance(0j, p) <= reach:
                pts.append(p)
        centers = np.array(pts, dtype=complex)
        cfac = 2.0 / (1.0 - np.abs(centers) ** 2)
        sa, sb = g.side_arrays
        return (1, 1.0, float(self.epsilon), float(self.bump_radius), centers, cfac, sa, sb)

    def kernel_params(self):
        return self._params

    def phi(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        hint = np.array([1.0 + 0j, 0j])
        return kern.phi_many(z, self.kernel_params(), hint)


def domain_grid(group, n):
    """Points on an n x n Cartesian grid that fall in the Dirichlet domain."""
    r = abs(group.domain_vertices[0])
    xs = np.linspace(-r, r, n)
    zz = (xs[:, None] + 1j * xs[None, :]).ravel()
    zz = zz[np.abs(zz) < r]
    sa, sb = group.side_arrays
    keep = np.ones(zz.shape, dtype=bool)
    for a, b in zip(sa, sb):
        keep &= np.abs((a * zz + b) / (np.conj(b) * zz + np.conj(a))) >= np.abs(zz) - 1e-12
    return zz[keep]


def orbit_separation(group, c):
    """Minimal hyperbolic distance between distinct orbit points of c."""
    from .orbits import group_ball

    d0 = float(disk_distance(0j, c))
    ball = group_ball(group, 2.0 * (d0 + group.circumradius) + 1.0)
    best = math.inf
    for a, b in zip(ball.a[1:], ball.b[1:]):
        p = (a * c + b) / (np.conj(b) * c + np.conj(a))
        best = min(best, float(disk_distance(c, p)))
    return best


# ---------------------------------------------------------------------------
# Operations


def curvature_at(model, z):
    z = complex(z)
    if abs(z) >= 1.0:
        raise PointOutsideDisk(f"|z| = {abs(z)} >= 1")
    if isinstance(model, ConstantCurvature):
        return -model.kappa ** 2
    return float(model.curvature(z)[0])


def _tol_unit(model, t, tol):
    # errors injected at time s grow like exp(kappa_max (t - s))
    # below ~1e-15 the embedded error estimate is rounding noise
    return max(0.5 * tol * math.exp(-model.kappa_max * abs(t)), 1e-15)


_STATUS_MESSAGES = {
    kern.STATUS_STEP: "step size underflow",
    kern.STATUS_BOUNDARY: "trajectory reached the chart boundary; re-centre by a deck transformation",
    kern.STATUS_MAXSTEPS: "maximum number of steps exceeded",
}


def _run(model, y0, times, njac=0, ric=False, tol=DEFAULT_TOL, recentre=False,
         ric_hi=0.0, max_steps=2_000_000, horizon=None, acc=None):
    """Integrate a state vector; ``acc`` (if given) receives the product of
    the re-centring isometries, as for ``_kernels.integrate``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    hint = np.array([1.0 + 0j, 0j])
    if acc is None:
        acc = np.array([1.0 + 0j, 0j])
    if horizon is None:
        horizon = float(np.max(np.abs(times))) if times.size else 0.0
    outs, status, nsteps = kern.integrate(
        np.asarray(y0, dtype=float), times, model.kernel_params(), hint, njac, ric,
        _tol_unit(model, horizon, tol), recentre, max_steps, ric_hi, acc)
    if status == kern.STATUS_RICCATI:
        raise RiccatiBlowup("Riccati solution left [0, 2 sqrt(sup|K|)]")
    if status != kern.STATUS_OK:
        raise StepFailure(_STATUS_MESSAGES.get(status, f"status {status}"))
    return outs


def geodesic_flow(model, p, t, tol=DEFAULT_TOL):
    """phi_t(p) by adaptive DOP853 integration of the geodesic equations."""
    if t == 0:
        return p
    y = _run(model, [p.z.real, p.z.imag, p.theta], [t], tol=tol)[0]
    return PhasePoint(complex(y[0], y[1]), y[2] % (2 * math.pi))


def geodesic_path(model, p, times, tol=DEFAULT_TOL):
    """States of the orbit of p at the (monotone, same-sign) ``times``."""
    y = _run(model, [p.z.real, p.z.imag, p.theta], times, tol=tol)
    return [PhasePoint(complex(r[0], r[1]), r[2] % (2 * math.pi)) for r in y]


def exact_flow(model, p, t):
    """Closed-form Moebius geodesic flow for constant curvature models."""
    if not isinstance(model, ConstantCurvature):
        raise TypeError("exact_flow needs a ConstantCurvature model")
    z, th = exact_flow_arrays(model.kappa, np.array([p.z]), np.array([p.theta]), t)
    return PhasePoint(complex(z[0]), float(th[0]))


def exact_flow_arrays(kappa, z0, theta0, t):
    """Vectorised closed-form flow on curvature -kappa^2."""
    z0 = np.asarray(z0, dtype=complex)
    theta0 = np.asarray(theta0, dtype=float)
    w = np.exp(1j * theta0) * np.tanh(kappa * np.asarray(t, dtype=float) / 2.0)
    den = 1.0 + np.conj(z0) * w
    z = (w + z0) / den
    th = (theta0 - 2.0 * np.angle(den)) % (2 * math.pi)
    return z, th


def jacobi_transport(model, p, t, init, tol=DEFAULT_TOL):
    """Solve j'' + K j = 0 along the orbit of p; returns the state at time t."""
    y0 = [p.z.real, p.z.imag, p.theta, init.j, init.dj]
    y = _run(model, y0, [t], njac=1, tol=tol, recentre=True)[0]
    j, dj = float(y[3]), float(y[4])
    return JacobiState(j, dj, dj / j if j != 0 else None)


def jacobi_path(model, p, times, init, tol=DEFAULT_TOL):
    y0 = [p.z.real, p.z.imag, p.theta, init.j, init.dj]
    y = _run(model, y0, times, njac=1, tol=tol, recentre=True)
    return y[:, 3].copy(), y[:, 4].copy()


def unstable_riccati(model, p, burn_in=None, tol=1e-9):
    """psi^u(p): forward Riccati u' = -K - u^2 started at sqrt(sup|K|) a time
    ``burn_in`` in the past of p."""
    kmax = model.kappa_max
    if burn_in is None:
        burn_in = 10.0 / model.kappa_min
    if isinstance(model, ConstantCurvature):
        # the start value is already the fixed point; still run the ODE
        q = p
    else:
        back = _run(model, [p.z.real, p.z.imag, p.theta], [-burn_in], tol=tol, recentre=True)[0]
        q = PhasePoint(complex(back[0], back[1]), back[2])
    y0 = [q.z.real, q.z.imag, q.theta, kmax, 0.0]
    y = _run(model, y0, [burn_in], ric=True, tol=tol, recentre=True,
             ric_hi=2.0 * kmax + 1e-9)[0]
    return float(y[3])


def riccati_integral(model, p, t, u0, tol=1e-10):
    """Integrate u' = -K - u^2 from u(0)=u0 over [0, t]; returns (u(t), int u)."""
    y0 = [p.z.real, p.z.imag, p.theta, u0, 0.0]
    y = _run(model, y0, [t], ric=True, tol=tol, recentre=True)[0]
    return float(y[3]), float(y[4])


def deck_transform(gamma, p):
    """Action of an SU(1,1) element on a phase point."""
    gamma = np.asarray(gamma, dtype=complex)
    z = mobius(gamma, p.z)
    dth = float(np.angle(mobius_derivative(gamma, p.z)))
    return PhasePoint(complex(z), (p.theta + dth) % (2 * math.pi))


def _hyperbolic_connect(x, y):
    d = float(disk_distance(x, y))
    w = mobius(translate_to(-x), y)
    return d, float(math.atan2(w.imag, w.real)) % (2 * math.pi)


def connect(model, x, y, tol=1e-12, max_iter=50):
    """(d_g(x, y), theta) with exp_x(d * theta) = y."""
    x = complex(x)
    y = complex(y)
    if abs(x) >= 1 or abs(y) >= 1:
        raise PointOutsideDisk("connect endpoints must lie in the disk")
    if x == y:
        return 0.0, 0.0
    d, th = _hyperbolic_connect(x, y)
    if isinstance(model, ConstantCurvature):
        return d / model.kappa, th
    # seed length in metric units from the conformal factor along the segment
    s = d * math.exp(float(np.mean(model.phi(np.array([x, y])))))
    params = model.kernel_params()
    hint = np.array([1.0 + 0j, 0j])

    def shoot(s, th):
        try:
            out = _run(model, [x.real, x.imag, th, 0.0, 1.0], [s], njac=1, tol=1e-12)[0]
        except StepFailure:
            return None, math.inf
        end = complex(out[0], out[1])
        if abs(end) >= 1:
            return None, math.inf
        return out, float(disk_distance(end, y))

    out, err = shoot(s, th)
    if out is None:
        raise NoConvergence("connect: initial shot left the disk")
    res = y - complex(out[0], out[1])
    for _ in range(max_iter):
        res = y - complex(out[0], out[1])
        if abs(res) <= 1e-10 * (1.0 - abs(y) ** 2) or abs(res) < 1e-14:
            return s, th % (2 * math.pi)
        # Newton step in metric units at the endpoint, then damped by backtracking
        _, _, em, _ = kern.metric_data(complex(out[0], out[1]), params, hint)
        rg = res / em
        tang = np.exp(1j * out[2])
        ds = (rg * np.conj(tang)).real
        dth = (rg * np.conj(tang)).imag / out[3]
        scale = min(1.0, 1.0 / max(abs(ds), 1e-300), 0.3 / max(abs(dth), 1e-300))
        for _ in range(30):
            s_new, th_new = s + scale * ds, th + scale * dth
            if s_new > 0:
                out_new, err_new = shoot(s_new, th_new)
                if err_new < err:
                    break
            scale *= 0.5
        else:
            break
        s, th, out, err = s_new, th_new, out_new, err_new
    raise NoConvergence(f"connect: residual {abs(res):.3e} after {max_iter} iterations")


def distance(model, x, y):
    return connect(model, x, y)[0]
