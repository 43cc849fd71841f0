"""Vertical Fourier calculus on the unit tangent bundle of the disk.

Fibres are circles, so a function u(x, theta) expands as
sum_n u_n(x) e^{i n theta} / sqrt(2 pi) and the vertical Laplacian acts on
mode n by n^2.  Filters g(h^2 Delta_V) are diagonal multipliers.

``PhaseGridFunction`` lives on a ball grid and is transported
semi-Lagrangian in unit time steps; it works for every model but only on
small balls.  Rotation-invariant functions on large balls are transported
with the radial engine of ``spherical``.  The norm of the filtered
propagator on constant curvature is computed through the Plancherel
decomposition of L^2(PSL(2, R)).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import Aliasing, OutOfDomain
from .geometry import exact_flow_arrays
from .spherical import (BallGridFunction, GridSpec, _endpoints, exact_norm_hyperbolic,
                        radial_operator)

# ---------------------------------------------------------------------------
# fibre transforms


@dataclass
class PhaseGridFunction:
    """Vertical Fourier coefficients coeffs[node, n + N] for n in [-N, N]."""

    ball: BallGridFunction
    N: int
    coeffs: np.ndarray

    @property
    def modes(self):
        return np.arange(-self.N, self.N + 1)

    def norm(self):
        return float(np.sqrt(np.sum(self.ball.weights[:, None] * np.abs(self.coeffs) ** 2)))

    def copy(self, coeffs=None):
        return PhaseGridFunction(self.ball, self.N,
                                 self.coeffs.copy() if coeffs is None else coeffs)


def theta_grid(M):
    return 2.0 * math.pi * np.arange(M) / M


def fiber_transform(samples, N, ball=None):
    """Coefficients of u sampled at theta_k = 2 pi k / M on every node.

    ``samples`` has shape (nodes, M) with M >= 2N + 2.
    """
    samples = np.atleast_2d(np.asarray(samples))
    M = samples.shape[1]
    if M < 2 * N + 2:
        raise Aliasing(f"{M} fibre samples cannot carry modes |n| <= {N}")
    F = np.fft.fft(samples, axis=1) * (math.sqrt(2.0 * math.pi) / M)
    idx = np.arange(-N, N + 1) % M
    return PhaseGridFunction(ball, N, F[:, idx])


def inverse_fiber_transform(u, M):
    """Samples of u at M equally spaced fibre angles."""
    if M < 2 * u.N + 2:
        raise Aliasing(f"{M} fibre samples cannot carry modes |n| <= {u.N}")
    F = np.zeros((u.coeffs.shape[0], M), dtype=complex)
    F[:, np.arange(-u.N, u.N + 1) % M] = u.coeffs
    return np.fft.ifft(F, axis=1) * (M / math.sqrt(2.0 * math.pi))


def evaluate_phase(u, z, theta, order=3):
    """u at phase points (z, theta) by spatial interpolation of coefficients."""
    E = u.ball.interpolation_matrix(z, order)
    C = E @ u.coeffs
    ph = np.exp(1j * np.outer(np.asarray(theta).ravel(), u.modes))
    return np.sum(C * ph, axis=1) / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# filters


def default_profile(x):
    """Smooth even plateau: 1 on [-2, 2], 0 outside [-4, 4]."""
    y = (np.abs(np.asarray(x, dtype=float)) - 2.0) / 2.0
    out = np.where(y <= 0.0, 1.0, 0.0)
    m = (y > 0.0) & (y < 1.0)
    ym = y[m]
    rho = 1.0 / (1.0 - ym) - 1.0 / ym
    out[m] = 0.5 * (1.0 - np.tanh(0.5 * rho))
    return out


def plateau_profile(a, b):
    """Smooth even plateau: 1 on [-a, a], 0 outside [-b, b]."""
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")

    def g(x):
        y = (np.abs(np.asarray(x, dtype=float)) - a) / (b - a)
        out = np.where(y <= 0.0, 1.0, 0.0)
        m = (y > 0.0) & (y < 1.0)
        ym = y[m]
        rho = 1.0 / (1.0 - ym) - 1.0 / ym
        out[m] = 0.5 * (1.0 - np.tanh(0.5 * rho))
        return out

    g.support = b
    return g


default_profile.support = 4.0


def filter_multipliers(g, h, modes):
    modes = np.asarray(modes, dtype=float)
    return np.asarray(g(h * h * modes * modes), dtype=float)


def vertical_filter(u, g, h):
    """g(h^2 Delta_V) u."""
    return u.copy(u.coeffs * filter_multipliers(g, h, u.modes)[None, :])


def profile_support(g, h, search=1e4):
    """Largest |n| with g(h^2 n^2) != 0."""
    s = getattr(g, "support", None)
    if s is not None:
        return int(math.floor(math.sqrt(s) / h))
    n = np.arange(0, int(search))
    nz = np.flatnonzero(np.asarray(g(h * h * n * n.astype(float))) != 0)
    return int(nz.max()) if len(nz) else 0


def weyl_sum(lam, theta=0.0):
    """(sum over n^2 <= lam of |omega_n(theta)|^2, closed form (2 floor(sqrt lam) + 1) / 2 pi)."""
    n_max = math.isqrt(int(math.floor(lam)))
    n = np.arange(-n_max, n_max + 1)
    w = np.exp(1j * n * theta) / math.sqrt(2.0 * math.pi)
    return float(np.sum(np.abs(w) ** 2)), (2 * n_max + 1) / (2.0 * math.pi)


# ---------------------------------------------------------------------------
# transport on ball grids


def pullback_flow(model, u, t, order=3, M=None, step=1.0):
    """e^{-tX} u on a ball grid by semi-Lagrangian unit steps.

    Each step evaluates u at phi_{-s}(node, theta_k) for M fibre samples and
    transforms back.  Characteristics that leave the ball raise OutOfDomain.
    """
    if t == 0:
        return u.copy()
    M = M or 2 * u.N + 2
    nsteps = max(1, int(math.ceil(abs(t) / step)))
    s = t / nsteps
    th = theta_grid(M)
    n = len(u.ball)
    z0 = np.repeat(u.ball.nodes, M)
    t0 = np.tile(th, n)
    zb, tb = _endpoints(model, z0, t0, -s)
    r = 2.0 * np.arctanh(np.abs(zb))
    if np.any(r > u.ball.radius):
        raise OutOfDomain(f"{int(np.sum(r > u.ball.radius))} characteristics leave the ball")
    E = u.ball.interpolation_matrix(zb, order)
    ph = np.exp(1j * np.outer(tb, u.modes)) / math.sqrt(2.0 * math.pi)
    out = u
    for _ in range(nsteps):
        vals = np.sum((E @ out.coeffs) * ph, axis=1).reshape(n, M)
        out = fiber_transform(vals, u.N, u.ball)
    return out


# ---------------------------------------------------------------------------
# rotation-invariant transport


@dataclass
class RadialPhaseFunction:
    """Rotation-invariant u(r, beta) = sum_n C[i, n - lo] e^{i n beta} / sqrt(2 pi).

    beta is the angle of the direction from the outward radial one; ring i
    sits at radius (i + 1/2) h.
    """

    h: float
    lo: int
    coeffs: np.ndarray

    @property
    def radii(self):
        return (np.arange(self.coeffs.shape[0]) + 0.5) * self.h

    @property
    def ring_weights(self):
        return 2.0 * math.pi * np.sinh(self.radii) * self.h

    @property
    def modes(self):
        return self.lo + np.arange(self.coeffs.shape[1])

    def norm(self):
        return float(np.sqrt(np.sum(self.ring_weights[:, None] * np.abs(self.coeffs) ** 2)))


def radial_pullback(u, t, modes_out, R=None, grid=None, kappa=1.0):
    """e^{-tX} u for rotation-invariant u, returned on the mode band modes_out."""
    grid = (grid or GridSpec(h=u.h)).for_modes(max(abs(u.lo), abs(u.modes[-1]),
                                                   abs(modes_out[0]), abs(modes_out[1])))
    R = R or u.coeffs.shape[0] * u.h
    op, _, _, _ = radial_operator(kappa, t, R, grid, (int(u.lo), int(u.modes[-1])),
                                  (int(modes_out[0]), int(modes_out[1])))
    return RadialPhaseFunction(u.h, int(modes_out[0]), op(u.coeffs))


def high_mode_mass(t, threshold, n=1, width=1.0, h=0.02, M=2 ** 15, kappa=1.0):
    """Fraction of the mass of e^{-tX} u above |mode| > threshold.

    u(x, theta) = exp(-(d(o, x) / width)^2) e^{i n theta}, with theta the
    absolute fibre angle.  By rotation symmetry the fibre spectrum only
    depends on d(o, x), so one point per ring is enough; rings are weighted
    by sinh r.
    """
    rmax = kappa * t + 6.0 * width
    radii = (np.arange(int(math.ceil(rmax / h))) + 0.5) * h
    th = 2.0 * math.pi * np.arange(M) / M
    mask = np.abs(np.fft.fftfreq(M, 1.0 / M)) > threshold
    total = above = 0.0
    for r in radii:
        z0 = np.full(M, math.tanh(kappa * r / 2.0) + 0j)
        z, thp = exact_flow_arrays(kappa, z0, th, -t)
        rp = 2.0 * np.arctanh(np.minimum(np.abs(z), 1.0 - 1e-16)) / kappa
        F = np.fft.fft(np.exp(-(rp / width) ** 2) * np.exp(1j * n * thp)) / M
        p = np.abs(F) ** 2
        w = math.sinh(r)
        total += w * p.sum()
        above += w * p[mask].sum()
    return float(above / total)


# ---------------------------------------------------------------------------
# filtered propagator
#
# On curvature -1 the unit tangent bundle is PSL(2, R), the flow is right
# translation by a_t and vertical modes are right K-types.  The filtered
# propagator is therefore a right convolution operator and its norm is the
# supremum over the tempered dual of the norms of the finite blocks
# P pi(a_t) P, with P the filter multipliers on the K-types of pi.


def _boost(t):
    return math.cosh(t / 2.0), math.sinh(t / 2.0)


def _fft_size(t, N):
    return int(2 ** max(12, math.ceil(math.log2(4.0 * (N + 1) * math.exp(t)))))


def principal_series_block(t, s, N, M=None):
    """Matrix <pi_s(a_t) e_n, e_m> for |m|, |n| <= N.

    pi_s acts on L^2 of the circle by |h'|^{1/2 + i s} f o h with
    h = a_t^{-1}; e_n(xi) = e^{i n xi} / sqrt(2 pi).
    """
    M = M or _fft_size(t, N)
    a, b = _boost(t)
    z = np.exp(2j * math.pi * np.arange(M) / M)
    d = a - b * z
    hz = (a * z - b) / d
    amp = np.abs(d) ** (-1.0 - 2j * s)
    modes = np.arange(-N, N + 1)
    F = amp[None, :] * hz[None, :] ** modes[:, None]
    C = np.fft.fft(F, axis=1) / M
    return C[:, modes % M].T


def discrete_series_block(t, k, N, M=None):
    """Matrix of D_k^+(a_t) on its K-types of fibre mode k/2 .. N.

    Realised on holomorphic functions of the disk with the orthonormal basis
    z^m / ||z^m||, ||z^m||^2 = m! Gamma(k) / Gamma(m + k).  Returns the
    block and the fibre modes of its rows.
    """
    if k < 2 or k % 2:
        raise ValueError("k must be even and >= 2")
    top = N - k // 2
    if top < 0:
        return np.zeros((0, 0), dtype=complex), np.zeros(0, dtype=int)
    M = M or _fft_size(t, N)
    a, b = _boost(t)
    c = b / a
    m = np.arange(top + 1)
    # (a - b z)^{-k} = a^{-k} sum_i binom(i + k - 1, i) c^i z^i
    logc = math.log(c) if c > 0 else -np.inf
    A = np.array([math.exp(-k * math.log(a) + math.lgamma(i + k) - math.lgamma(i + 1)
                           - math.lgamma(k) + (i * logc if i else 0.0)) for i in m])
    z = np.exp(2j * math.pi * np.arange(M) / M)
    hz = (a * z - b) / (a - b * z)
    B = (np.fft.fft(hz[None, :] ** m[:, None], axis=1) / M)[:, :top + 1]
    T = np.empty((top + 1, top + 1), dtype=complex)
    for j in m:
        T[:, j] = [np.dot(A[:i + 1], B[j, i::-1]) for i in m]
    ln = 0.5 * np.array([math.lgamma(i + 1) + math.lgamma(k) - math.lgamma(i + k) for i in m])
    return T * np.exp(ln[:, None] - ln[None, :]), m + k // 2


@dataclass
class FilteredNorm:
    norm: float
    bound_value: float
    N_modes: int
    s_max: float                  # principal series parameter of the maximum
    principal: float              # sup over the principal series
    discrete: float               # max over the discrete series
    fft_size: int


def filtered_norm(model, g, h, t, R=None, s_max=3.0, n_s=31, sm_norm=None, C=1.0, M=None):
    """||g(h^2 Delta_V) e^{-tX} g(h^2 Delta_V)|| on constant curvature.

    The supremum over the principal series is taken on a grid of s in
    [0, s_max] and refined by a bounded scalar search around the best node;
    the discrete series D_k, k = 2, 4, ..., are checked exhaustively.
    ``bound_value`` is C (1 + 1/h) ||L_t||, with ||L_t|| the exact value
    unless ``sm_norm`` is given.  The computation covers the whole plane;
    a radius ``R``, if given, is only checked against R >= t + 2.
    """
    if not 0 < h <= 1:
        raise ValueError("h must lie in (0, 1]")
    if R is not None and R < model.kappa * t + 2.0:
        raise ValueError("R must be at least t + 2")
    if not model.isotropic:
        raise NotImplementedError("filtered_norm needs a constant curvature model")
    tt = model.kappa * t
    N = profile_support(g, h)
    if sm_norm is None:
        sm_norm = exact_norm_hyperbolic(2, tt) if tt > 0 else 1.0
    bound = C * (1.0 + 1.0 / h) * sm_norm
    M = M or _fft_size(tt, N)
    mult = filter_multipliers(g, h, np.arange(-N, N + 1))
    if not np.any(mult):
        return FilteredNorm(0.0, bound, 2 * N + 1, 0.0, 0.0, 0.0, M)

    def ps(s):
        B = principal_series_block(tt, s, N, M)
        return float(np.linalg.norm(mult[:, None] * B * mult[None, :], 2))

    grid = np.linspace(0.0, s_max, n_s)
    vals = np.array([ps(s) for s in grid])
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_s - 1)]
    res = minimize_scalar(lambda s: -ps(s), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-4})
    s_best, p_best = (res.x, -res.fun) if -res.fun > vals[i] else (grid[i], vals[i])
    d_best = 0.0
    for k in range(2, 2 * N + 1, 2):
        T, nm = discrete_series_block(tt, k, N, M)
        if T.size:
            mm = filter_multipliers(g, h, nm)
            d_best = max(d_best, float(np.linalg.norm(mm[:, None] * T * mm[None, :], 2)))
    return FilteredNorm(max(p_best, d_best), bound, 2 * N + 1, float(s_best),
                        float(p_best), d_best, M)


FILTERED_HEADER = ["h", "t", "norm_hat", "bound_value", "ratio", "N_modes", "grid_h"]


def write_filtered_csv(path, rows, config_hash=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FILTERED_HEADER + (["config_hash"] if config_hash is not None else []))
        for r in rows:
            out = [repr(float(r[k])) if k != "N_modes" else str(int(r[k]))
                   for k in FILTERED_HEADER]
            if config_hash is not None:
                out.append(config_hash)
            w.writerow(out)

