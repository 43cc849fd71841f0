"""Random permutation representations of free and surface groups.

A homomorphism phi: Gamma -> S_n is stored through the images of the
generators.  Permutations are integer arrays p with p[i] the image of i;
words compose right to left, so phi(w1 w2) = phi(w1) o phi(w2).  The
standard representation rho_n is the permutation action
(rho(p) x)[p[i]] = x[i] restricted to zero-sum vectors and is never formed
as a matrix.

Letters are integers k for generator k and ~k for its inverse, as in
``orbits``.  Surface groups use the presentation [a1,b1]...[ag,bg] = 1 with
generators ordered a1, b1, ..., ag, bg.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import (BallTooLarge, NoConvergence, NotZeroSum,
                     RejectionBudgetExceeded)
from .orbits import free_reduce, inverse_word

# ---------------------------------------------------------------------------
# homomorphisms


@dataclass
class PermutationHom:
    n: int
    kind: str                    # "free" or "surface"
    rank: int                    # number of generators
    images: np.ndarray           # (rank, n) permutations
    seed: int | None = None
    rejects: int = 0

    @property
    def genus(self):
        return self.rank // 2 if self.kind == "surface" else None

    def inverse_images(self):
        inv = np.empty_like(self.images)
        for k, p in enumerate(self.images):
            inv[k, p] = np.arange(self.n)
        return inv

    def letter(self, s):
        """Permutation of a letter."""
        if s >= 0:
            return self.images[s]
        inv = np.empty(self.n, dtype=self.images.dtype)
        inv[self.images[~s]] = np.arange(self.n)
        return inv

    def word(self, w):
        """phi(w) as a permutation array."""
        p = np.arange(self.n)
        for s in reversed(w):
            p = self.letter(s)[p]
        return p

    def relation_holds(self):
        if self.kind != "surface":
            return True
        return bool(np.array_equal(_surface_relator(self.images), np.arange(self.n)))


def _compose(p, q):
    """p o q."""
    return p[q]


def _inverse(p):
    inv = np.empty_like(p)
    inv[p] = np.arange(len(p))
    return inv


def _surface_relator(images):
    """[a1,b1]...[ag,bg] for images (a1, b1, ..., ag, bg)."""
    n = images.shape[-1]
    out = np.arange(n)
    for i in range(0, images.shape[0], 2):
        a, b = images[i], images[i + 1]
        c = _compose(_compose(_compose(a, b), _inverse(a)), _inverse(b))
        out = _compose(out, c)
    return out


def _relator_batch(images):
    """Relator for a batch of shape (m, 2g, n)."""
    m, k, n = images.shape
    inv = np.empty_like(images)
    rows = np.arange(m)[:, None]
    for j in range(k):
        inv[rows, j, images[:, j]] = np.arange(n)[None, :]
    out = np.broadcast_to(np.arange(n), (m, n)).copy()
    for i in range(0, k, 2):
        a, b, ai, bi = images[:, i], images[:, i + 1], inv[:, i], inv[:, i + 1]
        # out o a o b o a^{-1} o b^{-1}
        c = np.take_along_axis(a, np.take_along_axis(b, np.take_along_axis(ai, bi, 1), 1), 1)
        out = np.take_along_axis(out, c, 1)
    return out


def sample_hom_free(n, r, seed=None):
    """r independent uniform permutations of [n]."""
    if n < 1 or r < 1:
        raise ValueError("need n >= 1 and r >= 1")
    rng = np.random.default_rng(seed)
    imgs = np.stack([rng.permutation(n) for _ in range(r)])
    return PermutationHom(n, "free", r, imgs, seed)


def sample_hom_surface(n, g, seed=None, max_rejects=1_000_000, batch=None):
    """Uniform element of Hom(Gamma_g, S_n) by rejection from uniform tuples."""
    if n < 1 or g < 1:
        raise ValueError("need n >= 1 and g >= 1")
    rng = np.random.default_rng(seed)
    rejects = 0
    batch = batch or 256
    ident = np.arange(n)
    while True:
        m = min(batch, max_rejects - rejects + 1)
        imgs = rng.permuted(np.broadcast_to(ident, (m, 2 * g, n)).copy(), axis=2)
        ok = np.flatnonzero(np.all(_relator_batch(imgs) == ident, axis=1))
        if len(ok):
            rejects += int(ok[0])
            return PermutationHom(n, "surface", 2 * g, imgs[ok[0]], seed, rejects)
        rejects += m
        if rejects > max_rejects:
            raise RejectionBudgetExceeded(
                f"no surface relation after {rejects} draws for n={n}, g={g}")


def sample_surface_batch(n, g, count, seed=None, max_rejects=None):
    """``count`` independent uniform homs, as an array (count, 2g, n)."""
    rng = np.random.default_rng(seed)
    ident = np.arange(n)
    out = []
    have = 0
    drawn = 0
    while have < count:
        m = max(1024, 2 * (count - have))
        imgs = rng.permuted(np.broadcast_to(ident, (m, 2 * g, n)).copy(), axis=2)
        ok = np.all(_relator_batch(imgs) == ident, axis=1)
        out.append(imgs[ok])
        have += int(ok.sum())
        drawn += m
        if max_rejects is not None and drawn - have > max_rejects:
            raise RejectionBudgetExceeded(f"rejection budget {max_rejects} exhausted")
    return np.concatenate(out)[:count]


def enumerate_surface_homs(n, g):
    """Brute force: the accepted tuples among all (n!)^{2g}; returns the count."""
    perms = np.array(list(_all_perms(n)))
    count = 0
    for idx in product(range(len(perms)), repeat=2 * g):
        if np.array_equal(_surface_relator(perms[list(idx)]), np.arange(n)):
            count += 1
    return count


def _all_perms(n):
    from itertools import permutations
    return permutations(range(n))


# ---------------------------------------------------------------------------
# exact counts


def partitions(n, max_part=None):
    if max_part is None:
        max_part = n
    if n == 0:
        yield ()
        return
    for k in range(min(n, max_part), 0, -1):
        for rest in partitions(n - k, k):
            yield (k,) + rest


def hook_dimension(lam):
    """Dimension of the S_n irrep for partition lam (hook length formula)."""
    n = sum(lam)
    conj = [sum(1 for part in lam if part > j) for j in range(lam[0])] if lam else []
    hooks = 1
    for i, row in enumerate(lam):
        for j in range(row):
            hooks *= (row - j - 1) + (conj[j] - i - 1) + 1
    return math.factorial(n) // hooks


def hom_count_surface(n, g):
    """|Hom(Gamma_g, S_n)| = n!^{2g-1} sum_lam (dim lam)^{2-2g}, exactly."""
    if n > 20:
        raise ValueError("n must be <= 20")
    if n == 0:
        return 1
    f = math.factorial(n)
    # n!^{2g-1} dim^{2-2g} = n! (n!/dim)^{2g-2}, and dim divides n!
    return sum(f * (f // hook_dimension(lam)) ** (2 * g - 2) for lam in partitions(n))


# ---------------------------------------------------------------------------
# the standard representation


def apply_perm(p, x):
    """rho(p) x with (rho(p) x)[p[i]] = x[i]."""
    y = np.empty_like(x)
    y[p] = x
    return y


def apply_std(hom, word, x, check=True):
    """rho_n(word) x on zero-sum vectors."""
    x = np.asarray(x)
    if check and abs(x.sum()) > 1e-12 * max(1.0, float(np.abs(x).sum())):
        raise NotZeroSum(f"coordinate sum {x.sum():.3e}")
    for s in reversed(tuple(word)):
        x = apply_perm(hom.letter(s), x)
    return x


@dataclass
class GroupAlgebraElement:
    """Finitely supported sum of reduced words with complex coefficients."""

    terms: dict = field(default_factory=dict)

    def __post_init__(self):
        red = {}
        for w, c in self.terms.items():
            key = tuple(free_reduce(tuple(w)))
            red[key] = red.get(key, 0) + c
        self.terms = {w: c for w, c in red.items() if c != 0}

    @classmethod
    def adjacency(cls, rank):
        """sum of the generators and their inverses."""
        terms = {}
        for k in range(rank):
            terms[(k,)] = 1.0
            terms[(~k,)] = 1.0
        return cls(terms)

    @classmethod
    def delta(cls, word=()):
        return cls({tuple(word): 1.0})

    @property
    def self_adjoint(self):
        return all(abs(self.terms.get(tuple(inverse_word(w)), 0) - np.conj(c)) <= 1e-14
                   for w, c in self.terms.items())

    def adjoint(self):
        return GroupAlgebraElement({tuple(inverse_word(w)): np.conj(c)
                                    for w, c in self.terms.items()})

    @property
    def l1(self):
        return float(sum(abs(c) for c in self.terms.values()))

    @property
    def max_length(self):
        return max((len(w) for w in self.terms), default=0)


def apply_element(hom, w, x):
    """rho_n(w) x for a group algebra element w."""
    out = np.zeros(x.shape, dtype=np.result_type(x, *[np.asarray(c) for c in w.terms.values()]))
    for word, c in w.terms.items():
        out += c * apply_std(hom, word, x, check=False)
    return out


def _project(x):
    return x - x.mean()


def _std_operator(hom, w, shift=0.0):
    """rho_n(w) on C^n with constants projected out (mean subtraction).

    Constants are sent to -shift * constants, which keeps them away from the
    top of the spectrum when ``shift`` exceeds ||w||_1.
    """
    n = hom.n
    dt = complex if any(np.iscomplexobj(np.asarray(c)) for c in w.terms.values()) else float
    wa = w.adjoint()

    def mv(x):
        x = np.asarray(x, dtype=dt).ravel()
        y = _project(apply_element(hom, w, _project(x)))
        return y - shift * x.mean() if shift else y

    def rmv(x):
        x = np.asarray(x, dtype=dt).ravel()
        y = _project(apply_element(hom, wa, _project(x)))
        return y - np.conj(shift) * x.mean() if shift else y

    return spla.LinearOperator((n, n), matvec=mv, rmatvec=rmv, dtype=dt)


def _dense(A):
    return np.column_stack([A.matvec(e) for e in np.eye(A.shape[0])])


@dataclass
class RepNorm:
    value: float
    max_iter: int
    restarts: int


def rep_norm(w, hom, iters=5000, tol=1e-6, restarts=5, seed=0):
    """||rho_n(w)|| on V_n^0.

    The top eigenvalue of rho(w)* rho(w) is found by implicitly restarted
    Lanczos, a Krylov acceleration of power iteration; on a convergence
    failure it restarts from a fresh random vector up to ``restarts`` times.
    Small n is handled densely.
    """
    if w.max_length > 32:
        raise ValueError("support must lie within word length 32")
    n = hom.n
    if n == 1:
        return RepNorm(0.0, 0, 0)
    A = _std_operator(hom, w)
    if n <= 64:
        return RepNorm(float(np.linalg.norm(_dense(A), 2)), 0, 0)
    AtA = spla.LinearOperator((n, n), matvec=lambda y: A.rmatvec(A.matvec(y)), dtype=A.dtype)
    rng = np.random.default_rng(seed)
    for attempt in range(restarts + 1):
        v0 = _project(rng.standard_normal(n))
        try:
            vals = spla.eigsh(AtA, k=1, which="LA", v0=v0, tol=tol, maxiter=iters,
                              return_eigenvectors=False)
            return RepNorm(float(math.sqrt(max(vals[0], 0.0))), iters, attempt)
        except spla.ArpackNoConvergence:
            continue
    raise NoConvergence(f"rep_norm: no convergence after {restarts} restarts")


def new_spectrum(hom, w, k=1, tol=1e-8, seed=0):
    """Top-k eigenvalues of the self-adjoint rho_n(w) on V_n^0, descending."""
    if not w.self_adjoint:
        raise ValueError("w must be self-adjoint")
    n = hom.n
    if n == 1:
        return []
    k = min(k, n - 1)
    shift = w.l1 + 1.0
    A = _std_operator(hom, w, shift)
    if n <= max(64, k + 2):
        ev = np.linalg.eigvalsh(0.5 * (_dense(A) + _dense(A).conj().T))
        return sorted(ev.tolist(), reverse=True)[:k]
    rng = np.random.default_rng(seed)
    try:
        vals = spla.eigsh(A, k=k, which="LA", v0=_project(rng.standard_normal(n)), tol=tol,
                          return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise NoConvergence(str(exc)) from exc
    return sorted(np.real(vals).tolist(), reverse=True)


def permutation_spectrum(hom, w):
    """Full spectrum of self-adjoint w in the permutation representation on C^n."""
    n = hom.n
    M = np.column_stack([apply_element(hom, w, e.astype(complex)) for e in np.eye(n)])
    return np.sort(np.linalg.eigvalsh(0.5 * (M + M.conj().T)))[::-1]


def trace_std(hom, word):
    """Trace of rho_n(word), probed with the basis vectors projected to V_n^0."""
    tr = 0.0
    for j in range(hom.n):
        e = -np.full(hom.n, 1.0 / hom.n)
        e[j] += 1.0
        y = apply_std(hom, word, e)
        tr += y[j] - y.mean()
    return tr


# ---------------------------------------------------------------------------
# regular representation on Cayley balls


def _free_ball(rank, R, cap):
    """Reduced words of length <= R: arrays (last letter index, neighbour table).

    Letters are indexed 0..2r-1 with index 2k for k and 2k+1 for ~k.
    ``nbr[x, s]`` is the element x * s or -1 outside the ball.
    """
    size = 1 + sum(2 * rank * (2 * rank - 1) ** (L - 1) for L in range(1, R + 1))
    if size > cap:
        raise BallTooLarge(f"free ball of radius {R} has {size} elements (cap {cap})")
    L = 2 * rank
    nbr = -np.ones((size, L), dtype=np.int64)
    last = -np.ones(size, dtype=np.int64)
    depth = np.zeros(size, dtype=np.int64)
    n = 1
    frontier = np.array([0])
    for d in range(1, R + 1):
        new = []
        for s in range(L):
            inv = s ^ 1
            par = frontier[last[frontier] != inv]
            k = len(par)
            idx = np.arange(n, n + k)
            nbr[par, s] = idx
            nbr[idx, inv] = par
            last[idx] = s
            depth[idx] = d
            n += k
            new.append(idx)
        frontier = np.concatenate(new)
    return nbr, depth


def _letter_index(s):
    return 2 * s if s >= 0 else 2 * (~s) + 1


def _surface_ball(group, R, cap):
    """Cayley ball of a Fuchsian group in its generators (and inverses)."""
    mats = group.letter_matrices          # dict letter -> SU(1,1)
    letters = group.letters
    L = len(letters)
    keys = {}
    elems = [np.eye(2, dtype=complex)]
    depth = [0]

    def key(M):
        a, b = M[0, 0], M[0, 1]
        if a.real < 0 or (a.real == 0 and a.imag < 0):
            a, b = -a, -b                # PSU(1,1): M and -M agree
        sc = 1e8 / max(1.0, abs(a))
        return (round(a.real * sc), round(a.imag * sc), round(b.real * sc), round(b.imag * sc))

    keys[key(elems[0])] = 0
    q = deque([0])
    edges = []
    while q:
        x = q.popleft()
        for li, s in enumerate(letters):
            M = elems[x] @ mats[s]
            k = key(M)
            y = keys.get(k)
            if y is None:
                if depth[x] + 1 > R:
                    continue
                if len(elems) >= cap:
                    raise BallTooLarge(f"surface ball of radius {R} exceeds cap {cap}")
                y = len(elems)
                keys[k] = y
                elems.append(M)
                depth.append(depth[x] + 1)
                q.append(y)
            edges.append((x, li, y))
    n = len(elems)
    nbr = -np.ones((n, L), dtype=np.int64)
    for x, li, y in edges:
        nbr[x, li] = y
    return nbr, np.array(depth), letters


def _ball_operator(w, nbr, letter_index):
    """Sparse compression of f -> sum_w c_w f(x w) to the ball."""
    n = nbr.shape[0]
    rows, cols, vals = [], [], []
    for word, c in w.terms.items():
        cur = np.arange(n)
        for s in word:
            # cur == -1 would wrap to the last row, so mask it again
            cur = np.where(cur >= 0, nbr[cur, letter_index(s)], -1)
        ok = cur >= 0
        rows.append(np.flatnonzero(ok))
        cols.append(cur[ok])
        vals.append(np.full(int(ok.sum()), c, dtype=complex))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))


@dataclass
class BallNorm:
    value: float
    increment: float
    R: int
    size: int


def _top_singular(A, seed=0):
    if A.shape[0] <= 400:
        return float(np.linalg.norm(A.toarray(), 2))
    rng = np.random.default_rng(seed)
    AtA = spla.LinearOperator(A.shape, matvec=lambda x: A.conj().T @ (A @ x), dtype=complex)
    vals = spla.eigsh(AtA, k=1, which="LA", v0=rng.standard_normal(A.shape[0]),
                      tol=1e-10, return_eigenvectors=False)
    return float(math.sqrt(max(vals[0].real, 0.0)))


def regular_norm_ball(w, kind="free", R=8, rank=2, group=None, cap=4_000_000):
    """Norm of lambda(w) compressed to the Cayley ball of radius R.

    ``kind`` is "free" (rank ``rank``) or "surface" (a FuchsianGroup, by
    default the genus-2 group of the package).  Returns the value and the
    increment from radius R - 2, which is >= 0 by monotonicity.
    """
    vals = []
    sizes = []
    for rr in (max(R - 2, 0), R):
        if kind == "free":
            nbr, _ = _free_ball(rank, rr, cap)
            A = _ball_operator(w, nbr, _letter_index)
        elif kind == "surface":
            from .geometry import default_group
            g = group or default_group()
            nbr, _, letters = _surface_ball(g, rr, cap)
            pos = {s: i for i, s in enumerate(letters)}
            A = _ball_operator(w, nbr, lambda s: pos[s])
        else:
            raise ValueError(f"unknown group kind {kind!r}")
        vals.append(_top_singular(A))
        sizes.append(A.shape[0])
    return BallNorm(vals[1], vals[1] - vals[0], R, sizes[1])


def kesten_norm(rank):
    """||lambda(adjacency)|| for the free group of the given rank: 2 sqrt(2r - 1)."""
    return 2.0 * math.sqrt(2 * rank - 1)


# ---------------------------------------------------------------------------
# Schreier graphs


@dataclass
class SchreierReport:
    n: int
    diameter: int
    radius: np.ndarray                   # tree-like radius per vertex (capped)
    fractions: dict                      # R -> fraction with radius >= R

    @property
    def median_radius(self):
        return float(np.median(self.radius))


def _treelike_radius(nbr, v, cap):
    """Largest R <= cap such that reduced words of length <= R from v hit
    distinct vertices."""
    seen = {v}
    frontier = [(v, -1)]                  # (vertex, index of the letter used to arrive)
    for d in range(cap):
        nxt = []
        for x, came in frontier:
            for s in range(nbr.shape[1]):
                if came >= 0 and s == (came ^ 1):
                    continue
                y = int(nbr[x, s])
                if y in seen:
                    return d
                seen.add(y)
                nxt.append((y, s))
        frontier = nxt
    return cap


def schreier_diagnostics(hom, max_radius=6):
    """Diameter and tree-like radii of the Schreier graph of hom on [n].

    Edges join i to p_s(i) for every generator image p_s.
    """
    n = hom.n
    L = 2 * hom.rank
    nbr = np.empty((n, L), dtype=np.int64)
    for k in range(hom.rank):
        nbr[:, 2 * k] = hom.images[k]
        nbr[:, 2 * k + 1] = _inverse(hom.images[k])
    rad = np.array([_treelike_radius(nbr, v, max_radius) for v in range(n)])
    if n == 1:
        diam = 0
    else:
        from scipy.sparse.csgraph import shortest_path
        rows = np.repeat(np.arange(n), L)
        G = sparse.csr_matrix((np.ones(n * L), (rows, nbr.ravel())), shape=(n, n))
        D = shortest_path(G, unweighted=True, directed=False)
        diam = int(np.max(D)) if np.all(np.isfinite(D)) else -1
    fr = {R: float(np.mean(rad >= R)) for R in range(1, max_radius + 1)}
    return SchreierReport(n, diam, rad, fr)


# ---------------------------------------------------------------------------
# resonances


def resonance_map(lam):
    """The two resonances -1/2 +- sqrt(1/4 - lam) attached to a Laplace eigenvalue."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    d = 0.25 - lam
    if d >= 0:
        s = math.sqrt(d)
        return complex(-0.5 + s, 0.0), complex(-0.5 - s, 0.0)
    s = math.sqrt(-d)
    return complex(-0.5, s), complex(-0.5, -s)


# ---------------------------------------------------------------------------
# experiments and output


@dataclass
class TrialResult:
    group: str
    n: int
    seed: int
    word_id: str
    norm_rep: float
    norm_regular_ball: float
    ball_R: int
    gap: float
    accepted: bool
    new_top: float


def strongconv_trials(n, seeds, w, word_id, reference, ball_R, eps=0.2, kind="free",
                      rank=2, genus=2):
    """rep_norm and the top new eigenvalue over seeded random homs."""
    out = []
    for seed in seeds:
        if kind == "free":
            hom = sample_hom_free(n, rank, seed)
        else:
            hom = sample_hom_surface(n, genus, seed)
        nr = rep_norm(w, hom, seed=seed).value
        top = new_spectrum(hom, w, 1, seed=seed)[0] if w.self_adjoint else float("nan")
        out.append(TrialResult(kind, n, int(seed), word_id, nr, reference, ball_R,
                               nr - reference, bool(nr <= reference + eps), top))
    return out


STRONGCONV_HEADER = ["group", "n", "seed", "word_id", "norm_rep", "norm_regular_ball",
                     "ball_R", "gap", "accepted"]
SCHREIER_HEADER = ["n", "seed", "diameter"] + [f"treelike_fraction_R{k}" for k in range(1, 7)]


def write_strongconv_csv(path, trials, config_hash=None):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(STRONGCONV_HEADER + (["config_hash"] if config_hash is not None else []))
        for t in trials:
            row = [t.group, t.n, t.seed, t.word_id, repr(t.norm_rep), repr(t.norm_regular_ball),
                   t.ball_R, repr(t.gap), int(t.accepted)]
            if config_hash is not None:
                row.append(config_hash)
            wr.writerow(row)


def write_schreier_csv(path, rows, config_hash=None):
    """rows: (n, seed, SchreierReport)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(SCHREIER_HEADER + (["config_hash"] if config_hash is not None else []))
        for n, seed, rep in rows:
            row = [n, seed, rep.diameter] + [repr(rep.fractions.get(k, 0.0)) for k in range(1, 7)]
            if config_hash is not None:
                row.append(config_hash)
            wr.writerow(row)
