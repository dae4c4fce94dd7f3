"""Flatness from Riesz-transform differences and the stopping-time construction.

Two halves:

* flatness: a linearisation T of the smoothed transform, simplex-spanning
  balls, the plane through their representatives and the resulting
  beta_infinity certificate;
* corona: the table of (point, scale) pairs satisfying the density, beta_1
  and angle conditions, the stopping height h, the gauges d and D, the
  partition Z/F1/F2/F3, the Lipschitz graph blended from good planes, the
  mollified projected density g and a report for the whole pipeline.

All sups and infs over scales are taken over a geometric grid with a fixed
number of levels per octave.  Witness searches run over the table, i.e.
over atoms of F in B0.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy.integrate import quad
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .geometry import AffinePlane, DegenerateFitError, beta_search, fit_l2, plane_angle
from .graphs import GraphFunction, make_graph_function
from .kernels import direct_sum, oscillation_profile, sup_oscillation
from .measure import (Ball, Constants, DiscreteMeasure, GoodRadiusError, density, find_good_radius,
                      poisson_p, poisson_p2, unit_ball_volume)

LABELS = {"Z": 0, "F1": 1, "F2": 2, "F3": 3, "none": -1}


class DensityError(ValueError):
    pass


class NoSimplexError(RuntimeError):
    def __init__(self, msg, best_constant):
        super().__init__(msg)
        self.best_constant = best_constant


# --- linearisation of the smoothed transform ------------------------------

def taylor_term(mu: DiscreteMeasure, x0, x, eps: float) -> np.ndarray:
    """Derivative of the smoothed transform at x0 applied to x - x0.

    T(u) = sum w [(|y|^2 + eps^2) u - (n+1)(u.y) y] / (|y|^2 + eps^2)^((n+3)/2)
    with y = atom - x0.  ``x`` may be a batch.
    """
    x0 = np.asarray(x0, dtype=float)
    u = np.atleast_2d(np.asarray(x, dtype=float)) - x0
    y = mu.points - x0
    s = np.einsum("ij,ij->i", y, y) + eps * eps
    n = mu.n
    c1 = mu.weights / s ** ((n + 1) / 2)
    c2 = (n + 1) * mu.weights / s ** ((n + 3) / 2)
    return u * c1.sum() - ((u @ y.T) * c2) @ y


def taylor_remainders(mu: DiscreteMeasure, x0, xs, eps: float) -> np.ndarray:
    """|R(x) - R(x0) - T(x - x0)| / (|x - x0|^2 eps^-2 P(x0, eps)) for each x."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    x0 = np.asarray(x0, dtype=float)
    r = np.linalg.norm(xs - x0, axis=1)
    if np.any(r == 0):
        raise ValueError("query points must differ from x0")
    R = direct_sum(mu, np.vstack([x0[None], xs]), eps, "smooth")
    E = R[1:] - R[0] - taylor_term(mu, x0, xs, eps)
    return np.linalg.norm(E, axis=1) / (r ** 2 / eps ** 2 * poisson_p(mu, x0, eps))


# --- simplex-spanning balls -------------------------------------------------

def simplex_volume(vertices) -> float:
    """n-volume of the simplex with the given n+1 vertices in R^d."""
    v = np.asarray(vertices, dtype=float)
    V = v[1:] - v[0]
    n = V.shape[0]
    det = np.linalg.det(V @ V.T) if n else 1.0
    return math.sqrt(max(det, 0.0)) / math.factorial(n)


def _hull_distance(points, chosen):
    base = chosen[0]
    diff = points - base
    if len(chosen) == 1:
        return np.linalg.norm(diff, axis=1)
    V = np.asarray(chosen[1:]) - base
    q, _ = np.linalg.qr(V.T)
    return np.linalg.norm(diff - (diff @ q) @ q.T, axis=1)


@dataclass
class SimplexFamily:
    balls: list
    parent: Ball
    members: list  # atom indices inside each ball
    min_volume: float  # over the sampled transversals
    constant: float  # t^n / min_volume, the achieved C14

    def __len__(self):
        return len(self.balls)

    def __iter__(self):
        return iter(self.balls)

    def __getitem__(self, i):
        return self.balls[i]


def select_simplex_balls(mu: DiscreteMeasure, B: Ball, C11: float = 10.0, C12: float = 8.0, C13: float = 10.0,
                         C14: float = 32.0, samples: int = 256, seed: int = 0) -> SimplexFamily:
    """n+1 balls of radius t/C12 centred on the support whose transversals span fat simplices.

    Centres are chosen greedily among atoms of B with density at least 1/C13
    at radius t/C12: the first is the candidate farthest from their centroid,
    each next one the candidate farthest from the affine hull of those
    already chosen.  The volume bound is verified on the vertex choice, every
    corner combination of extreme atoms and ``samples`` random transversals.
    """
    n, t = mu.n, B.radius
    if density(mu, B.center, t) < 1 / C11:
        raise DensityError(f"density {density(mu, B.center, t):.3g} below 1/C11 = {1 / C11:.3g}")
    inside = mu.ball_indices(B.center, t)
    inside = inside[mu.weights[inside] > 0]
    pts = mu.points[inside]
    if np.unique(pts, axis=0).shape[0] < n + 1:
        raise DensityError("support in B has fewer than n+1 distinct points; the density precondition fails")
    rho = t / C12
    dens = np.array([density(mu, p, rho) for p in pts])
    cand = np.flatnonzero(dens >= 1 / C13)
    if cand.size < n + 1:
        raise DensityError("fewer than n+1 candidate centres with density >= 1/C13")
    cpts = pts[cand]
    ctr = np.average(cpts, axis=0, weights=mu.weights[inside[cand]])
    chosen = [cpts[np.argmax(np.linalg.norm(cpts - ctr, axis=1))]]
    picks = [int(np.argmax(np.linalg.norm(cpts - ctr, axis=1)))]
    for _ in range(n):
        dist = _hull_distance(cpts, chosen)
        k = int(np.argmax(dist))
        picks.append(k)
        chosen.append(cpts[k])
    balls = [Ball(c.copy(), rho) for c in chosen]
    members = [mu.ball_indices(b.center, rho) for b in balls]
    members = [m[mu.weights[m] > 0] for m in members]
    rng = np.random.default_rng(seed)
    trials = [np.array(chosen)]
    # extreme atoms of each ball along the ball's direction from the centroid
    ext = []
    for b, m in zip(balls, members):
        p = mu.points[m]
        proj = (p - b.center) @ (b.center - ctr) if np.linalg.norm(b.center - ctr) > 0 else p[:, 0]
        ext.append([p[np.argmin(proj)], p[np.argmax(proj)]])
    for combo in itertools.product(*ext):
        trials.append(np.array(combo))
    for _ in range(samples):
        trials.append(np.array([mu.points[rng.choice(m)] for m in members]))
    vmin = min(simplex_volume(v) for v in trials)
    const = t ** n / vmin if vmin > 0 else math.inf
    if const > C14:
        raise NoSimplexError(f"no certified simplex family: best constant {const:.4g} > C14 = {C14}", const)
    return SimplexFamily(balls, B, members, vmin, const)


def _representatives(mu, family):
    reps = []
    for m in family.members:
        reps.append(int(m[np.argmax(mu.weights[m])]))
    return np.array(reps)


def estimate_plane_from_riesz(mu: DiscreteMeasure, family: SimplexFamily, eps: float, queries=None,
                              constant: float = 1.0):
    """Plane L through the ball representatives and, per query point, (dist, bound).

    bound = constant * [eps/P2 * sum_j |R(x_j) - R(x_0)| + P/P2 * t^2/eps]
    where x_0 is the first representative, x_1..x_n the others, x_{n+1} the
    query, R the smoothed transform at scale eps and P, P2 are taken at x_0.
    Returns ``(L, dist, bound)``.
    """
    reps = _representatives(mu, family)
    X = mu.points[reps]
    vol = simplex_volume(X)
    assert vol > 0, "representatives are affinely degenerate"
    x0 = X[0]
    frame, _ = np.linalg.qr((X[1:] - x0).T)
    L = AffinePlane(x0, frame.T)
    if queries is None:
        queries = mu.points[mu.ball_indices(family.parent.center, 3 * family.parent.radius)]
    Y = np.atleast_2d(np.asarray(queries, dtype=float))
    t = family.parent.radius
    R = direct_sum(mu, np.vstack([X, Y]), eps, "smooth")
    R0 = R[0]
    base = np.sum(np.linalg.norm(R[1:mu.n + 1] - R0, axis=1))
    diffq = np.linalg.norm(R[mu.n + 1:] - R0, axis=1)
    P = poisson_p(mu, x0, eps)
    P2 = poisson_p2(mu, x0, eps)
    bound = constant * (eps / P2 * (base + diffq) + P / P2 * t * t / eps)
    return L, L.distance(Y), bound


@dataclass
class FlatnessCertificate:
    value: float  # sup over F cap 3B of dist(., L)/r
    bound: float  # the same sup for the Riesz-difference bound
    ell: float
    plane: AffinePlane
    oscillation: float  # measured max |R(y) - R(z)| over F cap 3B at scale ell
    delta: float
    family: SimplexFamily

    def __float__(self):
        return float(self.value)

    @property
    def hypothesis_ok(self) -> bool:
        return self.oscillation <= self.delta


def flatness_certificate(mu: DiscreteMeasure, F, B: Ball, delta: float, M: float = 10.0, C15: float = 10.0,
                         **simplex_kw) -> FlatnessCertificate:
    """Effective beta_infinity bound on F cap 3B from the simplex plane.

    The smoothing scale starts at r / sqrt(delta), the geometric middle of
    [r, r/delta], and is moved to a good radius (Poisson sum controlled by
    the density) without leaving that window.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    F = np.asarray(F, dtype=np.intp)
    r = B.radius
    s = r / math.sqrt(delta)
    try:
        ell = find_good_radius(mu, B.center, s, M, C15)
    except GoodRadiusError:
        ell = s
    ell = min(ell, r / delta)
    muF = mu.restrict(F)
    family = select_simplex_balls(muF, B, **simplex_kw)
    in3 = muF.ball_indices(B.center, 3 * r)
    Y = muF.points[in3]
    L, dist, bound = estimate_plane_from_riesz(mu, family, ell, queries=Y)
    R = direct_sum(mu, Y, ell, "smooth")
    osc = float(np.max(np.linalg.norm(R - R.mean(axis=0), axis=1)) * 2) if len(Y) else 0.0
    return FlatnessCertificate(float(dist.max() / r), float(bound.max() / r), ell, L, osc, delta, family)


# --- stopping regions -------------------------------------------------------

@dataclass(frozen=True)
class StoppingParams:
    delta0: float = 0.25
    eps: float = 1e-4
    alpha: float = 0.05
    B0: Ball | None = None
    F: np.ndarray | None = None
    t_min: float | None = None  # defaults to the truncation floor, or r0/64
    t_max: float | None = None  # defaults to 8 r0
    per_octave: int = 4
    D0: AffinePlane | None = None  # defaults to the L2 plane of F cap B0
    refine_beta: bool = True  # Nelder-Mead beta_1 when the L2 upper bound is inconclusive
    cap: float | None = None  # value of d, D on an empty S; defaults to 16 r0

    def __post_init__(self):
        if not self.alpha <= self.delta0 ** 2 * (1 + 1e-12):
            raise ValueError(f"need alpha <= delta0^2, got alpha={self.alpha}, delta0={self.delta0}")
        if not 0 < self.eps <= self.alpha ** 3 * (1 + 1e-12):
            raise ValueError(f"need 0 < eps <= alpha^3, got eps={self.eps}, alpha={self.alpha}")
        if self.B0 is None:
            raise ValueError("B0 is required")
        if self.per_octave < 1:
            raise ValueError("per_octave must be positive")

    @classmethod
    def from_constants(cls, consts: Constants, B0: Ball, F=None, **kw) -> "StoppingParams":
        return cls(consts.delta0, consts.eps, consts.alpha, B0, F, **kw)

    def scales(self, mu: DiscreteMeasure) -> np.ndarray:
        r0 = self.B0.radius
        t_max = self.t_max or 8 * r0
        t_min = self.t_min or (mu.floor if mu.floor > 0 else r0 / 64)
        if not 0 < t_min <= t_max:
            raise ValueError("need 0 < t_min <= t_max")
        K = int(math.floor(self.per_octave * math.log2(t_max / t_min) + 1e-9))
        return t_max * 2.0 ** (-np.arange(K, -1, -1) / self.per_octave)

    def capped(self) -> float:
        return self.cap if self.cap is not None else 16 * self.B0.radius


@dataclass(eq=False)
class StoppingRegion:
    mu: DiscreteMeasure
    params: StoppingParams
    F: np.ndarray  # atom indices of F
    atoms: np.ndarray  # atom indices of the table rows, F cap B0
    scales: np.ndarray
    D0: AffinePlane
    dens_F: np.ndarray
    dens_mu: np.ndarray
    beta1: np.ndarray
    angle: np.ndarray  # angle of the beta_1 plane with D0
    cond_i: np.ndarray
    cond_ii: np.ndarray
    cond_iii: np.ndarray
    witness: np.ndarray  # 1: beta_1 plane, 2: D0, 0: none
    bases: np.ndarray  # (X, T, d) beta_1 planes
    frames: np.ndarray  # (X, T, n, d)
    h: np.ndarray = field(default=None)
    h_lower: np.ndarray = field(default=None)

    @property
    def total(self) -> np.ndarray:
        return self.cond_i & self.cond_ii & self.cond_iii

    @property
    def points(self) -> np.ndarray:
        return self.mu.points[self.atoms]

    @property
    def in_S(self) -> np.ndarray:
        return self.total & (self.scales[None, :] >= self.h[:, None] * (1 - 1e-12))

    def plane(self, i: int, k: int) -> AffinePlane:
        """D_{x,t} for table row i and scale k (the witness plane of (iii), else the beta_1 plane)."""
        if self.witness[i, k] == 2:
            return self.D0
        return AffinePlane(self.bases[i, k], self.frames[i, k])


def _ball_lists(tree, X, r):
    return tree.query_ball_point(X, r * (1 + 1e-12) + 1e-300)


def stopping_region(mu: DiscreteMeasure, F, params: StoppingParams) -> StoppingRegion:
    """Membership table of the three stopping conditions over (F cap B0) x scales, then h."""
    B0 = params.B0
    F = np.asarray(F if F is not None else params.F, dtype=np.intp)
    Fpts = mu.points[F]
    far = np.linalg.norm(Fpts - B0.center, axis=1) > 10 * B0.radius * (1 + 1e-12)
    if np.any(far):
        raise ValueError(f"{int(far.sum())} atoms of F lie outside 10 B0")
    rows = F[np.linalg.norm(Fpts - B0.center, axis=1) <= B0.radius]
    if rows.size == 0:
        raise ValueError("F cap B0 is empty")
    n, d = mu.n, mu.d
    eps, alpha = params.eps, params.alpha
    Fw = mu.weights[F]
    Ftree = cKDTree(Fpts)
    D0 = params.D0
    if D0 is None:
        inB = F[np.linalg.norm(Fpts - B0.center, axis=1) <= B0.radius]
        D0 = fit_l2(mu.points[inB], mu.weights[inB], n)[0]
    scales = params.scales(mu)
    X = mu.points[rows]
    nx, nt = rows.size, scales.size
    dens_F = np.zeros((nx, nt))
    dens_mu = np.zeros((nx, nt))
    beta1 = np.zeros((nx, nt))
    angle = np.zeros((nx, nt))
    witness = np.zeros((nx, nt), dtype=np.int8)
    bases = np.zeros((nx, nt, d))
    frames = np.zeros((nx, nt, n, d))
    for k, t in enumerate(scales):
        lists = _ball_lists(Ftree, X, 3 * t)
        for i, lst in enumerate(lists):
            idx = np.asarray(lst, dtype=np.intp)
            P = Fpts[idx]
            w = Fw[idx]
            dist = np.linalg.norm(P - X[i], axis=1)
            keep = dist <= 3 * t
            P, w, dist = P[keep], w[keep], dist[keep]
            dens_F[i, k] = w[dist <= t].sum() / t ** n
            dens_mu[i, k] = mu.ball_mass(X[i], t) / t ** n
            res = _beta1(P, w, t, n, eps if params.refine_beta else math.inf)
            beta1[i, k] = res.value
            bases[i, k] = res.plane.base
            frames[i, k] = res.plane.frame
            angle[i, k] = plane_angle(res.plane, D0)
            if res.value <= 2 * eps and angle[i, k] <= alpha:
                witness[i, k] = 1
            elif np.sum(w * D0.distance(P) / t) / t ** n <= 2 * eps:
                witness[i, k] = 2
    region = StoppingRegion(mu, params, F, rows, scales, D0, dens_F, dens_mu, beta1, angle,
                            dens_F >= 0.5 * params.delta0, beta1 < 2 * eps, witness > 0, witness, bases, frames)
    region.h, region.h_lower = _heights(region)
    return region


def _beta1(P, w, t, n, refine_above):
    """beta_1 at scale t: the L2 plane's value, refined by search when it is at least ``refine_above``."""
    try:
        seed = fit_l2(P, w, n)[0]
    except DegenerateFitError:
        return beta_search(P, w, t, n, 1)
    val = float(np.sum(w * seed.distance(P) / t)) / t ** n
    if val < refine_above or val == 0.0:
        from .geometry import BetaResult
        return BetaResult(val, seed, 1, "l2")
    return beta_search(P, w, t, n, 1, seed=seed)


def _heights(region: StoppingRegion):
    """h(x) = 4 max{tau : (y, tau) bad, |x - y| <= tau/3} over the table; the lower estimate uses 3 tau."""
    X = region.points
    h = np.zeros(X.shape[0])
    bad = ~region.total
    for k in range(region.scales.size - 1, -1, -1):
        tau = region.scales[k]
        ys = np.flatnonzero(bad[:, k])
        todo = np.flatnonzero(h == 0)
        if ys.size == 0 or todo.size == 0:
            continue
        tree = cKDTree(X[ys])
        dd, _ = tree.query(X[todo], k=1)
        hit = todo[dd <= tau / 3 * (1 + 1e-12)]
        h[hit] = 4 * tau
    return h, 0.75 * h


def stopping_height(region: StoppingRegion, mu: DiscreteMeasure = None, x=None):
    """h at a table atom (by atom index) or at a point (nearest-witness evaluation); all rows if x is None."""
    if x is None:
        return region.h.copy()
    x = np.asarray(x)
    if x.ndim == 0:
        hit = np.flatnonzero(region.atoms == int(x))
        if hit.size == 0:
            raise KeyError(f"atom {int(x)} is not in F cap B0")
        return float(region.h[hit[0]])
    X = region.points
    best = 0.0
    bad = ~region.total
    for k in range(region.scales.size):
        tau = region.scales[k]
        ys = np.flatnonzero(bad[:, k])
        if ys.size and np.min(np.linalg.norm(X[ys] - x, axis=1)) <= tau / 3 * (1 + 1e-12):
            best = max(best, 4 * tau)
    return best


def _gauge(region, pts, project):
    inS = region.in_S
    if not inS.any():
        return np.full(pts.shape[0], region.params.capped())
    src = region.D0.coords(region.points) if project else region.points
    out = np.full(pts.shape[0], np.inf)
    for k, t in enumerate(region.scales):
        sel = np.flatnonzero(inS[:, k])
        if sel.size == 0:
            continue
        dd, _ = cKDTree(src[sel]).query(pts, k=1)
        out = np.minimum(out, dd + t)
    return out


def d_function(region: StoppingRegion, x) -> np.ndarray | float:
    """d(x) = min over S of |X - x| + t (exact over the table)."""
    x = np.asarray(x, dtype=float)
    out = _gauge(region, np.atleast_2d(x), project=False)
    return float(out[0]) if x.ndim == 1 else out


def D_function(region: StoppingRegion, p) -> np.ndarray | float:
    """D(p) = min over S of |Pi X - p| + t, with p in the coordinates of D0."""
    p = np.asarray(p, dtype=float)
    q = p.reshape(-1, region.mu.n)
    out = _gauge(region, q, project=True)
    return float(out[0]) if p.ndim <= 1 and q.shape[0] == 1 else out


@dataclass
class Partition:
    atoms: np.ndarray
    labels: np.ndarray  # LABELS codes per table row

    def mask(self, name: str) -> np.ndarray:
        return self.labels == LABELS[name]

    def counts(self) -> dict:
        return {k: int(np.sum(self.labels == v)) for k, v in LABELS.items()}

    def masses(self, mu: DiscreteMeasure) -> dict:
        w = mu.weights[self.atoms]
        return {k: float(w[self.labels == v].sum()) for k, v in LABELS.items()}


def partition(mu: DiscreteMeasure, F, region: StoppingRegion) -> Partition:
    """First matching rule among Z, F1, F2, F3; rows matching none stay labelled 'none'."""
    X = region.points
    h = region.h
    p = region.params
    labels = np.full(X.shape[0], LABELS["none"], dtype=np.int8)
    labels[h == 0] = LABELS["Z"]
    tree = cKDTree(X)
    found = {1: np.zeros(X.shape[0], bool), 2: np.zeros(X.shape[0], bool), 3: np.zeros(X.shape[0], bool)}
    tests = {1: region.dens_mu <= p.delta0, 2: region.beta1 >= p.eps, 3: region.angle >= 0.75 * p.alpha}
    for i in np.flatnonzero(h > 0):
        lo, hi = h[i] / 5 * (1 - 1e-12), h[i] / 2 * (1 + 1e-12)
        for k in np.flatnonzero((region.scales >= lo) & (region.scales <= hi)):
            tau = region.scales[k]
            ys = np.asarray(tree.query_ball_point(X[i], tau / 2 * (1 + 1e-12)), dtype=np.intp)
            for lab in (1, 2, 3):
                if not found[lab][i] and np.any(tests[lab][ys, k]):
                    found[lab][i] = True
    for lab in (1, 2, 3):
        labels[(labels == LABELS["none"]) & found[lab]] = lab
    return Partition(region.atoms, labels)


# --- the Lipschitz graph ----------------------------------------------------

def _smooth(t):
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (t * (6 * t - 15) + 10)


def _affine_maps(region: StoppingRegion, rows, ks):
    """Each plane D_{X,t} as a graph p -> c + L p over D0 (coordinates of D0)."""
    D0 = region.D0
    N0 = D0.normals()
    out_c, out_L = [], []
    for i, k in zip(rows, ks):
        P = region.plane(i, k)
        M = D0.frame @ P.frame.T
        Minv = np.linalg.inv(M)
        db = P.base - D0.base
        L = N0 @ P.frame.T @ Minv
        out_c.append(N0 @ db - L @ (D0.frame @ db))
        out_L.append(L)
    return np.array(out_c), np.array(out_L)


@dataclass(eq=False)
class GraphConstruction:
    A: GraphFunction
    grid_D: np.ndarray  # D on the graph grid
    Ftilde: np.ndarray  # boolean mask over region.F
    d_F: np.ndarray  # d on the atoms of F
    dist_F: np.ndarray  # dist(x, A~(Pi x)) on the atoms of F
    lip: float
    hessian_ratio: float  # max |grad^2 A| D / eps over the window
    center: np.ndarray  # Pi(x0) in D0 coordinates

    def lift(self, p) -> np.ndarray:
        """The point (p, A(p)) of the graph in ambient coordinates."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return _lift(self.A, self._D0, p)


def _lift(A, D0, p):
    return D0.point(p) + A(p) @ D0.normals()


def construct_graph(region: StoppingRegion, params: StoppingParams | None = None,
                    grid_spacing: float | None = None, chunk: int = 256) -> GraphConstruction:
    """Blend the planes of near-optimal S pairs into A over D0, windowed to Pi(3 B0).

    At each grid point p the pairs (X, t) in S with |Pi X - p| + t <= 2 D(p)
    contribute their plane with weight 1 - S((|Pi X - p| + t - D(p))/D(p)),
    S the quintic smoothstep.  The result is multiplied by a window equal to
    1 on Pi(2 B0) and 0 off Pi(3 B0).
    """
    params = params or region.params
    mu, n, m = region.mu, region.mu.n, region.mu.d - region.mu.n
    r0 = params.B0.radius
    D0 = region.D0
    c0 = D0.coords(params.B0.center)
    hg = grid_spacing or (r0 / 32 if n == 1 else r0 / 8)
    cells = int(round(16 * r0 / hg))
    hg = 16 * r0 / cells
    axes = [c0[i] - 8 * r0 + hg * (np.arange(cells) + 0.5) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([g.reshape(-1) for g in mesh], axis=1)
    Dg = D_function(region, grid).reshape(-1)
    vals = np.zeros((grid.shape[0], m))
    inS = region.in_S
    rows, ks = np.nonzero(inS)
    if rows.size == 0:
        warnings.warn("S is empty; returning A = 0")
    else:
        cvec, Lmat = _affine_maps(region, rows, ks)
        src = D0.coords(region.points)[rows]
        tk = region.scales[ks]
        rad = np.linalg.norm(grid - c0, axis=1)
        active = np.flatnonzero(rad < 3 * r0)
        for s in range(0, active.size, chunk):
            ids = active[s:s + chunk]
            p = grid[ids]
            val = np.linalg.norm(p[:, None, :] - src[None], axis=2) + tk[None]
            Dp = Dg[ids][:, None]
            wgt = np.where(val <= 2 * Dp, 1 - _smooth((val - Dp) / Dp), 0.0)
            amap = cvec[None] + np.einsum("qmn,pn->pqm", Lmat, p)
            vals[ids] = np.einsum("pq,pqm->pm", wgt, amap) / wgt.sum(axis=1)[:, None]
        eta = 1 - _smooth(rad / r0 - 2)
        vals *= eta[:, None]
    V = vals.reshape(tuple([cells] * n) + (m,))
    interp = RegularGridInterpolator(axes, V, bounds_error=False, fill_value=0.0)
    A = make_graph_function(n=n, d=mu.d, box=(c0 - 8 * r0, c0 + 8 * r0), h=hg, func=lambda x: interp(x))
    # regularity on the window
    G = A.fd_gradients().reshape(tuple([cells] * n) + (m, n))
    H = np.stack(np.gradient(G, hg, axis=tuple(range(n))) if n > 1 else [np.gradient(G, hg, axis=0)], axis=-1)
    Hn = np.sqrt(np.sum(H.reshape(grid.shape[0], -1) ** 2, axis=1))
    inner = np.linalg.norm(grid - c0, axis=1) < 3 * r0
    hess_ratio = float(np.max(Hn[inner] * Dg[inner]) / params.eps) if inner.any() else 0.0
    # the good set
    Fpts = mu.points[region.F]
    pF = D0.coords(Fpts)
    dist = np.linalg.norm(Fpts - _lift(A, D0, pF), axis=1)
    dF = d_function(region, Fpts)
    Ft = dist <= math.sqrt(params.eps) * dF
    out = GraphConstruction(A, Dg, Ft, dF, dist, A.lip_inf(), hess_ratio, c0)
    out._D0 = D0
    return out


# --- mollified projected density ------------------------------------------

def _profile(r):
    return 1 - _smooth(2 * np.asarray(r, dtype=float) - 1)


_PHI_NORM = {}


def mollifier(r, n: int):
    """Radial bump equal to a constant on |x| <= 1/2, vanishing for |x| >= 1, unit integral on R^n."""
    if n not in _PHI_NORM:
        area = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
        _PHI_NORM[n] = 1 / (area * quad(lambda s: float(_profile(s)) * s ** (n - 1), 0, 1, epsabs=1e-14)[0])
    r = np.asarray(r, dtype=float)
    return np.where(r < 1, _profile(r) * _PHI_NORM[n], 0.0)


def mollified_density(mu: DiscreteMeasure, Ftilde, region_or_D, p, eps: float) -> np.ndarray:
    """g(p) = phi_s * Pi#(mu restricted to F~)(p), s = max(eps^(1/4) D(p), truncation floor).

    ``Ftilde`` are atom indices; ``region_or_D`` is a StoppingRegion or a
    callable p -> D(p).  Projections are onto D0 of the region when given,
    else onto the first n coordinates.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    n = mu.n
    idx = np.asarray(Ftilde, dtype=np.intp)
    if isinstance(region_or_D, StoppingRegion):
        D = D_function(region_or_D, p).reshape(-1)
        proj = region_or_D.D0.coords(mu.points[idx])
    else:
        D = np.asarray(region_or_D(p), dtype=float).reshape(-1)
        proj = mu.points[idx, :n]
    s = np.maximum(eps ** 0.25 * D, mu.floor)
    if np.any(s <= 0):
        raise ValueError("D(p) = 0 at a point and the measure has no truncation floor")
    g = np.zeros(p.shape[0])
    if idx.size == 0:
        return g
    w = mu.weights[idx]
    tree = cKDTree(proj)
    for i, (q, si) in enumerate(zip(p, s)):
        near = np.asarray(tree.query_ball_point(q, si), dtype=np.intp)
        if near.size:
            r = np.linalg.norm(proj[near] - q, axis=1) / si
            g[i] = np.sum(w[near] * mollifier(r, n)) / si ** n
    return g


def good_sets(g, grid, center, r0: float, threshold: float = 0.5, lift=None):
    """G1 = grid points of Pi(8 B0) with g > threshold; G0 = their lifts when ``lift`` is given."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    inside = np.linalg.norm(grid - np.asarray(center), axis=1) <= 8 * r0
    G1 = inside & (np.asarray(g) > threshold)
    G0 = lift(grid[G1]) if lift is not None else None
    return G1, G0


# --- operator norm of the truncated transform -----------------------------

@njit(parallel=True, cache=True)
def _trunc_apply(points, weights, f, n, eps, adjoint):
    N, d = points.shape
    e2 = eps * eps
    if adjoint:
        out = np.zeros((N, 1))
        for j in prange(N):
            acc = 0.0
            for i in range(N):
                r2 = 0.0
                for c in range(d):
                    z = points[i, c] - points[j, c]
                    r2 += z * z
                if r2 > e2:
                    k = weights[i] / r2 ** ((n + 1) / 2)
                    for c in range(d):
                        acc += k * (points[i, c] - points[j, c]) * f[i, c]
            out[j, 0] = acc
        return out
    out = np.zeros((N, d))
    for i in prange(N):
        for j in range(N):
            r2 = 0.0
            for c in range(d):
                z = points[i, c] - points[j, c]
                r2 += z * z
            if r2 > e2:
                k = weights[j] * f[j, 0] / r2 ** ((n + 1) / 2)
                for c in range(d):
                    out[i, c] += k * (points[i, c] - points[j, c])
    return out


def truncated_operator_norm(mu: DiscreteMeasure, eps: float, iters: int = 30, seed: int = 0) -> float:
    """||R_eps||_{L2(mu) -> L2(mu)} by power iteration on R* R."""
    pts = np.ascontiguousarray(mu.points)
    w = np.ascontiguousarray(mu.weights)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((mu.size, 1))
    norm = lambda v: math.sqrt(float(np.sum(w[:, None] * v * v)))
    f /= norm(f)
    lam = 0.0
    for _ in range(iters):
        Rf = _trunc_apply(pts, w, f, mu.n, eps, False)
        g = _trunc_apply(pts, w, Rf, mu.n, eps, True)
        lam = norm(g)
        if lam == 0:
            return 0.0
        f = g / lam
    return math.sqrt(lam)


# --- the whole pipeline -----------------------------------------------------

@dataclass(eq=False)
class CoronaState:
    region: StoppingRegion
    partition: Partition
    graph: GraphConstruction
    g: np.ndarray  # on the graph grid
    G1: np.ndarray
    report: dict


def corona_report(mu: DiscreteMeasure, F, B0: Ball, params: StoppingParams, consts: Constants | None = None,
                      closeness: float | None = None, growth_sample: int = 200, op_sample: int = 3000,
                      pv_sample: int = 64, grid_spacing: float | None = None, seed: int = 0) -> CoronaState:
    """Run the construction and measure the hypotheses and the conclusion.

    Coverage is mu(F~ cap B0 minus (F1 u F2 u F3)) / (c_n r0^n); ``closeness``
    overrides the factor eps^(1/2) in the definition of F~.
    """
    consts = consts or Constants(n=mu.n, delta0=params.delta0, alpha=params.alpha, eps=params.eps)
    F = np.asarray(F, dtype=np.intp)
    r0, x0, n = B0.radius, B0.center, mu.n
    cn = unit_ball_volume(n)
    rng = np.random.default_rng(seed)
    region = stopping_region(mu, F, params)
    part = partition(mu, F, region)
    graph = construct_graph(region, params, grid_spacing=grid_spacing)
    if closeness is not None:
        graph.Ftilde = graph.dist_F <= closeness * graph.d_F
    Ft_idx = F[graph.Ftilde]
    g = mollified_density(mu, Ft_idx, region, graph.A.grid, params.eps)
    G1, _ = good_sets(g, graph.A.grid, graph.center, r0)
    in8 = np.linalg.norm(graph.A.grid - graph.center, axis=1) <= 8 * r0
    g_l1 = float(np.sum(np.abs(g[in8] - 1)) * graph.A.h ** n)

    # hypotheses
    muB0 = mu.ball_mass(x0, r0)
    inF = np.zeros(mu.size, bool)
    inF[F] = True
    in10 = mu.ball_indices(x0, 10 * r0)
    outside = float(mu.weights[in10[~inF[in10]]].sum())
    scales = params.scales(mu)
    radii = np.concatenate([scales, scales[-1] * 2.0 ** np.arange(1, 1 + math.ceil(math.log2(100 / 8)))])
    sampleF = F if F.size <= growth_sample else rng.choice(F, growth_sample, replace=False)
    growth = np.array([[mu.ball_mass(mu.points[i], r) / r ** n for r in radii] for i in sampleF])
    opF = F if F.size <= op_sample else np.sort(rng.choice(F, op_sample, replace=False))
    muF = mu.restrict(opF)
    if opF.size < F.size:
        muF = muF.with_weights(muF.weights * (mu.weights[F].sum() / muF.weights.sum()))
    op = truncated_operator_norm(muF, max(mu.floor, scales[0] / 4)) if opF.size > 1 else 0.0
    pvF = F if F.size <= pv_sample else rng.choice(F, pv_sample, replace=False)
    top = min(r0 / consts.delta2 ** 2, 1e3 * r0)
    grid_e = np.geomspace(max(mu.floor, scales[0] / 4), top, 4 * int(math.ceil(math.log2(top / max(mu.floor, scales[0] / 4)))) + 1)
    pv = float(np.max(sup_oscillation(oscillation_profile(mu, mu.points[pvF], grid_e))))

    w_rows = mu.weights[region.atoms]
    masses = part.masses(mu)
    mFB0 = float(w_rows.sum())
    Ft_rows = graph.Ftilde[np.searchsorted(F, region.atoms)] if np.all(np.diff(F) > 0) else \
        np.isin(region.atoms, Ft_idx)
    bad = np.isin(part.labels, [LABELS["F1"], LABELS["F2"], LABELS["F3"]])
    covered = float(w_rows[Ft_rows & ~bad].sum())
    coverage = covered / (cn * r0 ** n)
    report = {
        "hypotheses": {
            "a_mass_8B0_ratio": float(mu.ball_mass(x0, 8 * r0) / (cn * 8 ** n * r0 ** n)),
            "a_outside_F_ratio": outside / muB0 if muB0 > 0 else math.inf,
            "a_ok": bool(outside <= consts.delta1 * muB0),
            "b_growth_max": float(growth.max()),
            "b_ok": bool(growth.max() <= consts.M1),
            "b_upper_density_ratio": float(growth.max() / cn),
            "c_operator_norm": op,
            "c_ok": bool(op <= consts.M2),
            "d_pv_oscillation": pv,
            "d_ok": bool(pv <= consts.delta2),
        },
        "scales": {"t_min": float(scales[0]), "t_max": float(scales[-1]), "count": int(scales.size)},
        "counts": part.counts(),
        "fractions": {k: (v / mFB0 if mFB0 > 0 else 0.0) for k, v in masses.items()},
        "mass_F_B0": mFB0,
        "S_pairs": int(region.in_S.sum()),
        "S_total_pairs": int(region.total.sum()),
        "lip_inf": graph.lip,
        "lip_over_alpha": graph.lip / params.alpha,
        "hessian_ratio": graph.hessian_ratio,
        "ftilde_defect": float(mu.weights[F][~graph.Ftilde].sum() / mu.weights[F].sum()),
        "g_minus_1_l1": g_l1,
        "g_l1_over_alpha2": g_l1 / (params.alpha ** 2 * r0 ** n),
        "G1_fraction": float(G1[in8].mean()) if in8.any() else 0.0,
        "coverage": coverage,
        "pass": bool(coverage >= 0.9),
    }
    return CoronaState(region, part, graph, g, G1, report)
