"""Dyadic lattices, plane fitting, beta numbers and alpha numbers.

alpha(Q) compares mu with the best multiple of flat n-dimensional measure on
the ball B_Q in the bounded-Lipschitz (Kantorovich-Rubinstein) distance

    dist_B(s, v) = sup { |int f ds - int f dv| : Lip(f) <= 1, supp f in B }.

On atoms this is a linear program.  Since f vanishes off B, the feasible set
is exactly {|f_i| <= dist(p_i, boundary of B), |f_i - f_j| <= |p_i - p_j|}
(McShane extension, with the complement of B carrying the value 0), and a
pair constraint is redundant whenever |p_i - p_j| >= d_i + d_j.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.optimize import linprog, minimize
from scipy.spatial import cKDTree

from .measure import Ball, DiscreteMeasure


# --- planes ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AffinePlane:
    base: np.ndarray
    frame: np.ndarray  # (n, d), orthonormal rows

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float).reshape(-1)
        frame = np.atleast_2d(np.asarray(self.frame, dtype=float))
        if frame.shape[1] != base.size:
            raise ValueError("frame and base dimensions disagree")
        if np.max(np.abs(frame @ frame.T - np.eye(frame.shape[0]))) > 1e-10:
            raise ValueError("frame is not orthonormal")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "frame", frame)

    @classmethod
    def coordinate(cls, n: int, d: int) -> "AffinePlane":
        """R^n x {0}."""
        return cls(np.zeros(d), np.eye(d)[:n])

    @classmethod
    def from_normal(cls, normal, base) -> "AffinePlane":
        normal = np.asarray(normal, dtype=float)
        normal = normal / np.linalg.norm(normal)
        return cls(base, _complement(normal[None, :]))

    @property
    def n(self) -> int:
        return self.frame.shape[0]

    @property
    def d(self) -> int:
        return self.frame.shape[1]

    def normals(self) -> np.ndarray:
        """Orthonormal basis of the orthogonal complement, shape (d-n, d)."""
        return _complement(self.frame)

    def coords(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.base) @ self.frame.T

    def point(self, u) -> np.ndarray:
        return self.base + np.asarray(u, dtype=float) @ self.frame

    def project(self, x) -> np.ndarray:
        return self.point(self.coords(x))

    def offset(self, x) -> np.ndarray:
        """x minus its projection onto the plane."""
        x = np.asarray(x, dtype=float)
        return x - self.project(x)

    def distance(self, x):
        return np.linalg.norm(self.offset(x), axis=-1)


def _complement(frame):
    frame = np.atleast_2d(frame)
    n, d = frame.shape
    # last d-n right singular vectors of the frame span its complement
    _, _, vt = np.linalg.svd(np.vstack([frame, np.zeros((max(d - n, 0), d))]))
    comp = vt[n:]
    # deterministic orientation
    for i in range(comp.shape[0]):
        k = np.argmax(np.abs(comp[i]))
        if comp[i, k] < 0:
            comp[i] = -comp[i]
    return comp


def plane_angle(p1: AffinePlane, p2: AffinePlane) -> float:
    """Largest principal angle between the direction spaces (radians)."""
    if p1.n != p2.n:
        raise ValueError("planes of different dimension")
    s = np.linalg.svd(p1.frame @ p2.frame.T, compute_uv=False)
    return float(np.arccos(np.clip(s.min(), -1.0, 1.0)))


# --- plane fitting --------------------------------------------------------

class DegenerateFitError(ValueError):
    pass


def _canonical_signs(vecs, centred, w):
    # orient each direction by the sign of its weighted third moment (or first
    # nonzero coordinate), so the fit is equivariant under rigid motions
    out = vecs.copy()
    for i in range(out.shape[0]):
        proj = centred @ out[i]
        m3 = np.sum(w * proj ** 3)
        scale = np.sum(w * np.abs(proj) ** 3) + 1e-300
        if abs(m3) > 1e-9 * scale:
            if m3 < 0:
                out[i] = -out[i]
        else:
            k = np.argmax(np.abs(out[i]))
            if out[i, k] < 0:
                out[i] = -out[i]
    return out


def fit_l2(points, weights, n: int) -> tuple[AffinePlane, np.ndarray]:
    """Weighted least-squares n-plane; returns the plane and all eigenvalues (descending)."""
    points = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    points, w = points[keep], w[keep]
    if points.shape[0] < min(n + 1, 2) or w.sum() <= 0:
        raise DegenerateFitError("not enough atoms with positive mass")
    m = (w[:, None] * points).sum(axis=0) / w.sum()
    c = points - m
    cov = (w[:, None] * c).T @ c
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order].T
    rank_tol = 1e-12 * max(vals[0], 1e-300)
    if n > 1 and vals[n - 1] <= rank_tol:
        raise DegenerateFitError(f"weighted point set has affine rank < {n}")
    if n == 1 and vals[0] <= 0 and points.shape[0] > 1:
        raise DegenerateFitError("all atoms coincide")
    frame = _canonical_signs(vecs[:n], c, w)
    return AffinePlane(m, frame), vals


def fit_plane_l2(mu: DiscreteMeasure, region: Ball | None = None) -> AffinePlane:
    if region is None:
        idx = np.arange(mu.size)
    else:
        idx = mu.ball_indices(region.center, region.radius)
    if idx.size == 0:
        raise DegenerateFitError("region contains no atoms")
    return fit_l2(mu.points[idx], mu.weights[idx], mu.n)[0]


# --- dyadic cubes -----------------------------------------------------------

@dataclass(eq=False)
class DyadicCube:
    level: int
    index: tuple
    side: float
    center: np.ndarray  # z_Q in R^d
    diam: float
    atoms: np.ndarray  # indices of atoms in Q
    atoms3: np.ndarray  # indices of atoms in 3Q
    mass: float
    mass3: float
    mode: str = "ambient"
    meta: dict = field(default_factory=dict)

    @property
    def ball(self) -> Ball:
        """B_Q = closed B(z_Q, 3 diam Q)."""
        return Ball(self.center, 3.0 * self.diam)

    @property
    def key(self):
        return (self.level, self.index)


class Lattice(list):
    """List of DyadicCube with the data that produced it."""

    def __init__(self, cubes, mu, mode, plane, levels):
        super().__init__(cubes)
        self.mu = mu
        self.mode = mode
        self.plane = plane
        self.levels = list(levels)

    def at_level(self, j):
        return [Q for Q in self if Q.level == j]

    def children(self, Q):
        return [R for R in self if R.level == Q.level + 1
                and all(r // 2 == q for r, q in zip(R.index, Q.index))]


def dyadic_lattice(mu: DiscreteMeasure, levels, mode: str = "ambient", plane: AffinePlane | None = None) -> Lattice:
    """Dyadic cubes of side 2^-j meeting supp(mu), for j in ``levels``.

    In graph mode the cubes are Pi^-1(Q0) for dyadic cubes Q0 of the reference
    plane, and z_Q is lifted by the mean transverse offset of the atoms in Q.
    """
    levels = list(levels)
    if not levels:
        raise ValueError("empty level range")
    if mode == "graph":
        if plane is None:
            raise ValueError("graph mode requires a reference plane")
        u = plane.coords(mu.points)
        offs = plane.offset(mu.points)
    elif mode == "ambient":
        u = np.asarray(mu.points, dtype=float)
        offs = None
    else:
        raise ValueError(f"unknown mode {mode!r}")
    keep = mu.weights > 0
    dim = u.shape[1]
    tree = cKDTree(u)
    cubes = []
    for j in levels:
        side = 2.0 ** (-j)
        keys = np.floor(u * 2.0 ** j).astype(np.int64)
        uniq, inverse = np.unique(keys[keep], axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        kept_idx = np.nonzero(keep)[0]
        groups = [[] for _ in range(uniq.shape[0])]
        for g, a in zip(inverse, kept_idx):
            groups[g].append(a)
        for key, members in zip(uniq, groups):
            members = np.array(sorted(members), dtype=np.intp)
            cu = (key + 0.5) * side
            cand = np.asarray(tree.query_ball_point(cu, 1.5 * side * (1 + 1e-12), p=np.inf), dtype=np.intp)
            if cand.size:
                cand = cand[np.max(np.abs(u[cand] - cu), axis=1) <= 1.5 * side]
            cand = np.sort(cand)
            w = mu.weights[members]
            if mode == "graph":
                lift = (w[:, None] * offs[members]).sum(axis=0) / w.sum()
                center = plane.point(cu) + lift
            else:
                center = cu.astype(float)
            cubes.append(DyadicCube(
                level=int(j), index=tuple(int(k) for k in key), side=side, center=center,
                diam=math.sqrt(dim) * side, atoms=members, atoms3=cand,
                mass=float(w.sum()), mass3=float(mu.weights[cand].sum()), mode=mode,
            ))
    return Lattice(cubes, mu, mode, plane, levels)


# --- beta numbers -----------------------------------------------------------

@dataclass
class BetaResult:
    value: float
    plane: AffinePlane
    p: float
    provenance: str

    def __float__(self):
        return float(self.value)


def _weighted_median(x, w):
    order = np.argsort(x)
    x, w = x[order], w[order]
    cw = np.cumsum(w)
    k = np.searchsorted(cw, 0.5 * cw[-1])
    return x[min(k, x.size - 1)]


def _rotated_plane(seed: AffinePlane, normals, theta, shift):
    n, d = seed.frame.shape
    basis = np.vstack([seed.frame, normals])
    gen = np.zeros((d, d))
    A = np.asarray(theta).reshape(n, d - n)
    gen[:n, n:] = A
    gen[n:, :n] = -A.T
    rot = expm(gen) @ basis
    frame, nrm = rot[:n], rot[n:]
    base = seed.base + np.asarray(shift) @ normals if len(shift) else seed.base
    return frame, nrm, base


def _beta_objective(points, w, p, frame_normals, base, shift_free):
    proj = (points - base) @ frame_normals.T  # (N, d-n)
    if proj.shape[1] == 1 and not shift_free:
        x = proj[:, 0]
        if p == 1:
            m = _weighted_median(x, w)
            return np.sum(w * np.abs(x - m)), m
        m = 0.5 * (x.max() + x.min())
        return 0.5 * (x.max() - x.min()), m
    dist = np.linalg.norm(proj, axis=1)
    if p == 1:
        return np.sum(w * dist), 0.0
    return dist.max(), 0.0


def _plane_dists(plane, points):
    return plane.distance(points)


def _beta_value(dists, w, p, ell, n):
    if p == 2:
        return math.sqrt(float(np.sum(w * (dists / ell) ** 2)) / ell ** n)
    if p == 1:
        return float(np.sum(w * dists / ell)) / ell ** n
    return float(dists.max() / ell)


def beta_search(points, weights, ell: float, n: int, p, seed: AffinePlane | None = None) -> BetaResult:
    """beta_p of the atoms (already restricted to the window) at scale ell."""
    p = math.inf if p in ("inf", math.inf) else int(p)
    if p not in (1, 2, math.inf):
        raise ValueError("p must be 1, 2 or inf")
    points = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    points, w = points[keep], w[keep]
    if points.shape[0] == 0:
        raise ValueError("empty window")
    d = points.shape[1]
    if seed is None:
        try:
            seed = fit_l2(points, w, n)[0]
        except DegenerateFitError:
            # fewer than n+1 independent atoms: some plane contains them all
            seed = _plane_through(points, n)
    l2_val = _beta_value(_plane_dists(seed, points), w, p, ell, n)
    if p == 2 or n == d or l2_val == 0.0:
        return BetaResult(l2_val, seed, p, "l2")
    normals = seed.normals()
    codim = d - n
    shift_free = codim > 1
    nth = n * codim

    def unpack(x):
        th = x[:nth]
        sh = x[nth:] if shift_free else np.zeros(0)
        return th, sh

    def obj(x):
        th, sh = unpack(x)
        frame, nrm, base = _rotated_plane(seed, normals, th, sh)
        return _beta_objective(points, w, p, nrm, base, shift_free)[0]

    x0 = np.zeros(nth + (codim if shift_free else 0))
    spread = float(np.max(np.linalg.norm(points - seed.base, axis=1))) + 1e-300
    steps = np.concatenate([np.full(nth, 0.05), np.full(x0.size - nth, 0.05 * spread)])
    best_x, best_f = x0, obj(x0)
    for _ in range(6):
        simplex = np.vstack([best_x] + [best_x + steps[i] * np.eye(x0.size)[i] for i in range(x0.size)])
        res = minimize(obj, best_x, method="Nelder-Mead",
                       options={"initial_simplex": simplex, "xatol": 1e-12, "fatol": 1e-15 * max(best_f, 1e-300),
                                "maxiter": 4000 * x0.size, "maxfev": 8000 * x0.size})
        improved = res.fun < best_f - 1e-14 * max(best_f, 1e-300)
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
        steps = steps * 0.2
        if not improved:
            break
    th, sh = unpack(best_x)
    frame, nrm, base = _rotated_plane(seed, normals, th, sh)
    _, m = _beta_objective(points, w, p, nrm, base, shift_free)
    if not shift_free:
        base = base + m * nrm[0]
    cand = AffinePlane(base, _reorth(frame))
    val = _beta_value(_plane_dists(cand, points), w, p, ell, n)
    if val < l2_val:
        return BetaResult(val, cand, p, "nelder-mead")
    return BetaResult(l2_val, seed, p, "l2")


def _reorth(frame):
    q, r = np.linalg.qr(frame.T)
    return (q * np.sign(np.diag(r))).T


def _plane_through(points, n):
    d = points.shape[1]
    base = points[0]
    diffs = points[1:] - base
    if diffs.shape[0]:
        _, s, vt = np.linalg.svd(diffs)
        r = int(np.sum(s > 1e-12 * max(s.max(), 1e-300)))
    else:
        vt, r = np.zeros((0, d)), 0
    rows = list(vt[:r])
    for e in np.eye(d):
        if len(rows) >= n:
            break
        v = e - sum((e @ q) * q for q in rows)
        if np.linalg.norm(v) > 1e-8:
            rows.append(v / np.linalg.norm(v))
    return AffinePlane(base, _reorth(np.array(rows[:n])))


def beta_number(mu: DiscreteMeasure, Q: DyadicCube, p=2) -> BetaResult:
    """beta_p(Q) over the window 3Q at scale l(Q)."""
    if Q.atoms3.size == 0:
        raise ValueError("3Q contains no atoms")
    return beta_search(mu.points[Q.atoms3], mu.weights[Q.atoms3], Q.side, mu.n, p)


# --- bounded-Lipschitz distance -------------------------------------------

def _prepare_nodes(points, rho, center, radius, merge=True):
    points = np.asarray(points, dtype=float)
    rho = np.asarray(rho, dtype=float)
    dist_b = radius - np.linalg.norm(points - center, axis=1)
    inside = dist_b > 0
    points, rho, dist_b = points[inside], rho[inside], dist_b[inside]
    if merge and points.shape[0]:
        uniq, inv = np.unique(points, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        r = np.zeros(uniq.shape[0])
        np.add.at(r, inv, rho)
        points = uniq
        rho = r
        dist_b = radius - np.linalg.norm(points - center, axis=1)
        nz = rho != 0
        points, rho, dist_b = points[nz], rho[nz], dist_b[nz]
    return points, rho, dist_b


def _useful_pairs(points, dist_b):
    m = points.shape[0]
    if m < 2:
        return np.zeros((0, 2), dtype=np.intp), np.zeros(0)
    D = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    iu, ju = np.triu_indices(m, 1)
    dij = D[iu, ju]
    keep = dij < dist_b[iu] + dist_b[ju]
    return np.stack([iu[keep], ju[keep]], axis=1), dij[keep]


@dataclass
class LPInfo:
    value: float
    status: int
    message: str
    n_nodes: int
    n_pairs: int


def bl_lp(points, rho, center, radius) -> LPInfo:
    """sup sum rho_i f(p_i) over 1-Lipschitz f supported in the closed ball."""
    center = np.asarray(center, dtype=float)
    pts, r, db = _prepare_nodes(points, rho, center, radius)
    m = pts.shape[0]
    if m == 0:
        return LPInfo(0.0, 0, "empty", 0, 0)
    pairs, dij = _useful_pairs(pts, db)
    E = pairs.shape[0]
    rows = np.repeat(np.arange(2 * E), 2)
    cols = np.concatenate([pairs, pairs[:, ::-1]]).reshape(-1)
    vals = np.tile([1.0, -1.0], 2 * E)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(2 * E, m)) if E else None
    b = np.concatenate([dij, dij]) if E else None
    res = linprog(-r, A_ub=A, b_ub=b, bounds=np.stack([-db, db], axis=1), method="highs")
    if res.status != 0:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return LPInfo(float(-res.fun), int(res.status), str(res.message), m, E)


def bl_distance(sigma: DiscreteMeasure, nu: DiscreteMeasure, B: Ball) -> float:
    pts = np.vstack([sigma.points, nu.points])
    rho = np.concatenate([sigma.weights, -np.asarray(nu.weights)])
    return bl_lp(pts, rho, B.center, B.radius).value


# --- alpha numbers ----------------------------------------------------------

@dataclass
class PlaneGrid:
    points: np.ndarray
    cell_mass: float
    n_meet: int
    spacing: float


def plane_grid(plane: AffinePlane, ball: Ball, spacing: float) -> PlaneGrid:
    """Cell centres of a grid of side ``spacing`` on the plane, inside the open ball.

    The grid is anchored at the foot of the ball centre on the plane.
    ``n_meet`` counts cells meeting the ball (those whose quadrature error can
    be nonzero).
    """
    n = plane.n
    q = plane.project(ball.center)
    h = float(np.linalg.norm(ball.center - q))
    if h >= ball.radius:
        return PlaneGrid(np.zeros((0, plane.d)), spacing ** n, 0, spacing)
    rho = math.sqrt(ball.radius ** 2 - h ** 2)
    K = int(math.ceil(rho / spacing)) + 1
    ax = np.arange(-K, K)
    ks = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1).reshape(-1, n)
    lo = ks * spacing
    centres = lo + 0.5 * spacing
    near = np.clip(0.0, lo, lo + spacing)
    meet = np.linalg.norm(near, axis=1) < rho
    inside = np.sum(centres ** 2, axis=1) < rho ** 2
    pts = q + centres[inside] @ plane.frame
    # drop any centre that lands on the sphere by rounding
    pts = pts[np.linalg.norm(pts - ball.center, axis=1) < ball.radius]
    return PlaneGrid(pts, spacing ** n, int(meet.sum()), spacing)


def aggregate(points, weights, budget: int):
    """Merge atoms into at most ``budget`` weighted centroids on a grid.

    Returns the merged atoms and the transport cost sum w |y - y'|, which
    bounds the change in any bounded-Lipschitz distance.
    """
    points = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    if points.shape[0] <= budget:
        return points, w, 0.0
    lo = points.min(axis=0)
    span = float(np.max(points.max(axis=0) - lo)) + 1e-300
    cell = span / 2.0
    while True:
        keys = np.floor((points - lo) / cell).astype(np.int64)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        if uniq.shape[0] > budget:
            cell *= 1.25
            break
        cell /= 1.25
    while True:
        keys = np.floor((points - lo) / cell).astype(np.int64)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        if uniq.shape[0] <= budget:
            break
        cell *= 1.1
    inv = inv.reshape(-1)
    M = uniq.shape[0]
    wm = np.zeros(M)
    np.add.at(wm, inv, w)
    cm = np.zeros((M, points.shape[1]))
    np.add.at(cm, inv, w[:, None] * points)
    cm /= np.maximum(wm, 1e-300)[:, None]
    cost = float(np.sum(w * np.linalg.norm(points - cm[inv], axis=1)))
    return cm, wm, cost


def _flow_lp_with_c(ypts, yw, ppts, cell_mass, center, radius):
    """min over c >= 0 of dist_B(mu_y, c * cell_mass * sum delta_p), solved as one LP."""
    pts = np.vstack([ypts, ppts])
    m_y, m_p = ypts.shape[0], ppts.shape[0]
    m = m_y + m_p
    lam = np.concatenate([np.zeros(m_y), np.full(m_p, cell_mass)])
    rho = np.concatenate([yw, np.zeros(m_p)])
    db = radius - np.linalg.norm(pts - center, axis=1)
    pairs, dij = _useful_pairs(pts, db)
    E = pairs.shape[0]
    tails = np.concatenate([pairs[:, 0], pairs[:, 1]])
    heads = np.concatenate([pairs[:, 1], pairs[:, 0]])
    cost = np.concatenate([dij, dij, db, db, [0.0]])
    ar = np.arange(2 * E)
    rows = np.concatenate([tails, heads, np.arange(m), np.arange(m), np.arange(m)])
    cols = np.concatenate([ar, ar, 2 * E + np.arange(m), 2 * E + m + np.arange(m), np.full(m, 2 * E + 2 * m)])
    vals = np.concatenate([np.ones(2 * E), -np.ones(2 * E), np.ones(m), -np.ones(m), lam])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, 2 * E + 2 * m + 1))
    res = linprog(cost, A_eq=A, b_eq=rho, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"alpha LP failed: {res.message}")
    return float(res.fun), float(res.x[-1]), int(res.status)


def _golden_c(ypts, yw, ppts, cell_mass, center, radius, c_hi, tol=1e-9):
    rho_p = -np.full(ppts.shape[0], cell_mass)
    pts = np.vstack([ypts, ppts])

    def f(c):
        return bl_lp(pts, np.concatenate([yw, c * rho_p]), center, radius).value

    g = (math.sqrt(5) - 1) / 2
    a, b = 0.0, c_hi
    x1, x2 = b - g * (b - a), a + g * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol * max(1.0, c_hi):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - g * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + g * (b - a)
            f2 = f(x2)
    cands = [(f(0.0), 0.0), (f1, x1), (f2, x2)]
    val, c = min(cands)
    return val, c, 0


@dataclass
class AlphaResult:
    alpha: float
    c: float
    plane: AffinePlane | None
    status: str
    gap: float  # certified discretization + aggregation error, in alpha units
    spacing: float
    lp_value: float
    history: list = field(default_factory=list)
    candidate: str = ""

    @property
    def upper(self) -> float:
        return self.alpha + self.gap


def alpha_number(mu: DiscreteMeasure, Q: DyadicCube, spacing: float | None = None, refinements: int = 0,
                 budget: int = 400, plane_budget: int = 600, candidates=None,
                 c_method: str = "lp") -> AlphaResult:
    """Upper estimate of alpha(Q) = inf_{c, L} dist_{B_Q}(mu, c H^n|L) / l(Q)^(n+1).

    The flat measure is replaced by atoms at cell centres of a grid of the
    given spacing (default l(Q)/16, coarsened to respect ``plane_budget``).
    With ``refinements = k`` the grid is halved k times and the running
    minimum is reported, so refinement never increases the value.  The
    scale c is solved exactly inside the LP (``c_method='lp'``) or by
    golden-section search on the bounded-Lipschitz distance.
    """
    n = mu.n
    ell = Q.side
    B = Q.ball
    idx = mu.ball_indices(B.center, B.radius)
    idx = idx[np.linalg.norm(mu.points[idx] - B.center, axis=1) < B.radius]
    idx = idx[mu.weights[idx] > 0]
    if idx.size == 0:
        return AlphaResult(0.0, 0.0, None, "empty", 0.0, 0.0, 0.0)
    ypts, yw, agg_cost = aggregate(mu.points[idx], mu.weights[idx], budget)
    if candidates is None:
        candidates = _alpha_candidates(mu, Q, idx)
    vol = math.pi ** (n / 2) / math.gamma(n / 2 + 1) * B.radius ** n
    s0 = ell / 16.0 if spacing is None else float(spacing)
    s0 = max(s0, (vol / plane_budget) ** (1.0 / n))
    norm = ell ** (n + 1)
    best = None
    history = []
    mean_dist = math.sqrt(n / 12.0)  # bound on E|x - centre| over a unit cube
    for k in range(refinements + 1):
        s = s0 / 2 ** k
        for name, L in candidates:
            grid = plane_grid(L, B, s)
            if grid.points.shape[0] == 0:
                continue
            if c_method == "lp":
                val, c, st = _flow_lp_with_c(ypts, yw, grid.points, grid.cell_mass, B.center, B.radius)
            elif c_method == "golden":
                c_hi = 4.0 * float(yw.sum()) / (grid.cell_mass * grid.points.shape[0])
                val, c, st = _golden_c(ypts, yw, grid.points, grid.cell_mass, B.center, B.radius, c_hi)
            else:
                raise ValueError(f"unknown c_method {c_method!r}")
            gap = (c * grid.cell_mass * grid.n_meet * mean_dist * s + agg_cost) / norm
            a = val / norm
            if best is None or a < best.alpha:
                best = AlphaResult(a, c, L, "optimal" if st == 0 else f"status {st}", gap, s, val, candidate=name)
        if best is not None:
            history.append((s, best.alpha))
    if best is None:
        return AlphaResult(0.0, 0.0, None, "no plane meets B_Q", 0.0, s0, 0.0)
    best.history = history
    return best


def _alpha_candidates(mu, Q, idx):
    cands = []
    try:
        cands.append(("l2-ball", fit_l2(mu.points[idx], mu.weights[idx], mu.n)[0]))
    except DegenerateFitError:
        cands.append(("through-atoms", _plane_through(mu.points[idx], mu.n)))
    if Q.atoms3.size > mu.n:
        try:
            cands.append(("l2-3Q", fit_l2(mu.points[Q.atoms3], mu.weights[Q.atoms3], mu.n)[0]))
        except DegenerateFitError:
            pass
        try:
            b1 = beta_number(mu, Q, 1)
            if b1.provenance != "l2":
                cands.append(("beta1-3Q", b1.plane))
        except (DegenerateFitError, ValueError):
            pass
    B = Q.ball
    return [(name, L) for name, L in cands if L.distance(B.center) < B.radius]


# --- level sums -------------------------------------------------------------

def level_sums(lattice: Lattice, coefficient: str = "beta2", values: dict | None = None, **kw):
    """sum over cubes of coeff(Q)^2 mu(Q) per level, and the grand total.

    ``values`` maps cube keys to precomputed coefficients; otherwise they are
    computed here.
    """
    if coefficient not in ("beta1", "beta2", "alpha"):
        raise ValueError(f"unknown coefficient {coefficient!r}")
    mu = lattice.mu
    per_level = {j: 0.0 for j in lattice.levels}
    for Q in lattice:
        if values is not None:
            if Q.key not in values:
                raise KeyError(f"missing coefficient for cube {Q.key}")
            v = float(values[Q.key])
        elif coefficient == "alpha":
            v = alpha_number(mu, Q, **kw).alpha
        else:
            v = beta_number(mu, Q, 1 if coefficient == "beta1" else 2).value
        per_level[Q.level] += v * v * Q.mass
    return per_level, float(sum(per_level.values()))
