"""Weighted point clouds standing in for measures on R^d.

Every measure in the package is a finite sum of atoms.  Balls are closed
(``|x - y| <= r``) throughout so that atoms sitting on a sphere are counted
deterministically.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree


def unit_ball_volume(n: int) -> float:
    """Lebesgue measure of the unit ball of R^n."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    def scaled(self, lam: float) -> "Ball":
        return Ball(self.center, lam * self.radius)


@dataclass(frozen=True)
class Constants:
    """Configuration scalars of the stopping-time machinery.

    The ordering ``eps << alpha << delta0 < 1`` is enforced in the form
    ``eps <= alpha**3`` and ``alpha <= delta0**2``.
    """

    n: int = 1
    M1: float = 10.0
    M2: float = 10.0
    delta0: float = 0.25
    delta1: float = 1e-3
    delta2: float = 1e-3
    eps: float = 1e-4
    alpha: float = 0.05
    eps0: float = 0.1
    N0: int = 8

    def __post_init__(self):
        if not 0 < self.delta0 < 1:
            raise ValueError("delta0 must lie in (0, 1)")
        if not 0 < self.alpha <= self.delta0 ** 2 * (1 + 1e-12):
            raise ValueError(f"need 0 < alpha <= delta0^2, got alpha={self.alpha}, delta0={self.delta0}")
        if not 0 < self.eps <= self.alpha ** 3 * (1 + 1e-12):
            raise ValueError(f"need 0 < eps <= alpha^3, got eps={self.eps}, alpha={self.alpha}")

    @property
    def c_n(self) -> float:
        return unit_ball_volume(self.n)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finite weighted point cloud in R^d carrying an intrinsic dimension n.

    ``floor`` is the truncation floor: transforms at scales below it measure
    the sampling rather than the underlying continuum object.
    """

    points: np.ndarray
    weights: np.ndarray
    n: int
    floor: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.size

    @cached_property
    def mass(self) -> float:
        return float(self.weights.sum())

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points) if self.size else None

    def ball_indices(self, x, r: float) -> np.ndarray:
        """Indices of atoms in the closed ball B(x, r), sorted."""
        if self.size == 0:
            return np.zeros(0, dtype=np.intp)
        x = np.asarray(x, dtype=float)
        cand = np.asarray(self.tree.query_ball_point(x, r * (1 + 1e-12) + 1e-300), dtype=np.intp)
        if cand.size == 0:
            return cand
        dist = np.sqrt(((self.points[cand] - x) ** 2).sum(axis=1))
        return np.sort(cand[dist <= r])

    def ball_mass(self, x, r: float) -> float:
        idx = self.ball_indices(x, r)
        return float(self.weights[idx].sum())

    def restrict(self, mask_or_idx) -> "DiscreteMeasure":
        sel = np.asarray(mask_or_idx)
        return DiscreteMeasure(self.points[sel], self.weights[sel], self.n, self.floor, dict(self.meta))

    def with_weights(self, weights) -> "DiscreteMeasure":
        return build_measure(self.points, weights, self.n, floor=self.floor, meta=dict(self.meta))

    def transformed(self, rotation=None, shift=None, scale: float = 1.0) -> "DiscreteMeasure":
        """Push the atoms forward under ``x -> scale * R x + shift`` (weights unchanged)."""
        pts = self.points
        if rotation is not None:
            pts = pts @ np.asarray(rotation).T
        pts = scale * pts
        if shift is not None:
            pts = pts + np.asarray(shift)
        return DiscreteMeasure(pts, self.weights.copy(), self.n, self.floor * scale, dict(self.meta))


def build_measure(points, weights, n: int, floor: float = 0.0, meta: dict | None = None) -> DiscreteMeasure:
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if points.size == 0:
        d = points.shape[1] if points.ndim == 2 else max(n, 1)
        points = points.reshape(0, d)
    if points.ndim != 2:
        raise ValueError("points must be an (N, d) array")
    if points.shape[0] != weights.shape[0]:
        raise ValueError(f"{points.shape[0]} points but {weights.shape[0]} weights")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and nonnegative")
    d = points.shape[1]
    if not 0 < n <= d:
        raise ValueError(f"need 0 < n <= d, got n={n}, d={d}")
    points.setflags(write=False)
    weights.setflags(write=False)
    return DiscreteMeasure(points, weights, int(n), float(floor), meta or {})


def density(mu: DiscreteMeasure, x, r: float) -> float:
    """mu(closed B(x, r)) / r^n."""
    if not r > 0:
        raise ValueError("radius must be positive")
    return mu.ball_mass(x, r) / r ** mu.n


def _sq_dist(mu, x):
    diff = mu.points - np.asarray(x, dtype=float)
    return np.einsum("ij,ij->i", diff, diff)


def poisson_p(mu: DiscreteMeasure, x, eps: float) -> float:
    """P(x, eps) = sum_y w_y eps / (|x-y|^2 + eps^2)^((n+1)/2)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    s = _sq_dist(mu, x) + eps * eps
    return float(np.sum(mu.weights * eps / s ** ((mu.n + 1) / 2)))


def poisson_p2(mu: DiscreteMeasure, x, eps: float) -> float:
    """P2(x, eps) = sum_y w_y eps^3 / (|x-y|^2 + eps^2)^((n+3)/2), centred at x."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    s = _sq_dist(mu, x) + eps * eps
    return float(np.sum(mu.weights * eps ** 3 / s ** ((mu.n + 3) / 2)))


class GoodRadiusError(RuntimeError):
    pass


def good_radius_steps(n: int, C15: float, M: float) -> int:
    """Number of doublings guaranteed to suffice by the dyadic-scan argument.

    Each round of the scan either stops or finds a doubling-step k <= N with
    the density multiplied by 8, where N is the first integer with
    M 2^(n+1-N) <= 1/C15; the density is capped by M, so at most
    floor(log_8(M C15)) + 1 rounds occur.
    """
    N = max(1, math.ceil(n + 1 + math.log2(max(M * C15, 1.0))))
    rounds = math.floor(math.log(max(M * C15, 1.0), 8)) + 1
    return N * rounds


def find_good_radius(mu: DiscreteMeasure, x, r: float, M: float, C15: float = 10.0) -> float:
    """Smallest r1 = 2^k r with P(x,r1) <= 2^(n+4) delta(x,r1) and delta(x,r1) >= delta(x,r)."""
    n = mu.n
    d0 = density(mu, x, r)
    kmax = good_radius_steps(n, C15, M)
    a = 2.0 ** (n + 4)
    for k in range(kmax + 1):
        r1 = r * 2.0 ** k
        dk = density(mu, x, r1)
        if dk >= d0 and poisson_p(mu, x, r1) <= a * dk:
            return r1
    raise GoodRadiusError(
        f"no good radius within 2^{kmax} r; growth or density preconditions are violated"
    )


def load_point_csv(path, n: int) -> DiscreteMeasure:
    """Read a ``x1,...,xd,w`` CSV file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        header = [h.strip() for h in header]
        d = len(header) - 1
        expected = [f"x{i + 1}" for i in range(d)] + ["w"]
        if d < 1 or header != expected:
            raise ValueError(f"bad header {header!r}; expected {','.join(expected)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ValueError(f"line {lineno}: expected {d + 1} columns, got {len(row)}")
            rows.append([float(v) for v in row])
    arr = np.array(rows, dtype=float).reshape(-1, d + 1)
    return build_measure(arr[:, :d], arr[:, d], n)


def save_point_csv(path, mu: DiscreteMeasure):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(mu.d)] + ["w"])
        for p, wt in zip(mu.points, mu.weights):
            w.writerow([f"{v:.17g}" for v in p] + [f"{wt:.17g}"])
