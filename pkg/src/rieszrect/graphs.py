"""Lipschitz graphs {(x, A(x))} over R^n and measures sampled on them.

A graph function lives on a cell-centred grid of spacing h over a box in
R^n.  It is given either analytically (linear part plus Fourier modes,
optionally multiplied by a smoothstep window that makes A vanish outside a
support box) or by a callable.  The window is what gives the compact support
needed by the comparability experiments; the grid box may extend beyond the
support box, where the graph is flat.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .measure import DiscreteMeasure, build_measure


@dataclass(frozen=True)
class Mode:
    """amp * sin(2 pi freq . x + phase)."""

    freq: tuple
    amp: tuple
    phase: float = 0.0


def _smooth(t):
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (t * (6 * t - 15) + 10)


def _smooth_d(t):
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30 * t ** 2 * (1 - t) ** 2, 0.0)


@dataclass(eq=False)
class GraphFunction:
    n: int
    d: int
    lo: np.ndarray
    hi: np.ndarray
    h: float
    modes: list = field(default_factory=list)
    linear: np.ndarray | None = None  # (d-n, n)
    offset: np.ndarray | None = None  # (d-n,)
    support: tuple | None = None  # (lo, hi) of the window region
    window: float = 0.0  # ramp width of the window; 0 disables it
    func: object = None  # callable alternative: (N, n) -> (N, d-n)
    grid: np.ndarray = field(init=False, repr=False)
    values: np.ndarray = field(init=False, repr=False)
    gradients: np.ndarray = field(init=False, repr=False)
    shape: tuple = field(init=False)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float).reshape(self.n)
        self.hi = np.asarray(self.hi, dtype=float).reshape(self.n)
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if np.any(self.hi <= self.lo):
            raise ValueError("empty box")
        counts = np.rint((self.hi - self.lo) / self.h).astype(int)
        if np.any(counts < 1) or np.any(np.abs(counts * self.h - (self.hi - self.lo)) > 1e-9 * self.h * counts):
            raise ValueError("box sides must be integer multiples of h")
        self.shape = tuple(int(c) for c in counts)
        axes = [self.lo[i] + self.h * (np.arange(counts[i]) + 0.5) for i in range(self.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        self.grid = np.stack([m.reshape(-1) for m in mesh], axis=1)
        self.values, self.gradients = self.evaluate(self.grid, with_gradient=True)

    @property
    def m(self) -> int:
        return self.d - self.n

    @property
    def analytic(self) -> bool:
        return self.func is None

    # --- evaluation --------------------------------------------------------

    def _window(self, x):
        if self.window <= 0 or self.support is None:
            return np.ones(x.shape[0]), np.zeros_like(x)
        slo, shi = (np.asarray(s, dtype=float) for s in self.support)
        a = (x - slo) / self.window
        b = (shi - x) / self.window
        fa, fb = _smooth(a), _smooth(b)
        parts = fa * fb
        dparts = (_smooth_d(a) * fb - fa * _smooth_d(b)) / self.window
        w = np.prod(parts, axis=1)
        grad = np.empty_like(x)
        for i in range(self.n):
            others = np.prod(np.delete(parts, i, axis=1), axis=1) if self.n > 1 else 1.0
            grad[:, i] = dparts[:, i] * others
        return w, grad

    def _raw(self, x):
        N = x.shape[0]
        val = np.zeros((N, self.m))
        grad = np.zeros((N, self.m, self.n))
        if self.linear is not None:
            L = np.asarray(self.linear, dtype=float).reshape(self.m, self.n)
            val += x @ L.T
            grad += L[None]
        if self.offset is not None:
            val += np.asarray(self.offset, dtype=float)
        for md in self.modes:
            f = np.asarray(md.freq, dtype=float).reshape(self.n)
            a = np.asarray(md.amp, dtype=float).reshape(self.m)
            arg = 2 * np.pi * (x @ f) + md.phase
            val += np.sin(arg)[:, None] * a
            grad += (2 * np.pi * np.cos(arg))[:, None, None] * a[None, :, None] * f[None, None, :]
        return val, grad

    def evaluate(self, x, with_gradient=False):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.func is not None:
            val = np.asarray(self.func(x), dtype=float).reshape(x.shape[0], self.m)
            if not with_gradient:
                return val
            step = 1e-6 * max(1.0, float(np.max(np.abs(self.hi - self.lo))))
            grad = np.empty((x.shape[0], self.m, self.n))
            for i in range(self.n):
                e = np.zeros(self.n)
                e[i] = step
                fp = np.asarray(self.func(x + e), dtype=float).reshape(x.shape[0], self.m)
                fm = np.asarray(self.func(x - e), dtype=float).reshape(x.shape[0], self.m)
                grad[:, :, i] = (fp - fm) / (2 * step)
            return val, grad
        raw, draw = self._raw(x)
        w, dw = self._window(x)
        val = raw * w[:, None]
        if not with_gradient:
            return val
        grad = draw * w[:, None, None] + raw[:, :, None] * dw[:, None, :]
        return val, grad

    def __call__(self, x):
        return self.evaluate(x)

    # --- norms ---------------------------------------------------------------

    def fd_gradients(self) -> np.ndarray:
        """Centred finite differences on the grid, one-sided at the edges."""
        V = self.values.reshape(self.shape + (self.m,))
        grads = np.gradient(V, self.h, axis=tuple(range(self.n))) if self.n > 1 else [np.gradient(V, self.h, axis=0)]
        G = np.stack(grads, axis=-1)  # shape + (m, n)
        return G.reshape(-1, self.m, self.n)

    def lip_inf(self) -> float:
        """max over the grid of the Jacobian operator norm; never below the FD estimate."""
        if not hasattr(self, "_lip"):
            an = np.linalg.norm(self.gradients, ord=2, axis=(1, 2)).max() if self.grid.size else 0.0
            fd = np.linalg.norm(self.fd_gradients(), ord=2, axis=(1, 2)).max() if self.grid.size else 0.0
            self._lip = float(max(an, fd))
        return self._lip

    def grad_l2(self) -> float:
        """||grad A||_2 by grid quadrature (Hilbert-Schmidt norm)."""
        return float(math.sqrt(np.sum(self.gradients ** 2) * self.h ** self.n))

    def jacobians(self) -> np.ndarray:
        return _minor_jacobian(self.gradients)

    def to_json(self) -> str:
        doc = {
            "n": self.n, "d": self.d, "box": [self.lo.tolist(), self.hi.tolist()], "h": self.h,
            "modes": [{"freq": list(md.freq), "amp": list(md.amp), "phase": md.phase} for md in self.modes],
            "linear": None if self.linear is None else np.asarray(self.linear).tolist(),
            "window": self.window,
            "support": None if self.support is None else [list(map(float, s)) for s in self.support],
        }
        return json.dumps(doc)


def _minor_jacobian(grads):
    """J = (sum over n x n minors B of [I; DA] of det(B)^2)^(1/2), batched over points."""
    N, m, n = grads.shape
    full = np.concatenate([np.broadcast_to(np.eye(n), (N, n, n)), grads], axis=1)  # (N, d, n)
    total = np.zeros(N)
    for rows in itertools.combinations(range(n + m), n):
        total += np.linalg.det(full[:, list(rows), :]) ** 2
    return np.sqrt(total)


def make_graph_function(modes=None, n: int = 1, d: int = 2, box=(0.0, 1.0), h: float = 2 ** -8,
                        linear=None, offset=None, support=None, window: float = 0.0, func=None,
                        max_lip: float | None = None) -> GraphFunction:
    """Build a GraphFunction from Fourier modes (dicts or Mode) or a callable.

    ``box`` is (lo, hi) with scalars or n-vectors.  ``support`` defaults to
    the box when a window width is given.
    """
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
    mm = []
    for md in modes or []:
        if isinstance(md, Mode):
            mm.append(md)
        else:
            freq = np.atleast_1d(np.asarray(md["freq"], dtype=float))
            amp = np.atleast_1d(np.asarray(md["amp"], dtype=float))
            mm.append(Mode(tuple(freq.tolist()), tuple(amp.tolist()), float(md.get("phase", 0.0))))
    for md in mm:
        if len(md.freq) != n or len(md.amp) != d - n:
            raise ValueError("mode frequency must be an n-vector and amplitude a (d-n)-vector")
    if window > 0 and support is None:
        support = (lo.copy(), hi.copy())
    if support is not None:
        support = tuple(np.broadcast_to(np.asarray(s, dtype=float), (n,)).copy() for s in support)
    A = GraphFunction(n, d, lo, hi, float(h), mm, None if linear is None else np.asarray(linear, dtype=float),
                      None if offset is None else np.asarray(offset, dtype=float), support, float(window), func)
    if max_lip is not None and A.lip_inf() > max_lip:
        raise ValueError(f"||grad A||_inf = {A.lip_inf():.4g} exceeds the requested bound {max_lip}")
    return A


def graph_from_json(text: str) -> GraphFunction:
    doc = json.loads(text)
    box = doc.get("box", [0.0, 1.0])
    return make_graph_function(doc.get("modes", []), n=doc.get("n", 1), d=doc.get("d", 2), box=tuple(box),
                               h=doc.get("h", 2 ** -8), linear=doc.get("linear"), window=doc.get("window", 0.0),
                               support=doc.get("support"))


def jacobian(A: GraphFunction, p) -> float:
    """n-dimensional Jacobian of x -> (x, A(x)) at p via the squared-minor sum."""
    p = np.asarray(p, dtype=float).reshape(1, A.n)
    if np.any(p < A.lo) or np.any(p > A.hi):
        raise ValueError("point outside the grid domain")
    _, grad = A.evaluate(p, with_gradient=True)
    return float(_minor_jacobian(grad)[0])


@dataclass
class GraphMeasureSpec:
    density: object = None  # None (g = 1), callable on (N, n), or grid array
    mu0: bool = False  # weights g h^n, so the pushforward is g dx
    C1: float = 10.0
    C2: float | None = None  # verify ||g - 1||_2 <= C2 ||grad A||_2 when set


def _density_on_grid(A, spec):
    if spec.density is None:
        return np.ones(A.grid.shape[0])
    if callable(spec.density):
        return np.asarray(spec.density(A.grid), dtype=float).reshape(-1)
    g = np.asarray(spec.density, dtype=float).reshape(-1)
    if g.size != A.grid.shape[0]:
        raise ValueError("density array does not match the grid")
    return g


def sample_graph_measure(A: GraphFunction, spec: GraphMeasureSpec | None = None) -> DiscreteMeasure:
    """Atoms at (p, A(p)) with weight g J h^n (surface mode) or g h^n (mu0 mode)."""
    spec = spec or GraphMeasureSpec()
    g = _density_on_grid(A, spec)
    if np.any(g <= 0):
        raise ValueError("density must be positive")
    if np.any(g < 1 / spec.C1 - 1e-12) or np.any(g > spec.C1 + 1e-12):
        raise ValueError(f"density outside [1/C1, C1] with C1={spec.C1}")
    if spec.C2 is not None:
        g1 = math.sqrt(np.sum((g - 1) ** 2) * A.h ** A.n)
        if g1 > spec.C2 * A.grad_l2() + 1e-15:
            raise ValueError(f"||g-1||_2 = {g1:.4g} exceeds C2 ||grad A||_2")
    cell = A.h ** A.n
    w = g * cell if spec.mu0 else g * A.jacobians() * cell
    pts = np.concatenate([A.grid, A.values], axis=1)
    meta = {"kind": "graph", "h": A.h, "mu0": spec.mu0, "lip_inf": A.lip_inf(), "grad_l2": A.grad_l2(),
            "g_minus_1_l2": float(math.sqrt(np.sum((g - 1) ** 2) * cell))}
    return build_measure(pts, w, A.n, floor=2 * A.h, meta=meta)


def density_rho(A: GraphFunction, spec: GraphMeasureSpec | None = None) -> np.ndarray:
    """rho = g J on the grid; the projection of mu has density rho."""
    spec = spec or GraphMeasureSpec()
    g = _density_on_grid(A, spec)
    return g if spec.mu0 else g * A.jacobians()


def suggest_spacing(modes, target: float = 1e-3) -> float:
    """Largest power-of-two h with h * (max curvature bound) <= target."""
    curv = 0.0
    for md in modes:
        md = md if isinstance(md, Mode) else Mode(tuple(np.atleast_1d(md["freq"])), tuple(np.atleast_1d(md["amp"])))
        curv += (2 * np.pi) ** 2 * float(np.dot(md.freq, md.freq)) * float(np.linalg.norm(md.amp))
    if curv == 0:
        return 2.0 ** -6
    return 2.0 ** math.floor(math.log2(target / curv))
