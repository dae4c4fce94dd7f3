"""Riesz kernels x/|x|^(n+1) and the transforms built from them.

Variants of the transform of a discrete measure mu at a point x:

* ``trunc``  -- sum over atoms with |x-y| > eps of w K(x-y)
* ``smooth`` -- kernel (x-y) / (|x-y|^2 + eps^2)^((n+1)/2)
* ``cutoff`` -- kernel psi((x-y)/eps) K(x-y) with the smoothstep cutoff psi

All sums are exact over atoms.  ``transform_field`` can route large batches
through the treecode in :mod:`rieszrect.treecode`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .measure import DiscreteMeasure

VARIANTS = {"trunc": 0, "smooth": 1, "cutoff": 2}


# --- bump profiles -------------------------------------------------------

@njit(cache=True)
def _smoothstep(t):
    if t <= 0.0:
        return 0.0
    if t >= 1.0:
        return 1.0
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


@njit(cache=True)
def _psi_scalar(rho):
    # 0 on [0, 1/2], 1 on [1, inf)
    return _smoothstep(2.0 * rho - 1.0)


@njit(cache=True)
def _psigen_scalar(r):
    # 1 on [0, 1/8], 0 on [1/4, inf)
    return 1.0 - _smoothstep(8.0 * r - 1.0)


@njit(cache=True)
def _phi_scalar(r):
    return _psigen_scalar(r) - _psigen_scalar(2.0 * r)


def smoothstep(t):
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t ** 3 * (t * (6.0 * t - 15.0) + 10.0)


def psi(rho):
    """Radial cutoff: 0 for rho <= 1/2, 1 for rho >= 1."""
    return smoothstep(2.0 * np.asarray(rho, dtype=float) - 1.0)


def psi_generator(r):
    """Radial bump: 1 for r <= 1/8, 0 for r >= 1/4."""
    return 1.0 - smoothstep(8.0 * np.asarray(r, dtype=float) - 1.0)


def phi(r):
    """phi = psi_gen(r) - psi_gen(2r), supported on [1/16, 1/4]."""
    r = np.asarray(r, dtype=float)
    return psi_generator(r) - psi_generator(2.0 * r)


def phi_j(r, j: int):
    """Dyadic piece phi(2^j r), supported on [2^(-j-4), 2^(-j-2)]."""
    return phi(np.ldexp(np.asarray(r, dtype=float), j))


# --- single-kernel helpers ----------------------------------------------

def riesz_kernel(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x)
    if r == 0:
        raise ValueError("Riesz kernel is singular at the origin")
    return x / r ** (n + 1)


@njit(cache=True)
def _inv_pow(s, n):
    # s^(-(n+1)/2)
    if n == 1:
        return 1.0 / s
    if n == 2:
        return 1.0 / (s * np.sqrt(s))
    if n == 3:
        return 1.0 / (s * s)
    return s ** (-(n + 1) / 2.0)


@njit(cache=True)
def _pair_factor(r2, n, eps, variant):
    """Scalar factor f with K_variant(z) = f * z, given r2 = |z|^2."""
    if r2 == 0.0:
        return 0.0
    if variant == 0:
        if r2 <= eps * eps:
            return 0.0
        return _inv_pow(r2, n)
    if variant == 1:
        return _inv_pow(r2 + eps * eps, n)
    rho = np.sqrt(r2) / eps
    if rho <= 0.5:
        return 0.0
    return _psi_scalar(rho) * _inv_pow(r2, n)


@njit(parallel=True, cache=True)
def _direct_sum(targets, sources, weights, n, eps, variant):
    T, d = targets.shape
    S = sources.shape[0]
    out = np.zeros((T, d))
    for i in prange(T):
        acc = np.zeros(d)
        for k in range(S):
            r2 = 0.0
            for c in range(d):
                z = targets[i, c] - sources[k, c]
                r2 += z * z
            f = _pair_factor(r2, n, eps, variant)
            if f != 0.0:
                f *= weights[k]
                for c in range(d):
                    acc[c] += f * (targets[i, c] - sources[k, c])
        for c in range(d):
            out[i, c] = acc[c]
    return out


def direct_sum(mu: DiscreteMeasure, targets, eps: float, variant: str = "trunc") -> np.ndarray:
    targets = np.ascontiguousarray(np.atleast_2d(np.asarray(targets, dtype=float)))
    if mu.size == 0:
        return np.zeros_like(targets)
    return _direct_sum(targets, np.ascontiguousarray(mu.points), np.ascontiguousarray(mu.weights),
                       mu.n, float(eps), VARIANTS[variant])


def truncated_transform(mu: DiscreteMeasure, x, eps: float) -> np.ndarray:
    """R_eps mu(x): atoms with |x-y| > eps (strict)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return direct_sum(mu, x, eps, "trunc")[0]


def smoothed_transform(mu: DiscreteMeasure, x, eps: float) -> np.ndarray:
    if not eps > 0:
        raise ValueError("eps must be positive")
    return direct_sum(mu, x, eps, "smooth")[0]


def cutoff_transform(mu: DiscreteMeasure, x, eps: float) -> np.ndarray:
    if not eps > 0:
        raise ValueError("eps must be positive")
    return direct_sum(mu, x, eps, "cutoff")[0]


def pv_oscillation(mu: DiscreteMeasure, x, eps1: float, eps2: float) -> float:
    """|R~_{e1} - R~_{e2}| + |R^_{e1} - R^_{e2}| at x."""
    if not 0 < eps1 < eps2:
        raise ValueError("need 0 < eps1 < eps2")
    s1 = direct_sum(mu, x, eps1, "smooth")[0]
    s2 = direct_sum(mu, x, eps2, "smooth")[0]
    c1 = direct_sum(mu, x, eps1, "cutoff")[0]
    c2 = direct_sum(mu, x, eps2, "cutoff")[0]
    return float(np.linalg.norm(s1 - s2) + np.linalg.norm(c1 - c2))


def oscillation_profile(mu: DiscreteMeasure, targets, eps_grid) -> dict:
    """Smoothed and cutoff transforms on a scale grid, for sup-oscillation studies.

    Returns arrays of shape (len(targets), len(eps_grid), d).
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    eps_grid = np.asarray(eps_grid, dtype=float)
    sm = np.stack([direct_sum(mu, targets, e, "smooth") for e in eps_grid], axis=1)
    cu = np.stack([direct_sum(mu, targets, e, "cutoff") for e in eps_grid], axis=1)
    return {"eps": eps_grid, "smooth": sm, "cutoff": cu}


def sup_oscillation(profile: dict, upper: float | None = None, lower: float | None = None) -> np.ndarray:
    """Per target, sup over grid pairs e1 < e2 in [lower, upper] of the oscillation."""
    eps = profile["eps"]
    keep = np.ones(eps.size, dtype=bool)
    if upper is not None:
        keep &= eps <= upper * (1 + 1e-12)
    if lower is not None:
        keep &= eps >= lower * (1 - 1e-12)
    sm = profile["smooth"][:, keep]
    cu = profile["cutoff"][:, keep]
    m = sm.shape[1]
    best = np.zeros(sm.shape[0])
    for a in range(m):
        for b in range(a + 1, m):
            val = np.linalg.norm(sm[:, a] - sm[:, b], axis=1) + np.linalg.norm(cu[:, a] - cu[:, b], axis=1)
            best = np.maximum(best, val)
    return best


def maximal_transform(mu: DiscreteMeasure, x, eps_grid) -> float:
    """max over the grid of |R_eps mu(x)|; a lower bound for the true supremum."""
    eps_grid = np.asarray(eps_grid, dtype=float)
    if eps_grid.size == 0:
        raise ValueError("empty eps grid")
    vals = [np.linalg.norm(truncated_transform(mu, x, e)) for e in eps_grid]
    return float(max(vals))


def orthogonal_part(v, plane):
    """Component of v orthogonal to the direction span of ``plane``.

    Returns ``(magnitude, vector)``.
    """
    frame = np.atleast_2d(np.asarray(plane.frame, dtype=float))
    gram = frame @ frame.T
    if np.max(np.abs(gram - np.eye(frame.shape[0]))) > 1e-10:
        raise ValueError("plane frame is not orthonormal")
    v = np.asarray(v, dtype=float)
    perp = v - (v @ frame.T) @ frame
    mag = np.linalg.norm(perp, axis=-1)
    return (float(mag) if perp.ndim == 1 else mag), perp


# --- band-limited kernels -----------------------------------------------

@njit(cache=True)
def _band_factor(zsq, z0sq, j, n, flat):
    r0 = np.sqrt(z0sq)
    f = _phi_scalar(r0 * 2.0 ** j)
    if f == 0.0:
        return 0.0
    if flat:
        return f * _inv_pow(z0sq, n)
    return f * _inv_pow(zsq, n)


@njit(parallel=True, cache=True)
def _band_sum(targets, sources, weights, frame, j, n, flat):
    T, d = targets.shape
    S = sources.shape[0]
    m = frame.shape[0]
    out = np.zeros((T, d))
    for i in prange(T):
        acc = np.zeros(d)
        for k in range(S):
            zsq = 0.0
            for c in range(d):
                z = targets[i, c] - sources[k, c]
                zsq += z * z
            z0sq = 0.0
            for a in range(m):
                p = 0.0
                for c in range(d):
                    p += frame[a, c] * (targets[i, c] - sources[k, c])
                z0sq += p * p
            if z0sq == 0.0:
                continue
            f = _band_factor(zsq, z0sq, j, n, flat) * weights[k]
            if f != 0.0:
                for c in range(d):
                    acc[c] += f * (targets[i, c] - sources[k, c])
        for c in range(d):
            out[i, c] = acc[c]
    return out


def _default_frame(mu, plane):
    if plane is None:
        return np.eye(mu.d)[: mu.n]
    return np.ascontiguousarray(np.atleast_2d(plane.frame))


def band_transform(mu: DiscreteMeasure, x, j: int, flavor: str = "standard", plane=None) -> np.ndarray:
    """Band piece R_j mu(x) (flavor 'standard') or the flat-denominator piece (flavor 'flat').

    The cutoff phi_j is applied to the projection of x-y onto the reference plane
    (default R^n x {0}).
    """
    if flavor not in ("standard", "flat"):
        raise ValueError(f"unknown flavor {flavor!r}")
    targets = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))
    out = _band_sum(targets, np.ascontiguousarray(mu.points), np.ascontiguousarray(mu.weights),
                    _default_frame(mu, plane), int(j), mu.n, flavor == "flat")
    return out[0] if np.ndim(x) == 1 else out


@njit(parallel=True, cache=True)
def _all_bands_perp(points, weights, frame, jlo, jhi, n, flat, lo, hi):
    N, d = points.shape
    m = frame.shape[0]
    nb = jhi - jlo + 1
    out = np.zeros((N, nb, d))
    for i in prange(N):
        for k in range(lo[i], hi[i]):
            if k == i:
                continue
            zsq = 0.0
            for c in range(d):
                z = points[i, c] - points[k, c]
                zsq += z * z
            z0sq = 0.0
            for a in range(m):
                p = 0.0
                for c in range(d):
                    p += frame[a, c] * (points[i, c] - points[k, c])
                z0sq += p * p
            if z0sq == 0.0:
                continue
            u = -np.log2(np.sqrt(z0sq))
            ja = int(np.floor(u - 4.0)) + 1
            jb = int(np.ceil(u - 2.0)) - 1
            if ja < jlo:
                ja = jlo
            if jb > jhi:
                jb = jhi
            # orthogonal part of z
            zp = np.empty(d)
            for c in range(d):
                zp[c] = points[i, c] - points[k, c]
            for a in range(m):
                p = 0.0
                for c in range(d):
                    p += frame[a, c] * (points[i, c] - points[k, c])
                for c in range(d):
                    zp[c] -= p * frame[a, c]
            for j in range(ja, jb + 1):
                f = _band_factor(zsq, z0sq, j, n, flat) * weights[k]
                if f != 0.0:
                    for c in range(d):
                        out[i, j - jlo, c] += f * zp[c]
    return out


def band_fields_perp(mu: DiscreteMeasure, jlo: int, jhi: int, flavor: str = "standard", plane=None) -> np.ndarray:
    """R_j^perp mu at every atom, for j = jlo..jhi; shape (N, jhi-jlo+1, d).

    Atoms are sorted along the first frame direction; pairs farther apart
    than the outer radius 2^(-jlo-2) in that direction are never visited.
    """
    frame = _default_frame(mu, plane)
    key = mu.points @ frame[0]
    order = np.argsort(key, kind="stable")
    key = key[order]
    rmax = 2.0 ** (-int(jlo) - 2)
    lo = np.searchsorted(key, key - rmax, side="left")
    hi = np.searchsorted(key, key + rmax, side="right")
    out = _all_bands_perp(np.ascontiguousarray(mu.points[order]), np.ascontiguousarray(mu.weights[order]),
                          frame, int(jlo), int(jhi), mu.n, flavor == "flat", lo, hi)
    res = np.empty_like(out)
    res[order] = out
    return res


def band_gram(mu: DiscreteMeasure, jlo: int, jhi: int, flavor: str = "standard", plane=None) -> np.ndarray:
    """Matrix of <R_j^perp mu, R_k^perp mu>_{L^2(mu)} for j, k in jlo..jhi."""
    fields = band_fields_perp(mu, jlo, jhi, flavor, plane)
    return np.einsum("i,ija,ika->jk", mu.weights, fields, fields)


def band_inner_product(mu: DiscreteMeasure, j: int, k: int, flavor: str = "standard", plane=None) -> float:
    lo, hi = min(j, k), max(j, k)
    G = band_gram(mu, lo, hi, flavor, plane)
    return float(G[j - lo, k - lo])


# --- batch evaluation ----------------------------------------------------

@dataclass
class FieldResult:
    vectors: np.ndarray
    target_weights: np.ndarray
    method: str
    variant: str
    eps: float

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.target_weights * np.einsum("ij,ij->i", self.vectors, self.vectors))))

    def perp(self, plane) -> "FieldResult":
        _, v = orthogonal_part(self.vectors, plane)
        return FieldResult(v, self.target_weights, self.method, self.variant, self.eps)

    def relative_discrepancy(self, other: "FieldResult") -> float:
        diff = self.vectors - other.vectors
        num = np.sqrt(np.sum(self.target_weights * np.einsum("ij,ij->i", diff, diff)))
        return float(num / other.norm)


class TruncationFloorError(ValueError):
    pass


def transform_field(mu: DiscreteMeasure, targets: DiscreteMeasure, eps: float, method: str = "naive",
                    variant: str = "smooth", **tree_opts) -> FieldResult:
    """Evaluate a transform variant at every atom of ``targets``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    floor = max(mu.floor, targets.floor if targets is not mu else 0.0)
    if not eps > floor:
        raise TruncationFloorError(f"eps={eps} is not above the truncation floor {floor}")
    if method == "naive":
        vec = direct_sum(mu, targets.points, eps, variant)
    elif method in ("treecode", "tree"):
        from .treecode import Treecode
        vec = Treecode(mu, **tree_opts).evaluate(targets.points, eps, variant)
        method = "treecode"
    else:
        raise ValueError(f"unknown method {method!r}")
    return FieldResult(vec, np.asarray(targets.weights), method, variant, float(eps))
