"""Cartesian Taylor treecode for the Riesz kernel sums.

Sources are sorted into a kd tree.  Each node stores its moments
M_k = sum w (y - c)^k up to total degree ``order``.  For a target x that is
far from a node in the sense ``r_node / |x - c| < theta``, the node's
contribution is sum_k b_k(x - c) (-1)^|k| M_k where b_k are Taylor
coefficients of the kernel.  The coefficients come from a three-term
recurrence for (|z|^2 + e)^(-nu):

    s |k| a_k = - sum_i z_i (2|k| - 2 + 2 nu) a_{k-e_i} - sum_i (|k| - 2 + 2 nu) a_{k-2e_i}

with s = |z|^2 + e, nu = (n+1)/2, and b^j_k = z_j a_k + a_{k-e_j}.

The smoothed kernel uses e = eps^2.  The truncated and cutoff kernels equal
the bare kernel (e = 0) on clusters lying entirely beyond eps, so those are
the only clusters approximated for them; all others are descended into.

Targets are grouped into leaves of their own kd tree.  A leaf of radius r_T
accepts a source node when r_node < theta (|c_T - c_node| - r_T), so one
traversal serves the whole leaf and the recurrence is vectorised over it.
"""
from __future__ import annotations

import itertools

import numpy as np
from numba import njit, prange

from .kernels import VARIANTS, _inv_pow, _pair_factor
from .measure import DiscreteMeasure


def multi_indices(d: int, p: int):
    """All k in N^d with |k| <= p, ordered by total degree."""
    out = []
    for deg in range(p + 1):
        for combo in itertools.combinations_with_replacement(range(d), deg):
            k = [0] * d
            for c in combo:
                k[c] += 1
            out.append(tuple(k))
    # combinations_with_replacement yields each multi-index once per degree
    return out


def _index_tables(d, p):
    ks = multi_indices(d, p)
    pos = {k: i for i, k in enumerate(ks)}
    K = len(ks)
    kk = np.array(ks, dtype=np.int64).reshape(K, d)
    minus1 = -np.ones((K, d), dtype=np.int64)
    minus2 = -np.ones((K, d), dtype=np.int64)
    for i, k in enumerate(ks):
        for c in range(d):
            if k[c] >= 1:
                m = list(k)
                m[c] -= 1
                minus1[i, c] = pos[tuple(m)]
            if k[c] >= 2:
                m = list(k)
                m[c] -= 2
                minus2[i, c] = pos[tuple(m)]
    deg = kk.sum(axis=1)
    return kk, deg, minus1, minus2


@njit(cache=True, fastmath=True)
def _taylor_coeffs(z, e, n, coefA, coefB, m1pad, m2pad, a, K):
    # a has one trailing slot held at zero; padded tables point there
    d = z.shape[0]
    s = e
    for c in range(d):
        s += z[c] * z[c]
    inv_s = 1.0 / s
    a[0] = _inv_pow(s, n)
    for i in range(1, K):
        t1 = 0.0
        t2 = 0.0
        for c in range(d):
            t1 += z[c] * a[m1pad[i, c]]
            t2 += a[m2pad[i, c]]
        a[i] = -(coefA[i] * t1 + coefB[i] * t2) * inv_s


@njit(cache=True)
def _monomials(h, kk, minus1, out):
    K = kk.shape[0]
    d = h.shape[0]
    out[0] = 1.0
    for i in range(1, K):
        # first coordinate with positive exponent
        for c in range(d):
            if minus1[i, c] >= 0:
                out[i] = out[minus1[i, c]] * h[c]
                break


@njit(cache=True)
def _node_moments(points, weights, start, end, center, kk, minus1, order_sign):
    K = kk.shape[0]
    d = points.shape[1]
    mom = np.zeros(K)
    h = np.empty(d)
    mono = np.empty(K)
    for q in range(start[0], end[0]):
        for c in range(d):
            h[c] = points[q, c] - center[c]
        _monomials(h, kk, minus1, mono)
        for i in range(K):
            mom[i] += weights[q] * mono[i]
    for i in range(K):
        mom[i] *= order_sign[i]
    return mom


@njit(cache=True)
def _all_moments(points, weights, starts, ends, centers, kk, minus1, sign):
    nn = starts.shape[0]
    K = kk.shape[0]
    out = np.zeros((nn, K))
    st = np.empty(1, dtype=np.int64)
    en = np.empty(1, dtype=np.int64)
    for node in range(nn):
        st[0] = starts[node]
        en[0] = ends[node]
        out[node] = _node_moments(points, weights, st, en, centers[node], kk, minus1, sign)
    return out


@njit(parallel=True, cache=True, fastmath=True)
def _evaluate_grouped(targets, tstart, tend, tcent, trad, points, weights, starts, ends, centers, radii,
                      left, right, moments, coefA, coefB, m1pad, m2pad, plus1, count_upto, max_order,
                      n, eps, variant, theta, direct_max, log_tol, max_leaf):
    # one traversal per target leaf; expansions are vectorised over its targets
    T, d = targets.shape
    K = moments.shape[1]
    e = eps * eps if variant == 1 else 0.0
    out = np.zeros((T, d))
    nl = tstart.shape[0]
    for L in prange(nl):
        t0 = tstart[L]
        nt = tend[L] - t0
        A = np.zeros((K + 1, max_leaf))
        Z = np.empty((d, max_leaf))
        invs = np.empty(max_leaf)
        tmp1 = np.empty(max_leaf)
        tmp2 = np.empty(max_leaf)
        s0 = np.empty(max_leaf)
        acc = np.zeros((d, max_leaf))
        stack = np.empty(256, dtype=np.int64)
        stack[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            dc2 = 0.0
            for c in range(d):
                dz = tcent[L, c] - centers[node, c]
                dc2 += dz * dz
            dmin = np.sqrt(dc2) - trad[L]
            rc = radii[node]
            far = dmin > 0.0 and rc < theta * dmin
            if far and variant != 1 and dmin - rc <= eps:
                far = False
            npts = ends[node] - starts[node]
            p = 1
            if far and rc > 0.0:
                need = int(np.ceil(log_tol / np.log(rc / dmin))) - 1
                if need > max_order:
                    # the capped series would miss the tolerance: open the node instead
                    far = False
                else:
                    p = max(need, 1)
            if far and npts > direct_max:
                Kp = count_upto[p]
                Kq = count_upto[p - 1]
                for t in range(nt):
                    ss = e
                    for c in range(d):
                        zc = targets[t0 + t, c] - centers[node, c]
                        Z[c, t] = zc
                        ss += zc * zc
                    invs[t] = 1.0 / ss
                    A[0, t] = _inv_pow(ss, n)
                for i in range(1, Kp):
                    for t in range(nt):
                        tmp1[t] = 0.0
                        tmp2[t] = 0.0
                    for c in range(d):
                        i1 = m1pad[i, c]
                        i2 = m2pad[i, c]
                        for t in range(nt):
                            tmp1[t] += Z[c, t] * A[i1, t]
                            tmp2[t] += A[i2, t]
                    ca = coefA[i]
                    cb = coefB[i]
                    for t in range(nt):
                        A[i, t] = -(ca * tmp1[t] + cb * tmp2[t]) * invs[t]
                mom = moments[node]
                for t in range(nt):
                    s0[t] = 0.0
                for i in range(Kp):
                    m = mom[i]
                    for t in range(nt):
                        s0[t] += m * A[i, t]
                for c in range(d):
                    for t in range(nt):
                        acc[c, t] += Z[c, t] * s0[t]
                    for i in range(Kq):
                        m = mom[plus1[i, c]]
                        for t in range(nt):
                            acc[c, t] += m * A[i, t]
            elif left[node] < 0 or far:
                for t in range(nt):
                    for q in range(starts[node], ends[node]):
                        r2 = 0.0
                        for c in range(d):
                            zz = targets[t0 + t, c] - points[q, c]
                            r2 += zz * zz
                        f = _pair_factor(r2, n, eps, variant)
                        if f != 0.0:
                            f *= weights[q]
                            for c in range(d):
                                acc[c, t] += f * (targets[t0 + t, c] - points[q, c])
            else:
                stack[sp] = left[node]
                stack[sp + 1] = right[node]
                sp += 2
        for t in range(nt):
            for c in range(d):
                out[t0 + t, c] = acc[c, t]
    return out


def _build_tree(points, leaf_size):
    N, d = points.shape
    order = np.arange(N)
    starts, ends, left, right = [], [], [], []

    def rec(lo, hi):
        node = len(starts)
        starts.append(lo)
        ends.append(hi)
        left.append(-1)
        right.append(-1)
        if hi - lo > leaf_size:
            sub = order[lo:hi]
            pts = points[sub]
            axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
            mid = (hi - lo) // 2
            part = np.argpartition(pts[:, axis], mid)
            order[lo:hi] = sub[part]
            left[node] = rec(lo, lo + mid)
            right[node] = rec(lo + mid, hi)
        return node

    rec(0, N)
    return order, np.array(starts), np.array(ends), np.array(left), np.array(right)


class Treecode:
    """Read-only far-field accelerator over a fixed source measure.

    ``theta`` bounds r_node / distance and ``order`` is the
    largest Taylor degree.  Each accepted interaction uses the smallest degree
    p <= order with (r_node / distance)^(p+1) <= ``tol``; nodes that would
    need more than ``order`` terms are opened instead, so distant clusters
    get cheap expansions and the tolerance holds everywhere.
    """

    def __init__(self, mu: DiscreteMeasure, theta: float = 0.5, order: int = 12, leaf_size: int = 64,
                 tol: float = 1e-10, target_leaf: int = 32):
        if not 0 < theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if order < 0:
            raise ValueError("order must be nonnegative")
        self.mu = mu
        self.theta = float(theta)
        self.order = int(order)
        self.leaf_size = int(leaf_size)
        self.target_leaf = int(target_leaf)
        if not 0 < tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        self.tol = float(tol)
        pts = np.asarray(mu.points, dtype=float)
        order_idx, st, en, lf, rt = _build_tree(pts, self.leaf_size)
        self.points = np.ascontiguousarray(pts[order_idx])
        self.weights = np.ascontiguousarray(np.asarray(mu.weights, dtype=float)[order_idx])
        self.starts, self.ends, self.left, self.right = st, en, lf, rt
        nn = st.size
        d = pts.shape[1]
        centers = np.empty((nn, d))
        radii = np.empty(nn)
        for i in range(nn):
            block = self.points[st[i]:en[i]]
            c = 0.5 * (block.min(axis=0) + block.max(axis=0))
            centers[i] = c
            radii[i] = np.sqrt(((block - c) ** 2).sum(axis=1).max())
        self.centers, self.radii = centers, radii
        kk, deg, m1, m2 = _index_tables(d, self.order)
        self._deg, self._m1, self._m2 = deg, m1, m2
        self._count = np.searchsorted(deg, np.arange(self.order + 1), side="right").astype(np.int64)
        K = deg.size
        self._m1pad = np.where(m1 >= 0, m1, K)
        self._m2pad = np.where(m2 >= 0, m2, K)
        pos = {tuple(k): i for i, k in enumerate(kk)}
        plus1 = np.full((K, d), K, dtype=np.int64)
        for i, k in enumerate(kk):
            for c in range(d):
                k2 = k.copy()
                k2[c] += 1
                plus1[i, c] = pos.get(tuple(k2), K)
        self._plus1 = plus1
        nu = (mu.n + 1) / 2.0
        kd = np.maximum(deg, 1).astype(float)
        self._coefA = (2 * kd - 2 + 2 * nu) / kd
        self._coefB = (kd - 2 + 2 * nu) / kd
        sign = (-1.0) ** deg
        self.moments = _all_moments(self.points, self.weights, st, en, centers, kk, m1, sign.astype(float))

    @property
    def n_nodes(self) -> int:
        return self.starts.size

    def evaluate(self, targets, eps: float, variant: str = "smooth") -> np.ndarray:
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        if self.mu.size == 0 or targets.shape[0] == 0:
            return np.zeros_like(targets)
        order_idx, st, en, lf, _ = _build_tree(targets, self.target_leaf)
        leaves = np.nonzero(lf < 0)[0]
        tsorted = np.ascontiguousarray(targets[order_idx])
        tst, ten = st[leaves], en[leaves]
        tcent = np.empty((leaves.size, targets.shape[1]))
        trad = np.empty(leaves.size)
        for k, (a, b) in enumerate(zip(tst, ten)):
            block = tsorted[a:b]
            c = 0.5 * (block.min(axis=0) + block.max(axis=0))
            tcent[k] = c
            trad[k] = np.sqrt(((block - c) ** 2).sum(axis=1).max())
        res = _evaluate_grouped(tsorted, tst, ten, tcent, trad, self.points, self.weights, self.starts,
                                self.ends, self.centers, self.radii, self.left, self.right, self.moments,
                                self._coefA, self._coefB, self._m1pad, self._m2pad, self._plus1, self._count,
                                self.order, self.mu.n, float(eps), VARIANTS[variant], self.theta,
                                2 * self.leaf_size // 3, float(np.log(self.tol)), int((ten - tst).max()))
        out = np.empty_like(targets)
        out[order_idx] = res
        return out
