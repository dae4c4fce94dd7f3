"""Synthetic measures: the four-corner Cantor set and noisy graph samples."""
from __future__ import annotations

import numpy as np

from .graphs import GraphFunction, GraphMeasureSpec, sample_graph_measure
from .measure import DiscreteMeasure, build_measure

MAX_GENERATION = 12


def cantor_points(generation: int) -> np.ndarray:
    """Centres of the 4^g corner cells; each step keeps the four corner quarters of side 1/4."""
    pts = np.array([[0.5, 0.5]])
    side = 1.0
    corners = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=float)
    for _ in range(generation):
        # children of a cell of side s centred at c sit at c +- 3s/8
        pts = (pts[:, None, :] + corners[None] * (3 * side / 8)).reshape(-1, 2)
        side /= 4
    return pts


def gen_cantor_four_corner(generation: int) -> DiscreteMeasure:
    """4^g atoms of mass 4^-g at the generation-g corner cells of [0,1]^2 (n = 1, d = 2)."""
    if generation < 1:
        raise ValueError("generation must be at least 1")
    if generation > MAX_GENERATION:
        raise ValueError(f"generation {generation} exceeds the memory guard {MAX_GENERATION}")
    pts = cantor_points(generation)
    w = np.full(pts.shape[0], 4.0 ** -generation)
    return build_measure(pts, w, 1, floor=4.0 ** -generation,
                         meta={"kind": "cantor", "generation": generation})


def gen_perturbed_graph(A: GraphFunction, spec: GraphMeasureSpec | None = None, noise: float = 0.0,
                        seed: int = 0) -> DiscreteMeasure:
    """Graph sample with i.i.d. transverse offsets, each coordinate uniform in [-noise, noise]."""
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    mu = sample_graph_measure(A, spec)
    if noise == 0:
        return mu
    rng = np.random.default_rng(seed)
    pts = np.array(mu.points)
    pts[:, A.n:] += rng.uniform(-noise, noise, size=(pts.shape[0], A.m))
    meta = dict(mu.meta, noise=noise, seed=seed)
    return build_measure(pts, mu.weights, mu.n, floor=mu.floor, meta=meta)
