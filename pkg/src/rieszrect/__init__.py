"""Riesz transforms, multiscale flatness coefficients and Lipschitz-graph construction for point clouds."""
__version__ = "0.1.0"

from .measure import Ball, Constants, DiscreteMeasure, build_measure, density, find_good_radius, poisson_p, poisson_p2
from .kernels import (cutoff_transform, maximal_transform, orthogonal_part, pv_oscillation, riesz_kernel,
                      smoothed_transform, transform_field, truncated_transform)
from .geometry import AffinePlane, alpha_number, beta_number, bl_distance, dyadic_lattice, level_sums
from .graphs import GraphMeasureSpec, make_graph_function, sample_graph_measure

__all__ = [
    "Ball", "Constants", "DiscreteMeasure", "build_measure", "density", "find_good_radius", "poisson_p",
    "poisson_p2", "cutoff_transform", "maximal_transform", "orthogonal_part", "pv_oscillation", "riesz_kernel",
    "smoothed_transform", "transform_field", "truncated_transform", "AffinePlane", "alpha_number", "beta_number",
    "bl_distance", "dyadic_lattice", "level_sums", "GraphMeasureSpec", "make_graph_function",
    "sample_graph_measure",
]
