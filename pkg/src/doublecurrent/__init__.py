"""Double random currents on planar graphs via dimers on decorated graphs."""

from .currents import ClusterChain, CurrentTrace, LoopBuilder, clusters, sample_double_current
from .decorations import X_CRITICAL, build_cg, build_gd, build_vec_g, gd_to_cg, urban_renewal
from .fields import HeightField, height_from_dimer, nesting_field
from .kasteleyn import build_weighting, invert, kasteleyn_matrix, sample_dimers
from .loops_stats import (cluster_count_experiment, conformal_radius, crossing_counts, estimate_height_moments,
                          loop_family, loop_metric)
from .planar_map import Domain, PlanarMap, grid_domain

__all__ = [
    "ClusterChain", "CurrentTrace", "Domain", "HeightField", "LoopBuilder", "PlanarMap", "X_CRITICAL",
    "build_cg", "build_gd", "build_vec_g", "build_weighting", "cluster_count_experiment", "clusters",
    "conformal_radius", "crossing_counts", "estimate_height_moments", "gd_to_cg", "grid_domain",
    "height_from_dimer", "invert", "kasteleyn_matrix", "loop_family", "loop_metric", "nesting_field",
    "sample_dimers", "sample_double_current", "urban_renewal",
]
