"""Basin mapping of chimera states in networked dynamical systems."""

from .netgraph import (
    Network,
    NetworkSummary,
    generate_two_population,
    load_network,
    network_info,
    save_network,
)
from .dynsys import (
    ChemicalParams,
    HenonParams,
    HRParams,
    KuramotoParams,
    SystemModel,
    henon_network_step,
    make_model,
    network_vector_field,
)
from .integrate import IntegrationConfig, TrajectorySet, integrate, integrate_ode, iterate_map
from .vps import VpsConfig, VpsVector, alignment_cost, best_lag, build_vps, vps_distance
from .basinmap import (
    BasinMap,
    Clustering,
    SliceSpec,
    VpsMatrix,
    build_basin_map,
    kmeans_cluster,
    sample_slice,
    select_k_elbow,
    sweep,
)
from .fractal import box_count, extract_boundary, fit_box_dimension, uncertainty_exponent

__version__ = "0.1.0"
