"""Stochastic patching: priors over rectangular patches on finite arrays,
projection self-consistency checks, and MCMC for the relational model."""

from .grid import ArrayShape, Partition, Patch, indicator_vector, patch_volume, time_points
from .prior import (
    HyperParams,
    expected_total_volume,
    length_pmf,
    nonempty_prob,
    sample_partition_candidate,
    sample_partition_direct,
    start_pmf,
)
from .projection import (
    SubArraySpec,
    check_intensity_equality,
    check_self_consistency_mc,
    project_partition,
    project_patch,
    projected_position_pmf,
)
from .relmodel import RelationalState, generate_synthetic, predict, sigma
from .mcmc import ChainConfig, MtmConfig, SmcConfig, run_chain
from .estimator import SPPRelationalModel
from .dataio import EvalSplit, auc, evaluate, ingest, make_split

__version__ = "0.1.0"
