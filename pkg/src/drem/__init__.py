"""Dirichlet-process random-effects models: samplers, estimation, experiments."""

from drem.config import ConfigError, ExperimentConfig, SimulationSpec
from drem.linear_model import (
    Dataset,
    FullConditionals,
    Hyperpriors,
    ModelParams,
    PrecisionCoefficients,
    exhaustive_precision_coefficients,
    gibbs_step_theta,
    linear_full_conditionals,
    log_marginal_component,
)
from drem.partitions import (
    Partition,
    UrnDraw,
    canonicalize,
    collapse_draw,
    enumerate_partitions,
    group_by_k,
    log_collapse_mass,
    log_partition_prior,
    merge_clusters,
    polya_urn_draw,
    polya_urn_sample,
    stirling2,
)
from drem.precision import (
    MleResult,
    classify_likelihood_shape,
    dlog_ell,
    importance_sample_coefficients,
    kappa,
    log_ell,
    marginal_posterior_m,
    posterior_mean_m,
    posterior_mode_m,
    solve_m_for_kappa,
)
from drem.probit_model import (
    BinaryDataset,
    LatentState,
    probit_gibbs_sweep,
    probit_success_prob,
    sample_latent_u,
)
from drem.samplers import (
    KernelKind,
    SampleArchive,
    cumulative_mean_variance,
    drem_mh_step,
    drem_row_update,
    neal_row_update,
    row_update_probabilities,
    run_chain,
    run_prior_chain,
    sample_q,
)
from drem.state import ChainState

__version__ = "0.1.0"
