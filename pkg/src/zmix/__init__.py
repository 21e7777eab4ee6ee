"""Overfitted Gaussian mixtures sampled with prior parallel tempering.

The target chain of the tempered sampler estimates the number of occupied
components; relabeling and the diagnostics then summarize each candidate
configuration.
"""

from .exceptions import (ConfigError, DataLoadError, InvalidInputError, NoInjectiveAssignment,
                         NumericalError, RelabelRefusal, ZmixError)
from .model import (ChainState, ComponentStats, Dataset, Hyperparams, count_alive,
                    dirichlet_log_density, gibbs_sweep, log_unnormalized_posterior,
                    mixture_log_likelihood, sample_allocations, sample_component_params,
                    sample_weights)
from .sampler import (PosteriorTrace, RunConfig, TemperingLadder, alive_count_distribution,
                      build_ladder, modal_alive_count, propose_swap, zmix_run)
from .relabel import partition_by_k0, select_reference, unimodality_report, zswitch
from .data import (SimulationSpec, builtin_case_studies, builtin_sims, generate_simulation,
                   load_case_study, load_dataset, replicate_study, write_dataset)
from .trace_io import load_relabeled, load_trace, save_relabeled, save_trace

__all__ = [
    "ConfigError", "DataLoadError", "InvalidInputError", "NoInjectiveAssignment",
    "NumericalError", "RelabelRefusal", "ZmixError", "ChainState", "ComponentStats",
    "Dataset", "Hyperparams", "count_alive", "dirichlet_log_density", "gibbs_sweep",
    "log_unnormalized_posterior", "mixture_log_likelihood", "sample_allocations",
    "sample_component_params", "sample_weights", "PosteriorTrace", "RunConfig",
    "TemperingLadder", "alive_count_distribution", "build_ladder", "modal_alive_count",
    "propose_swap", "zmix_run", "partition_by_k0", "select_reference",
    "unimodality_report", "zswitch", "SimulationSpec", "builtin_case_studies",
    "builtin_sims", "generate_simulation", "load_case_study", "load_dataset",
    "replicate_study", "write_dataset", "load_relabeled", "load_trace", "save_relabeled",
    "save_trace"
]

__version__ = "0.1.0"
