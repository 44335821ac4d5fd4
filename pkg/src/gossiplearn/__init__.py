"""Desk-scale deterministic simulator for gossip-based decentralized training.

Agents on a fixed communication graph train local models with decentralized
momentum SGD and average parameters with doubly-stochastic gossip weights.
On top of the two baselines (local and quasi-global momentum), agents can
exchange cross-features and per-class feature summaries to penalize feature
drift under label-skewed data, with exact byte and multiply-accumulate
accounting for everything the protocol puts on the wire.
"""

from .config import ConfigError, ExperimentConfig, parse_config
from .crossfeat import (
    CrossFeatureSummary,
    LossParts,
    NeighborhoodRepresentation,
    aggregate,
    combined_grad,
    data_variant_loss,
    model_variant_loss,
    summarize,
)
from .graph import (
    NonConvergence,
    Topology,
    UnsupportedSize,
    build_topology,
    check_mixing_matrix,
    spectral_gap,
    uniform_mixing,
)
from .model import (
    FeatureBatch,
    ForwardTape,
    ModelSpec,
    ShapeMismatch,
    ce_loss_grad,
    feature_jvp_grad,
    forward_features,
    forward_logits,
    init_params,
    param_count,
)
from .optim import OptState, dsgdm_step, lr_at, qgm_step
from .partition import (
    Dataset,
    EmptyShardUnfixable,
    PartitionSpec,
    dirichlet_partition,
    load_csv,
    make_blobs,
    skew_metric,
)
from .sim import (
    MetricsLog,
    RoundMetrics,
    SimulationError,
    comm_cost,
    compute_overhead,
    consensus_model,
    run_experiment,
    write_metrics_csv,
    write_summary_json,
)

__version__ = "0.1.0"
