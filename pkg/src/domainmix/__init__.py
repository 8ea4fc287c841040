"""Domain-mixture scheduling engine.

Clusters training data into domains by gradient behavior, scores each
domain's impact on downstream tasks through a Fisher-weighted quadratic
divergence, and re-weights domain sampling probabilities during training.
"""

from . import cli, cluster, gradtrace, impact, scheduler, sketch, toysim
from .cluster import DomainPartition, domain_sizes, kmeans, repartition
from .gradtrace import (
    DecayFit,
    GradientTrace,
    LossHistory,
    TraceRecord,
    read_loss_history,
    read_trace,
    write_loss_history,
    write_trace,
)
from .impact import (
    DomainGradient,
    FimDiagonal,
    ImpactMatrix,
    TaskGradient,
    build_impact_matrix,
    dga_impact,
    estimate_fim_diagonal,
    fim_impact,
    normalize_impact,
    update_domain_gradient,
)
from .scheduler import (
    SamplingState,
    UtilityVector,
    fit_decay,
    loss_improvement,
    potential,
    should_update,
    uniform_state,
    update_probs,
    utilities,
)
from .sketch import ProjectionMatrix, choose_target_dim, make_projection, project, topk_sparsify
from .toysim import (
    RunConfig,
    RunReport,
    SyntheticCorpus,
    ToyModel,
    compare_strategies,
    make_corpus,
    planted_corpus_spec,
    run_strategy,
)

__version__ = "0.1.0"
