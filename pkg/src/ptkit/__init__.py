"""Post-training toolkit: checkpoint merging, merge-workflow recipes,
continued-pretraining planning, corpus filtering and BPE-dropout
tokenization, and preference-objective evaluation."""

from .errors import ToolkitError
from .merge import (
    METHOD_NAMES,
    MergeParams,
    SparsifyMode,
    TaskVector,
    apply_delta,
    elect_and_disjoint,
    merge_checkpoints,
    merge_consensus_ta,
    merge_dare_ties,
    merge_della_linear,
    merge_linear,
    merge_task_arithmetic,
    merge_ties,
    sparsify,
    task_vector,
)
from .planning import (
    MixPlan,
    OptimizerConfig,
    SourceSpec,
    WsdSchedule,
    builtin_cpt_sources,
    emit_train_config,
    lr_at,
    plan_mix,
)
from .prefs import PreferencePair, ScoredResponse, SimpoParams, build_pairs, simpo_grad, simpo_loss
from .recipes import MergeRecipe, builtin_recipe, execute, load_recipe, parse_recipe, validate
from .tensorstore import (
    Tensor,
    TensorMap,
    content_digest,
    load_checkpoint,
    save_checkpoint,
    validate_compat,
)

__version__ = "0.1.0"

__all__ = [
    "METHOD_NAMES",
    "MergeParams",
    "MergeRecipe",
    "MixPlan",
    "OptimizerConfig",
    "PreferencePair",
    "ScoredResponse",
    "SimpoParams",
    "SourceSpec",
    "SparsifyMode",
    "TaskVector",
    "Tensor",
    "TensorMap",
    "ToolkitError",
    "WsdSchedule",
    "apply_delta",
    "build_pairs",
    "builtin_cpt_sources",
    "builtin_recipe",
    "content_digest",
    "elect_and_disjoint",
    "emit_train_config",
    "execute",
    "load_checkpoint",
    "load_recipe",
    "lr_at",
    "merge_checkpoints",
    "merge_consensus_ta",
    "merge_dare_ties",
    "merge_della_linear",
    "merge_linear",
    "merge_task_arithmetic",
    "merge_ties",
    "parse_recipe",
    "plan_mix",
    "save_checkpoint",
    "simpo_grad",
    "simpo_loss",
    "sparsify",
    "task_vector",
    "validate",
    "validate_compat",
]
