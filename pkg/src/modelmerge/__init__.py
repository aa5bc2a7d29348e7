"""modelmerge: parameter-space merging of compatible transformer checkpoints."""

from .checkpoint import (
    ArchiveReader,
    Checkpoint,
    TensorRecord,
    load_checkpoint,
    open_reader,
    save_checkpoint,
    to_bf16,
    to_f32,
)
from .errors import (
    CompatibilityError,
    DtypeError,
    FormatError,
    LayoutError,
    MissingShardError,
    ModelMergeError,
    ParameterError,
    RecipeError,
    ShardConflictError,
)
from .heads import (
    HeadLayout,
    HeadPermutation,
    align_heads,
    assignment_cost,
    head_cost_matrix,
    linear_sum_assignment,
    split_heads,
)
from .hierarchical import (
    LayerClass,
    LayerWeightReport,
    classify_layer,
    hierarchical_merge,
    layer_weight,
)
from .kernels import (
    TaskVector,
    breadcrumbs_mask,
    compute_task_vector,
    dare_drop_rescale,
    della_magprune,
    linear_average,
    merge_elementwise,
    task_arithmetic,
    ties_sign_consensus,
)
from .pipeline import MergeResult, WorkspaceTracker, diff_checkpoints, inspect_checkpoint, run_merge
from .recipe import AttentionSpec, MergeRecipe, RecipeFile, load_recipe, parse_recipe_text

__version__ = "0.1.0"
