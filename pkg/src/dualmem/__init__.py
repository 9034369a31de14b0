"""Dual replay memory for continual learning.

A fast reservoir-sampled buffer keeps recent stream samples while a slow
buffer holds an information-rich subset curated by gradient-based selection
weights; balanced per-class pruning frees slow slots at task boundaries. The
package also ships a small MLP, a sequential-task training harness, synthetic
and IDX data loaders, and a CLI (``dualmem``).
"""

__version__ = "0.1.0"

from .buffers import (
    DualMemory,
    MemoryRecord,
    ReplayBatch,
    load_snapshot,
    save_snapshot,
    slow_capacity_for_task,
)
from .datasets import (
    FeatureDataset,
    MinMaxScaler,
    MixtureComponent,
    MixtureSpec,
    StreamSpec,
    Task,
    TaskStream,
    build_stream,
    four_blob_mixture,
    generate_mixture,
    imbalanced_counts,
    load_dataset,
    permuted_stream,
    read_idx,
    rotated_stream,
    save_dataset,
)
from .harness import (
    HarnessConfig,
    RunMetrics,
    SelectionSettings,
    end_of_task,
    evaluate,
    run,
    train_step,
    write_metrics_csv,
    write_summary_json,
)
from .kernels import (
    KernelConfig,
    cross_information_potential,
    cs_divergence,
    gaussian_kernel,
    information_potential,
    kernel_matrix,
    renyi_entropy,
    weighted_cross_ip,
    weighted_cs_divergence,
    weighted_information_potential,
    weighted_renyi_entropy,
)
from .mlp import (
    MlpNet,
    backward,
    cross_entropy,
    forward,
    load_params,
    mse_logits,
    predict,
    save_params,
    sgd_step,
)
from .pruning import (
    balanced_remove,
    central_sample,
    cosine_distance,
    diversity_scores,
    diversity_table,
    removal_scores,
    write_diversity_csv,
)
from .selection import (
    NonFiniteLossError,
    SelectionConfig,
    SelectionResult,
    SelectionState,
    concrete_sample,
    info_loss,
    info_loss_gradient,
    optimize_weights,
    regularizer,
    select_subset,
    write_trace_csv,
)
