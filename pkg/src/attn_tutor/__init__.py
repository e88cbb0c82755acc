"""Attention tutoring for toy visual question answering.

A self-contained numpy package that trains a small stacked-attention VQA
model whose attention maps are supervised by visual-explanation maps
(Grad-CAM, RISE, or random controls) through adversarial or
distribution-matching losses, and that scores the resulting attention
against reference maps with rank correlation and Earth Mover's Distance.
"""

from .adversary import (
    discriminate_global,
    discriminate_pixel,
    init_discriminator_params,
    js_divergence,
    minimax_losses,
    pearson_chi2,
    summarize_condition,
)
from .data import (
    Dataset,
    DatasetSpec,
    VqaSample,
    generate,
    read_container,
    write_container,
)
from .explain import (
    ExplanationMap,
    grad_cam,
    grad_cam_batch,
    random_explanation,
    read_map_csv,
    rise,
    write_map_csv,
)
from .matchers import MatchVariant, coral_loss, match_loss, mmd_loss, mse_loss
from .metrics import (
    MetricReport,
    emd,
    entropy,
    overlap,
    rank_correlation,
    sinkhorn_emd,
)
from .model import (
    FeatureBundle,
    VqaModelConfig,
    answer_logits,
    attend,
    cross_entropy,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import ShapeError, Tensor, backward, grad_check
from .train import (
    RunReport,
    TrainConfig,
    TrainingAbort,
    eta_sweep,
    evaluate,
    run_training,
    split_dataset,
    train_adversarial,
    warm_start,
)

__all__ = [
    "Dataset",
    "DatasetSpec",
    "ExplanationMap",
    "FeatureBundle",
    "MatchVariant",
    "MetricReport",
    "RunReport",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "TrainingAbort",
    "VqaModelConfig",
    "VqaSample",
    "answer_logits",
    "attend",
    "backward",
    "coral_loss",
    "cross_entropy",
    "discriminate_global",
    "discriminate_pixel",
    "emd",
    "entropy",
    "eta_sweep",
    "evaluate",
    "forward",
    "generate",
    "grad_cam",
    "grad_cam_batch",
    "grad_check",
    "init_discriminator_params",
    "init_params",
    "js_divergence",
    "load_checkpoint",
    "match_loss",
    "minimax_losses",
    "mmd_loss",
    "mse_loss",
    "overlap",
    "pearson_chi2",
    "random_explanation",
    "rank_correlation",
    "read_container",
    "read_map_csv",
    "rise",
    "run_training",
    "save_checkpoint",
    "sinkhorn_emd",
    "split_dataset",
    "summarize_condition",
    "train_adversarial",
    "warm_start",
    "write_container",
    "write_map_csv",
]

__version__ = "0.1.0"
