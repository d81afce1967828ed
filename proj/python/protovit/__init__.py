"""Few-shot image classification with a ViT backbone and prototypical networks."""

from ._protovit import (
    GRADCHECK_TOL,
    Model,
    accuracy_stats,
    compute_prototypes,
    episodic_loss,
    evaluate,
    generate_synthetic,
    gradcheck,
    logits,
    manifest_hash,
    predict,
    preprocess,
    remap_labels,
    sample_episode,
    train,
)

__all__ = [
    "GRADCHECK_TOL",
    "Model",
    "accuracy_stats",
    "compute_prototypes",
    "episodic_loss",
    "evaluate",
    "generate_synthetic",
    "gradcheck",
    "logits",
    "manifest_hash",
    "predict",
    "preprocess",
    "remap_labels",
    "sample_episode",
    "train",
]
