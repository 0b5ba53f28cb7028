"""Cross-modal image segmentation with unpaired translation and compositional
von Mises-Fisher kernel activations."""

from .data import (
    DatasetManifest,
    Domain,
    FoldSplit,
    Image,
    Mask,
    load_dataset,
    make_folds,
    normalize_intensity,
    synthesize_toy_dataset,
)
from .metrics import aggregate, assd, dsc, largest_component
from .segmentation import SegmentationHead, dice_loss, seg_training_loss
from .training import Mode, TrainConfig, build_state, load_checkpoint, run_cross_validation, save_checkpoint, train_step, validate
from .translation import TranslationNets, build_translation_nets, cycle_loss, disc_loss, gen_loss
from .vmf import KernelBank, activations, cluster_loss, normalize_features, renormalize_kernels

__version__ = "0.1.0"

__all__ = [
    "DatasetManifest",
    "Domain",
    "FoldSplit",
    "Image",
    "KernelBank",
    "Mask",
    "Mode",
    "SegmentationHead",
    "TrainConfig",
    "TranslationNets",
    "activations",
    "aggregate",
    "assd",
    "build_state",
    "build_translation_nets",
    "cluster_loss",
    "cycle_loss",
    "dice_loss",
    "disc_loss",
    "dsc",
    "gen_loss",
    "largest_component",
    "load_checkpoint",
    "load_dataset",
    "make_folds",
    "normalize_features",
    "normalize_intensity",
    "renormalize_kernels",
    "run_cross_validation",
    "save_checkpoint",
    "seg_training_loss",
    "synthesize_toy_dataset",
    "train_step",
    "validate",
    "__version__",
]
