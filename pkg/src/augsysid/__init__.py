"""Encoder initialisation for augmented nonlinear state-space models."""
from .augmented import AugmentedModel, TrainConfig, train
from .core import IoDataset, LtiSS, RngStream, StackedWindow, make_window, observability_rank
from .encoder_init import (InitMethod, init_ann_pretrain, init_lls, init_model_based,
                           init_random_encoder, simulate_baseline)
from .linearize import find_equilibrium, init_from_linearization, jacobians
from .lti import (ReconstructabilityMaps, build_stacked, left_inverse, noiseless_maps, noisy_maps,
                  reconstruct, shift_to_past_window)
from .msd import MsdModel, MsdParams, SimConfig, make_datasets

__version__ = "0.1.0"

__all__ = [
    "AugmentedModel", "TrainConfig", "train", "IoDataset", "LtiSS", "RngStream", "StackedWindow",
    "make_window", "observability_rank", "InitMethod", "init_ann_pretrain", "init_lls",
    "init_model_based", "init_random_encoder", "simulate_baseline", "find_equilibrium",
    "init_from_linearization", "jacobians", "ReconstructabilityMaps", "build_stacked", "left_inverse",
    "noiseless_maps", "noisy_maps", "reconstruct", "shift_to_past_window", "MsdModel", "MsdParams",
    "SimConfig", "make_datasets",
]
