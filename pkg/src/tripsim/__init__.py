"""Desk-scale federated domain-generalization simulator.

Token-level prompt-expert routing built from capacity-constrained clustering,
optimal one-to-one transport against static orthogonal keys, KL-debiased
local prompt training, and FedAvg aggregation, over a frozen synthetic proxy
of a vision-language encoder pair.
"""
from .assignment import brute_force, hungarian, total_cost
from .clustering import CapacityConfig, ClusterResult, assignment_cost, cluster
from .config import AblationFlags, ConfigError, ExperimentConfig, preset
from .data import (DomainSpec, GeneratorConfig, Sample, generate,
                   leave_one_out, load_fixture, save_fixture)
from .federation import aggregate, evaluate, local_train, run
from .linalg import Rng, StaticKeySet, cosine, init_keys, normalize
from .model import (AdamW, FrozenTextHead, LossBreakdown, adamw_step,
                    gradients, image_feature, loss, predict, text_features,
                    zero_shot_reference)
from .report import RunReport, emit_report
from .routing import MixtureWeights, RoutedPrompt, build_cost, route

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "AdamW", "CapacityConfig", "ClusterResult", "ConfigError",
    "DomainSpec", "ExperimentConfig", "FrozenTextHead", "GeneratorConfig",
    "LossBreakdown", "MixtureWeights", "Rng", "RoutedPrompt", "RunReport",
    "Sample", "StaticKeySet", "adamw_step", "aggregate", "assignment_cost",
    "brute_force", "build_cost", "cluster", "cosine", "emit_report",
    "evaluate", "generate", "gradients", "hungarian", "image_feature",
    "init_keys", "leave_one_out", "load_fixture", "local_train", "loss",
    "normalize", "predict", "preset", "route", "run", "save_fixture",
    "text_features", "total_cost", "zero_shot_reference",
]
