"""Differentiable connection pruning with binary Gumbel-Softmax gates."""

from .baseline import RandomMaskSpec, random_mask, train_fixed_mask
from .data import Dataset, SyntheticSpec, gen_synthetic, load_csv, load_idx, split
from .gates import GateParams, GateSample, gumbel_noise, hard_gate_st, sample_gates, soft_gate
from .interpret import (
    ancestors_of_output,
    extract_pathways,
    importance_heatmap,
    input_output_importance,
    layer_importance,
    pattern_probe,
    symmetry_signatures,
)
from .network import (
    GatedNetwork,
    LayerSpec,
    backward,
    deterministic_gates,
    effective_density,
    forward,
    init_network,
    mlp_specs,
)
from .rng import Rng
from .training import (
    NumericAbort,
    PrunedNetwork,
    TrainConfig,
    TrainReport,
    evaluate,
    finalize,
    fit,
    temperature_at,
    total_loss,
)

__version__ = "0.1.0"

__all__ = [
    "RandomMaskSpec",
    "random_mask",
    "train_fixed_mask",
    "Dataset",
    "SyntheticSpec",
    "gen_synthetic",
    "load_csv",
    "load_idx",
    "split",
    "GateParams",
    "GateSample",
    "gumbel_noise",
    "hard_gate_st",
    "sample_gates",
    "soft_gate",
    "ancestors_of_output",
    "extract_pathways",
    "importance_heatmap",
    "input_output_importance",
    "layer_importance",
    "pattern_probe",
    "symmetry_signatures",
    "GatedNetwork",
    "LayerSpec",
    "backward",
    "deterministic_gates",
    "effective_density",
    "forward",
    "init_network",
    "mlp_specs",
    "Rng",
    "NumericAbort",
    "PrunedNetwork",
    "TrainConfig",
    "TrainReport",
    "evaluate",
    "finalize",
    "fit",
    "temperature_at",
    "total_loss",
]
