"""Singular Value Representation (SVR) of neural-network weights.

Each layer's (flattened) weight matrix is factored by SVD; its singular
triplets become spectral neurons, and consecutive layers are linked by
adjacency matrices compared against a rescaled chi-square null model.
"""

from .dims import InternalDims, block_noise_experiment, color_intensity, cumulative_matrix, internal_dims
from .estimators import BiasFreeMLPClassifier, SingularValueRepresentation
from .flow import ActivationTrace, edge_similarity, forward, spectral_activations, spectral_images
from .linalg import SvdFactors, conv2d, flatten_conv, flatten_conv_co, skew_expm, svd
from .prune import (
    BlockPartition,
    equivalence_check,
    kernel_blocks,
    prunable_neurons,
    prune_to_internal_dims,
    truncate_layer,
)
from .spectra import (
    AdjacencyMatrix,
    SpectralNeuron,
    SvrGraph,
    build_svr,
    conv_adjacency,
    cross_adjacency,
    effective_filters,
    fc_adjacency,
    threshold_edges,
)
from .stats import NullModel, analytic_moments, chi2_cdf, chi2_quantile, ks_distance, validate_moments
from .tensorio import LayerSpec, ModelSpec, WeightStore, load_idx, load_model, save_model
from .trainer import TrainConfig, train_mlp, width_experiment

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

__all__ = [
    "ActivationTrace",
    "AdjacencyMatrix",
    "analytic_moments",
    "BiasFreeMLPClassifier",
    "block_noise_experiment",
    "BlockPartition",
    "build_svr",
    "chi2_cdf",
    "chi2_quantile",
    "color_intensity",
    "conv2d",
    "conv_adjacency",
    "cross_adjacency",
    "cumulative_matrix",
    "edge_similarity",
    "effective_filters",
    "equivalence_check",
    "fc_adjacency",
    "flatten_conv",
    "flatten_conv_co",
    "forward",
    "internal_dims",
    "InternalDims",
    "kernel_blocks",
    "ks_distance",
    "LayerSpec",
    "load_idx",
    "load_model",
    "ModelSpec",
    "NullModel",
    "prunable_neurons",
    "prune_to_internal_dims",
    "save_model",
    "SingularValueRepresentation",
    "skew_expm",
    "spectral_activations",
    "spectral_images",
    "SpectralNeuron",
    "svd",
    "SvdFactors",
    "SvrGraph",
    "threshold_edges",
    "train_mlp",
    "TrainConfig",
    "truncate_layer",
    "validate_moments",
    "WeightStore",
    "width_experiment",
]
