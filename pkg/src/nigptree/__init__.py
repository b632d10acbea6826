"""NIGP-Tree: multi-class sparse GP classification over a tree of binary
Polya-Gamma nodes, with a noisy-input correction of the predictive variance."""
from .data import FeatureDataset, load_features, save_features, split, split_sequential, synth_blobs
from .denoise import DenoiseResult, denoise
from .estimator import NIGPTreeClassifier
from .kernels import RBF, DimensionError, PoweredRBF, SumRBF, make_kernel
from .metrics import Metrics, compute_metrics
from .model_io import ModelFile, load_model, save_model
from .pg_node import NoiseModel, PGNode
from .tree import ClassTree, TrainConfig, build_tree, predict, train

__version__ = "0.1.0"

__all__ = [
    "ClassTree", "DenoiseResult", "DimensionError", "FeatureDataset", "Metrics", "ModelFile",
    "NIGPTreeClassifier", "NoiseModel", "PGNode", "PoweredRBF", "RBF", "SumRBF", "TrainConfig",
    "build_tree", "compute_metrics", "denoise", "load_features", "load_model", "make_kernel",
    "predict", "save_features", "save_model", "split", "split_sequential", "synth_blobs", "train",
]
