"""Hyperbolic neural networks with learnable curvature and sharpness control."""
from .bilevel import BilevelConfig, curvature_grad, run_algorithm1
from .data import Dataset, delta_hyperbolicity, gen_tree_dataset, load_csv
from .estimator import HyperbolicClassifier
from .model import HnnModel, HnnParams
from .poincare import BallPoint, TangentVector
from .sharpness import SharpnessConfig, SharpnessReport, sharpness_report
from .tensor import GradTape, Tensor

__version__ = "0.1.0"

__all__ = [
    "BallPoint",
    "BilevelConfig",
    "Dataset",
    "GradTape",
    "HnnModel",
    "HnnParams",
    "HyperbolicClassifier",
    "SharpnessConfig",
    "SharpnessReport",
    "TangentVector",
    "Tensor",
    "curvature_grad",
    "delta_hyperbolicity",
    "gen_tree_dataset",
    "load_csv",
    "run_algorithm1",
    "sharpness_report",
]
