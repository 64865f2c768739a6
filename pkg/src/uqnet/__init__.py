"""Predictive densities for neural-network regression from perturbed data and
target-loss weight ensembles."""

from .datasets import Dataset, SplitSpec, gen_autoconversion_surrogate, gen_simple_regression, split
from .ensemble import (
    EnsembleSpec,
    Toggles,
    WeightEnsemble,
    assemble_pdf,
    build_weight_ensemble,
    compute_target_loss,
    decompose_uncertainty,
    importance_weights,
)
from .model import Network, NetworkArch, TrainConfig, loss, predict, train_early_stop, train_to_target
from .pdf import PredictivePdf, wasserstein1
from .perturb import PerturbedDatasetSet, UncertaintySpec, sample_inputs

__version__ = "0.1.0"
