from ._base import GaussianPrediction, Normalizer
from .adm import AnyStepDynamicsModel
from .baselines import BootstrapRNNModel, EnsembleDynamicsModel

__all__ = ["AnyStepDynamicsModel", "BootstrapRNNModel", "EnsembleDynamicsModel", "GaussianPrediction",
           "Normalizer"]
