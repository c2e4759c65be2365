"""Diversity training for ensembles: penalise aligned input gradients across members."""

from .attacks import AttackConfig, run_attack
from .checkpoint import load_checkpoint, save_checkpoint
from .diversity import DivTrainConfig, coherence, divtrain_loss, gal, input_gradients, pairwise_similarities
from .gaas import gaas_evaluate, regular_hadamard
from .models import Ensemble, build_ensemble, ensemble_predict, parse_spec
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "run_attack", "load_checkpoint", "save_checkpoint", "DivTrainConfig", "coherence",
    "divtrain_loss", "gal", "input_gradients", "pairwise_similarities", "gaas_evaluate", "regular_hadamard",
    "Ensemble", "build_ensemble", "ensemble_predict", "parse_spec", "TrainConfig", "train",
]
