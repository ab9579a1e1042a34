"""Dual adversarial training on numpy: autodiff core, spectral tools, attacks and trainers."""

from .attacks import AttackConfig, eaeg, fgsm, pgd
from .errors import ConfigurationError, ContractError, DatkError, FormatError, NumericalError
from .experiments import (
    SyntheticSpec,
    Theorem1Task,
    build_eval_splits,
    evaluate_accuracy,
    make_synthetic_dataset,
    motivation_experiment,
    theorem1_experiment,
)
from .models import AagNet, AmplitudeScale, SmallConvNet
from .spectral import dft_decompose, idft_recombine, mix_amplitudes
from .trainer import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "AagNet",
    "AmplitudeScale",
    "AttackConfig",
    "ConfigurationError",
    "ContractError",
    "DatkError",
    "FormatError",
    "NumericalError",
    "SmallConvNet",
    "SyntheticSpec",
    "Theorem1Task",
    "TrainConfig",
    "TrainResult",
    "build_eval_splits",
    "dft_decompose",
    "eaeg",
    "evaluate_accuracy",
    "fgsm",
    "idft_recombine",
    "make_synthetic_dataset",
    "mix_amplitudes",
    "motivation_experiment",
    "pgd",
    "theorem1_experiment",
    "train",
]
