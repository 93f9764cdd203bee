"""
Veil
Adversarial training of a convolutional base that keeps emotion information and
removes face identity information, with the leakage-probe evaluation protocol.

Licensed under the MIT License (see LICENSE for details)
"""

from .errors import (VeilError, DimensionError, ConfigError, ProtocolError, DivergenceError, DatasetError,
                     DependencyError, GradientError)
from .config import ModelConfig, TrainConfig, EarlyStopConfig, SyntheticConfig, AugmentConfig, RunConfig

__version__ = '0.1.0'
