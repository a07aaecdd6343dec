"""Bayesian tensor networks: tree-shaped networks of conditional probability tables.

The submodules build on each other: ``tensor`` (dense contraction),
``bayes`` (Bayesian tensors and their algebra), ``featuremap`` (pixel
encodings), ``network`` (tree construction and persistence), ``engine``
(forward pass, gradients, optimizers, training), ``inference`` (queries),
``oracle`` (brute-force references) and ``data`` (dataset loading).
"""
__version__ = "0.1.0"

from .bayes import (
    DegenerateConditioningError,
    JointDistribution,
    NormalizationError,
    invert_direction,
    joint,
    propagate,
)
from .data import Dataset, load_split
from .engine import TrainConfig, evaluate, forward, forward_batch, train
from .featuremap import binary_map, encode, trig_map
from .network import NetworkSpec, build_tree, formula_count, load_model, parameter_count, save_model, validate
