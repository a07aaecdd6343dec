"""Probabilistic maps from scalar features in [0, 1] to event distributions."""
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

__all__ = ["binary_map", "trig_map", "encode", "encode_image", "EncodedSample"]

MAPS = ("trig", "linear")


def _check_unit_interval(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("features must lie in [0, 1]")
    return x


def binary_map(x):
    """Two-event map ``[1 - x, x]``; works elementwise on arrays (new last axis)."""
    x = _check_unit_interval(x)
    return np.stack([1.0 - x, x], axis=-1)


def trig_map(x, d):
    """Squared trigonometric map onto ``d`` events.

    Entry ``i`` (0-based) is ``C(d-1, i) cos(pi x / 2)^(2(d-1-i)) sin(pi x / 2)^(2i)``,
    a binomial distribution with success probability ``sin^2(pi x / 2)``.
    """
    if int(d) != d or d < 2:
        raise ValueError(f"d must be an integer >= 2, got {d}")
    d = int(d)
    x = _check_unit_interval(x)
    c2 = np.cos(0.5 * np.pi * x)[..., None] ** 2
    s2 = np.sin(0.5 * np.pi * x)[..., None] ** 2
    if d == 2:
        return np.concatenate([c2, s2], axis=-1)
    ones = np.ones_like(c2)
    cpow = np.cumprod(np.concatenate([ones] + [c2] * (d - 1), axis=-1), axis=-1)
    spow = np.cumprod(np.concatenate([ones] + [s2] * (d - 1), axis=-1), axis=-1)
    return comb(d - 1, np.arange(d)) * cpow[..., ::-1] * spow


@dataclass
class EncodedSample:
    """Root distributions of one image, shape (M, d), plus its class label."""

    roots: np.ndarray
    label: int


def encode(pixels, d, feature_map="trig"):
    """Encode an array of features ``(..., M)`` into root distributions ``(..., M, d)``.

    ``feature_map="linear"`` selects the two-event map and requires ``d == 2``.
    """
    if feature_map == "linear":
        if d != 2:
            raise ValueError("the linear map produces exactly two events")
        return binary_map(pixels)
    if feature_map == "trig":
        return trig_map(pixels, d)
    raise ValueError(f"unknown feature map {feature_map!r}; choose from {MAPS}")


def encode_image(pixels, label, d, feature_map="trig"):
    pixels = np.asarray(pixels, dtype=np.float64).ravel()
    return EncodedSample(encode(pixels, d, feature_map), int(label))
