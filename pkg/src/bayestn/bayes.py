"""Bayesian tensors: conditional-probability tables stored as dense arrays.

A Bayesian tensor ``T`` has its out-going axis first, ``T[j, i1, ..., im]``
being the probability of event ``j`` of the out-going set given events
``i1..im`` of the in-going sets. Every out-axis column is a probability
vector. Probability vectors are 1-d arrays with nonnegative entries summing
to one.

Nothing in this module renormalizes implicitly; use :func:`renormalize`
explicitly when a tensor is known to have drifted.
"""
from dataclasses import dataclass

import numpy as np

from .tensor import contract, norm_l1_slices

__all__ = [
    "NORM_TOL",
    "NormalizationError",
    "DegenerateConditioningError",
    "JointDistribution",
    "check_prob_vector",
    "check_bayesian",
    "normalization_residual",
    "renormalize",
    "propagate",
    "contract_pair",
    "joint",
    "invert_direction",
]

NORM_TOL = 1e-10


class NormalizationError(ValueError):
    """A vector or tensor violates positivity or unit-L1 normalization."""


class DegenerateConditioningError(ValueError):
    """Bayes inversion hit a zero denominator.

    ``index`` is the multi-index (over the in-going axes of the inverted
    tensor) whose conditioning event has zero probability.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class JointDistribution:
    """Joint probability table with one labelled axis per event set."""

    table: np.ndarray
    labels: tuple

    def __post_init__(self):
        if self.table.ndim != len(self.labels):
            raise ValueError("one label per axis required")

    def marginal(self, *keep):
        """Sum out every axis whose label is not in ``keep`` (order follows ``keep``)."""
        idx = [self.labels.index(k) for k in keep]
        drop = tuple(a for a in range(self.table.ndim) if a not in idx)
        m = self.table.sum(axis=drop)
        # remaining axes are in ascending original order; permute to ``keep`` order
        remaining = sorted(idx)
        return np.transpose(m, [remaining.index(a) for a in idx])


def check_prob_vector(v, tol=NORM_TOL, name="vector"):
    """Return ``v`` as a float array, raising NormalizationError if it is not a distribution."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise NormalizationError(f"{name} must be a nonempty 1-d array, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise NormalizationError(f"{name} has negative or non-finite entries")
    s = v.sum()
    if abs(s - 1.0) > tol:
        raise NormalizationError(f"{name} sums to {s!r}, not 1")
    return v


def normalization_residual(t):
    """Largest deviation of an out-axis column L1 norm from one."""
    t = np.asarray(t, dtype=np.float64)
    return float(np.max(np.abs(norm_l1_slices(t, 0) - 1.0)))


def check_bayesian(t, tol=NORM_TOL, name="tensor"):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < 1:
        raise NormalizationError(f"{name} must have an out-going axis")
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise NormalizationError(f"{name} has negative or non-finite entries")
    r = normalization_residual(t)
    if r > tol:
        raise NormalizationError(f"{name} out-axis columns deviate from unit L1 norm by {r:.3g}")
    return t


def renormalize(t):
    """Divide every out-axis column by its L1 norm."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    return t / t.sum(axis=0, keepdims=True)


def _check_priors(t, priors):
    priors = [check_prob_vector(p, name=f"prior {k}") for k, p in enumerate(priors)]
    if len(priors) != t.ndim - 1:
        raise ValueError(f"expected {t.ndim - 1} priors, got {len(priors)}")
    for k, p in enumerate(priors):
        if p.shape[0] != t.shape[k + 1]:
            raise ValueError(
                f"prior {k} has dimension {p.shape[0]}, in-going axis has {t.shape[k + 1]}"
            )
    return priors


def propagate(t, priors):
    """Distribution of the out-going set given independent in-going distributions.

    Contracts each in-going axis of ``t`` with its prior (the total probability
    theorem).
    """
    t = np.asarray(t, dtype=np.float64)
    priors = _check_priors(t, priors)
    out = t
    for p in reversed(priors):
        out = out @ p
    return out


def contract_pair(a, b, a_in_axis=0):
    """Feed the out-going set of ``b`` into in-going axis ``a_in_axis`` of ``a``.

    ``a_in_axis`` counts in-going axes only (0 is the first in-going axis,
    i.e. array axis 1). The result has ``a``'s out-going axis, then ``a``'s
    remaining in-going axes, then ``b``'s in-going axes.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not 0 <= a_in_axis < a.ndim - 1:
        raise IndexError(f"a has no in-going axis {a_in_axis}")
    return contract(a, b, [a_in_axis + 1], [0])


def joint(t, priors, labels=None):
    """Joint table ``T[j, i1..im] * prior_1[i1] * ... * prior_m[im]``."""
    t = np.asarray(t, dtype=np.float64)
    priors = _check_priors(t, priors)
    table = t.copy()
    for k, p in enumerate(priors):
        shape = [1] * t.ndim
        shape[k + 1] = p.size
        table = table * p.reshape(shape)
    if labels is None:
        labels = ("out",) + tuple(f"in{k}" for k in range(len(priors)))
    return JointDistribution(table, tuple(labels))


def invert_direction(t, priors, target_axis):
    """Swap the out-going axis with in-going axis ``target_axis`` by Bayes' rule.

    Returns ``(inverted, new_prior)``. ``inverted`` has the old target set as
    its out-going axis (axis 0); its in-going axes are the old out-going set
    followed by the remaining old in-going sets in their original order.
    ``new_prior`` is the marginal distribution of the old out-going set.

    Raises DegenerateConditioningError when some conditioning configuration
    has zero probability.
    """
    t = np.asarray(t, dtype=np.float64)
    priors = _check_priors(t, priors)
    if not 0 <= target_axis < t.ndim - 1:
        raise IndexError(f"tensor has no in-going axis {target_axis}")
    ax = target_axis + 1

    shape = [1] * t.ndim
    shape[ax] = priors[target_axis].size
    num = t * priors[target_axis].reshape(shape)
    den = num.sum(axis=ax, keepdims=True)
    bad = np.argwhere(den <= 0.0)
    if bad.size:
        idx = tuple(int(i) for i in np.delete(bad[0], ax))
        raise DegenerateConditioningError(
            f"zero conditioning probability at (out, other in-going) index {idx}", idx
        )
    inv = num / den
    order = [ax, 0] + [a for a in range(1, t.ndim) if a != ax]
    inverted = np.ascontiguousarray(np.transpose(inv, order))
    new_prior = propagate(t, priors)
    return inverted, new_prior
