"""Exponential-cost reference computations for small networks.

Everything here enumerates full tables: :func:`flatten` contracts a whole
tree into one Bayesian tensor over all root sets, :func:`full_joint` and
:func:`joint_all_sets` build explicit joint distributions. Intended for tests
and acceptance checks only; a hard size cap guards against accidental use at
scale.
"""
import numpy as np

from .bayes import JointDistribution, joint
from .tensor import contract

__all__ = [
    "DEFAULT_CAP",
    "OracleSizeError",
    "flatten",
    "full_joint",
    "joint_all_sets",
    "marginals",
    "root_conditional",
    "class_conditioned_pair",
]

DEFAULT_CAP = 2**16


class OracleSizeError(RuntimeError):
    pass


def _producers(net):
    return {n.out_set: n for n in net.nodes}


def _flatten_set(net, out_set, producers):
    """Tensor (out_set, roots in its subtree...) and the matching root labels."""
    node = producers[out_set]
    t = node.q * node.q
    labels = list(node.in_sets)
    for s in node.in_sets:
        if s in producers:
            sub, sub_labels = _flatten_set(net, s, producers)
            pos = labels.index(s) + 1
            t = contract(t, sub, [pos], [0])
            labels.remove(s)
            labels += sub_labels
    return t, labels


def flatten(net, upto=None, cap=DEFAULT_CAP):
    """Contract every hidden set below ``upto`` (default: the leaf set).

    Returns ``(tensor, root_labels)``; axis 0 of ``tensor`` is ``upto`` and the
    remaining axes follow ``net.root_sets`` order restricted to the subtree.
    """
    upto = net.leaf_set if upto is None else upto
    producers = _producers(net)
    if upto not in producers:
        raise KeyError(f"no node produces set {upto!r}")
    size = 1
    for r in net.root_sets:
        size *= net.set_dims[r]
    if size > cap:
        raise OracleSizeError(f"root configuration count {size} exceeds cap {cap}")
    t, labels = _flatten_set(net, upto, producers)
    order = sorted(range(len(labels)), key=lambda k: net.root_sets.index(labels[k]))
    t = np.transpose(t, [0] + [k + 1 for k in order])
    return np.ascontiguousarray(t), [labels[k] for k in order]


def full_joint(net, priors, cap=DEFAULT_CAP):
    """Joint distribution over the leaf set and all root sets (leaf axis first)."""
    t, labels = flatten(net, cap=cap)
    pri = [priors[net.root_sets.index(r)] for r in labels]
    return joint(t, pri, labels=[net.leaf_set] + labels)


def joint_all_sets(net, priors, cap=DEFAULT_CAP):
    """Joint distribution over every set in the network, by one big einsum."""
    sets = list(net.root_sets) + [n.out_set for n in net.nodes]
    size = 1
    for s in sets:
        size *= net.set_dims[s]
    if size > cap or len(sets) > 52:
        raise OracleSizeError(f"joint over {len(sets)} sets has {size} entries (cap {cap})")
    label = {s: k for k, s in enumerate(sets)}
    ops = []
    for r, p in zip(net.root_sets, priors):
        ops += [np.asarray(p, dtype=np.float64), [label[r]]]
    for n in net.nodes:
        ops += [n.q * n.q, [label[n.out_set]] + [label[s] for s in n.in_sets]]
    table = np.einsum(*ops, list(range(len(sets))))
    return JointDistribution(table, tuple(sets))


def marginals(net, priors, cap=DEFAULT_CAP):
    j = joint_all_sets(net, priors, cap)
    return {n.out_set: j.marginal(n.out_set) for n in net.nodes}


def root_conditional(net, priors, target, evidence_root, event, leaf_event=None, cap=DEFAULT_CAP):
    """P(target | evidence_root = event [, leaf = leaf_event]) by summing the full joint."""
    j = full_joint(net, priors, cap)
    if leaf_event is None:
        m = j.marginal(target, evidence_root)[:, event]
    else:
        m = j.marginal(target, evidence_root, net.leaf_set)[:, event, leaf_event]
    return m / m.sum()


def class_conditioned_pair(net, priors, a, b, label, cap=DEFAULT_CAP):
    j = full_joint(net, priors, cap)
    m = j.marginal(a, b, net.leaf_set)[:, :, label]
    pair = m / m.sum()
    cov = pair - np.outer(pair.sum(axis=1), pair.sum(axis=0))
    return pair, cov
