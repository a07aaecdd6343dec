"""Probabilistic queries on a trained tree BTN.

Queries that involve a pair of root sets first contract the network into a
small Bayesian tensor that keeps only the queried roots open (every other
root is summed against its prior) and then apply Bayes inversion once to that
tensor. In a tree the off-path subtrees are independent of the path, so this
is exact.
"""
from dataclasses import dataclass, field

import numpy as np

from .bayes import (
    DegenerateConditioningError,
    JointDistribution,
    check_prob_vector,
    invert_direction,
    propagate,
)
from .tensor import contract

__all__ = [
    "Query",
    "uniform_priors",
    "marginals",
    "reduced_tensor",
    "root_conditional",
    "class_conditioned_pair",
    "path_length",
    "covariance_decay_probe",
    "run_query",
]


def uniform_priors(net):
    return [np.full(net.set_dims[r], 1.0 / net.set_dims[r]) for r in net.root_sets]


def _priors(net, priors):
    if priors is None:
        return uniform_priors(net)
    if len(priors) != len(net.root_sets):
        raise ValueError(f"expected {len(net.root_sets)} priors, got {len(priors)}")
    return [check_prob_vector(p, name=f"prior of {r}") for p, r in zip(priors, net.root_sets)]


def marginals(net, priors=None):
    """Distribution of every hidden set and the leaf set, propagated in topological order."""
    priors = _priors(net, priors)
    dist = dict(zip(net.root_sets, priors))
    for k in net.topo_order:
        n = net.nodes[k]
        dist[n.out_set] = propagate(n.t, [dist[s] for s in n.in_sets])
    return {n.out_set: dist[n.out_set] for n in net.nodes}


def reduced_tensor(net, priors, open_roots, upto=None):
    """Conditional tensor ``P(upto | open_roots)`` with every other root marginalized.

    Axis 0 is ``upto`` (default: the leaf set); the remaining axes follow
    ``open_roots``. Every open root must lie in the subtree of ``upto``.
    """
    priors = _priors(net, priors)
    upto = net.leaf_set if upto is None else upto
    prior_of = dict(zip(net.root_sets, priors))
    producers = {n.out_set: n for n in net.nodes}
    marg = marginals(net, priors)
    open_roots = list(open_roots)

    def below(s):
        if s in prior_of:
            return {s}
        return set().union(*(below(c) for c in producers[s].in_sets))

    def reduce(s):
        node = producers[s]
        t = node.t
        # sum out closed inputs from the last axis backwards so positions stay valid
        for axis in range(len(node.in_sets) - 1, -1, -1):
            c = node.in_sets[axis]
            if not below(c) & set(open_roots):
                v = prior_of[c] if c in prior_of else marg[c]
                t = np.moveaxis(t, 1 + axis, -1) @ v
        labels = [c for c in node.in_sets if below(c) & set(open_roots)]
        for c in list(labels):
            if c in producers:
                sub, sub_labels = reduce(c)
                t = contract(t, sub, [1 + labels.index(c)], [0])
                labels.remove(c)
                labels += sub_labels
        return t, labels

    missing = set(open_roots) - below(upto)
    if missing:
        raise ValueError(f"roots {sorted(missing)} do not feed set {upto!r}")
    t, labels = reduce(upto)
    return np.transpose(t, [0] + [1 + labels.index(r) for r in open_roots])


def _lowest_common_set(net, a, b):
    consumer = {}
    for n in net.nodes:
        for s in n.in_sets:
            consumer[s] = n.out_set

    def chain(s):
        out = []
        while s in consumer:
            s = consumer[s]
            out.append(s)
        return out

    up_b = set(chain(b))
    for s in chain(a):
        if s in up_b:
            return s
    raise ValueError(f"roots {a} and {b} share no downstream set")


def root_conditional(net, priors, target, evidence_root, event, leaf_event=None):
    """``P(target | evidence_root = event)``, optionally also given ``leaf = leaf_event``.

    Without leaf evidence the path is contracted up to the lowest set shared
    by both roots, ``z``; with leaf evidence up to the leaf. The tensor
    ``P(z | target, evidence)`` is inverted towards ``target`` and combined
    with ``P(z | evidence = event)``.
    """
    priors = _priors(net, priors)
    if target == evidence_root:
        raise ValueError("target and evidence must be different root sets")
    pa = priors[net.root_sets.index(target)]
    pb = priors[net.root_sets.index(evidence_root)]
    if pb[event] <= 0.0:
        raise DegenerateConditioningError(f"evidence {evidence_root}={event} has zero probability", (event,))
    upto = net.leaf_set if leaf_event is not None else _lowest_common_set(net, target, evidence_root)
    e = reduced_tensor(net, priors, [target, evidence_root], upto)[:, :, event]  # P(z | a, b=j)
    if leaf_event is not None:
        inverted, _ = invert_direction(e[leaf_event:leaf_event + 1], [pa], 0)
        return inverted[:, 0]
    pz = propagate(e, [pa])  # P(z | b=j)
    live = pz > 0.0
    inverted, _ = invert_direction(e[live], [pa], 0)  # P(a | z, b=j)
    return inverted @ pz[live]


def class_conditioned_pair(net, priors, a, b, label):
    """Joint ``P(a, b | leaf = label)`` and its covariance matrix.

    ``cov[p, q] = P(a=p, b=q | label) - P(a=p | label) P(b=q | label)``.
    """
    priors = _priors(net, priors)
    if a == b:
        raise ValueError("need two distinct root sets")
    pa = priors[net.root_sets.index(a)]
    pb = priors[net.root_sets.index(b)]
    e = reduced_tensor(net, priors, [a, b])  # P(y | a, b)
    da, db = e.shape[1], e.shape[2]
    row = e[label:label + 1].reshape(1, da * db)
    try:
        inverted, _ = invert_direction(row, [np.outer(pa, pb).ravel()], 0)
    except DegenerateConditioningError as exc:
        raise DegenerateConditioningError(f"class {label} has zero probability", (label,)) from exc
    pair = inverted[:, 0].reshape(da, db)
    cov = pair - np.outer(pair.sum(axis=1), pair.sum(axis=0))
    return JointDistribution(pair, (a, b)), cov


def path_length(net, a, b):
    """Number of tensors on the tree path joining sets ``a`` and ``b``."""
    consumer = {}
    for n in net.nodes:
        for s in n.in_sets:
            consumer[s] = n.out_set

    def chain(s):
        out = [s]
        while s in consumer:
            s = consumer[s]
            out.append(s)
        return out

    ca, cb = chain(a), chain(b)
    common = next(s for s in ca if s in cb)
    return ca.index(common) + cb.index(common) - 1


def covariance_decay_probe(net, priors=None, label=0, pairs=None, n_pairs=50, seed=0):
    """Covariance magnitude between root pairs against their tree path length.

    Returns a list of ``(a, b, path_length, frobenius_norm_of_covariance)``.
    Exploratory only: it records numbers, it asserts nothing.
    """
    if pairs is None:
        rng = np.random.default_rng(seed)
        roots = net.root_sets
        pairs = []
        while len(pairs) < n_pairs:
            i, j = rng.choice(len(roots), size=2, replace=False)
            pairs.append((roots[i], roots[j]))
    out = []
    for a, b in pairs:
        _, cov = class_conditioned_pair(net, priors, a, b, label)
        out.append((a, b, path_length(net, a, b), float(np.linalg.norm(cov))))
    return out


@dataclass
class Query:
    """A query against a network.

    ``kind`` is ``marginals``, ``root_conditional`` or ``class_pair``.
    ``evidence`` holds ``(set, event_index)`` pairs; a ``(root, vector)`` pair
    replaces that root's prior instead.
    """

    kind: str
    target: str = None
    evidence: list = field(default_factory=list)
    priors: list = None
    pair: tuple = None
    label: int = None

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict) or "type" not in doc:
            raise ValueError("query must be a JSON object with a 'type' field")
        return cls(
            kind=doc["type"],
            target=doc.get("target"),
            evidence=[tuple(e) for e in doc.get("evidence", [])],
            priors=doc.get("priors"),
            pair=tuple(doc["pair"]) if "pair" in doc else None,
            label=doc.get("class"),
        )


def run_query(net, query):
    """Evaluate a :class:`Query`; returns a JSON-ready dict."""
    priors = _priors(net, query.priors)
    hard = []
    for s, e in query.evidence:
        if isinstance(e, (list, tuple, np.ndarray)):
            if s not in net.root_sets:
                raise ValueError(f"soft evidence only applies to root sets, got {s!r}")
            priors[net.root_sets.index(s)] = check_prob_vector(e, name=f"evidence on {s}")
        else:
            hard.append((s, int(e)))
    if query.kind == "marginals":
        m = marginals(net, priors)
        return {"query": "marginals", "distribution": {k: v.tolist() for k, v in m.items()}}
    if query.kind == "root_conditional":
        roots = [(s, e) for s, e in hard if s in net.root_sets]
        leaf = [e for s, e in hard if s == net.leaf_set]
        if len(roots) != 1 or len(leaf) > 1 or len(roots) + len(leaf) != len(hard):
            raise ValueError("root_conditional needs one root event and at most one leaf event")
        (b, j), c = roots[0], (leaf[0] if leaf else None)
        dist = root_conditional(net, priors, query.target, b, j, c)
        return {"query": "root_conditional", "target": query.target,
                "evidence": hard, "distribution": dist.tolist()}
    if query.kind == "class_pair":
        a, b = query.pair
        pair, cov = class_conditioned_pair(net, priors, a, b, query.label)
        return {"query": "class_pair", "pair": [a, b], "class": query.label,
                "matrix": pair.table.tolist(), "covariance": cov.tolist()}
    raise ValueError(f"unknown query type {query.kind!r}")
