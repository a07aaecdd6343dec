"""Invariant and oracle checks on random small networks.

:func:`run_checks` draws small tree networks from a seeded generator and
compares the fast engine and inference paths against the brute-force oracle.
Each check returns a :class:`CheckResult`; the suite never raises on a
failed comparison, it reports it.
"""
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import inference, oracle
from .bayes import NORM_TOL, normalization_residual, propagate
from .engine import RotationDiagnostics, backward, forward_batch, rotation_step
from .featuremap import encode
from .network import NetworkSpec, build_tree, load_model, save_model, validate

__all__ = ["CheckSpec", "CheckResult", "FAULTS", "random_network", "random_samples",
           "fd_gradient_error", "run_checks", "format_table"]

# image shapes whose padded grids have at most 6 roots
SMALL_SHAPES = {4: [(2, 2), (1, 1), (2, 1)], 2: [(1, 2), (2, 1), (2, 2), (1, 4), (4, 1), (1, 3)]}
FAULTS = ("normalization", "forward", "gradient")


@dataclass
class CheckSpec:
    n_networks: int = 20
    n_samples: int = 5
    seed: int = 0
    dims: tuple = (2, 3)
    fan_ins: tuple = (4, 2)
    n_classes: int = 3
    fd_step: float = 1e-6
    fault: str = None  # test hook: corrupt one quantity so a check must fail


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""


def random_network(rng, fan_in=None, d=None, chi=None, n_classes=3, policy="random-positive"):
    """A random small tree network (at most 6 roots)."""
    fan_in = fan_in or int(rng.choice([4, 2]))
    d = d or int(rng.choice([2, 3]))
    chi = chi or int(rng.choice([2, 3]))
    shapes = SMALL_SHAPES[fan_in]
    h, w = shapes[rng.integers(len(shapes))]
    spec = NetworkSpec(h, w, d=d, chi=chi, n_classes=n_classes, fan_in=fan_in)
    return build_tree(spec, seed=int(rng.integers(2**31)), policy=policy)


def random_samples(rng, net, n):
    """Random encoded samples ``(n, n_roots, d)`` from uniform pixel features."""
    h, w = net.spec.padded_shape
    pixels = rng.random((n, h * w))
    return encode(pixels, net.spec.d, net.spec.feature_map)


def _rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    mask = np.abs(b) > floor
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a - b)[mask] / np.abs(b)[mask]))


def _oracle_forward(net, roots):
    t, labels = oracle.flatten(net)
    order = [net.root_sets.index(r) for r in labels]
    return np.array([propagate(t, [s[k] for k in order]) for s in roots])


def _inference_errors(net, rng):
    """Max abs difference between inference answers and full-joint answers."""
    priors = [rng.dirichlet(np.ones(net.set_dims[r])) for r in net.root_sets]
    worst = 0.0
    fast = inference.marginals(net, priors)
    slow = oracle.marginals(net, priors)
    for k in fast:
        worst = max(worst, float(np.abs(fast[k] - slow[k]).max()))
    if len(net.root_sets) < 2:
        return worst
    a, b = rng.choice(len(net.root_sets), size=2, replace=False)
    a, b = net.root_sets[a], net.root_sets[b]
    j = int(rng.integers(net.set_dims[b]))
    c = int(rng.integers(net.set_dims[net.leaf_set]))
    for leaf_event in (None, c):
        got = inference.root_conditional(net, priors, a, b, j, leaf_event)
        want = oracle.root_conditional(net, priors, a, b, j, leaf_event)
        worst = max(worst, float(np.abs(got - want).max()))
    pair, cov = inference.class_conditioned_pair(net, priors, a, b, c)
    want_pair, want_cov = oracle.class_conditioned_pair(net, priors, a, b, c)
    worst = max(worst, float(np.abs(pair.table - want_pair).max()), float(np.abs(cov - want_cov).max()))
    return worst


def _leaf_ld(net, qs, roots):
    """Leaf distributions in extended precision by direct recursive contraction."""
    producers = {n.out_set: k for k, n in enumerate(net.nodes)}
    r = np.asarray(roots, dtype=np.longdouble)
    index = {s: m for m, s in enumerate(net.root_sets)}

    def value(s):
        if s in index:
            return r[:, index[s]]
        k = producers[s]
        node = net.nodes[k]
        ops = [qs[k] * qs[k], list(range(1, len(node.in_sets) + 2))]
        for j, c in enumerate(node.in_sets):
            ops += [value(c), [0, j + 2]]
        return np.einsum(*ops, [0, 1])

    return value(net.leaf_set)


def _loss_ld(net, qs, roots, labels):
    p = _leaf_ld(net, qs, roots)[np.arange(len(labels)), labels]
    return np.mean(-np.log(np.maximum(p, np.longdouble(1e-12))))


def fd_gradient_error(net, roots, labels, h=1e-6, fault=None):
    """Max relative error of :func:`backward` against central differences.

    The finite-difference reference is evaluated in ``np.longdouble`` so
    that rounding in the loss does not swamp entries near 1e-8; entries with
    magnitude at or below 1e-8 are excluded.
    """
    _, grads = backward(net, roots, labels)
    qs = [n.q.astype(np.longdouble) for n in net.nodes]
    h = np.longdouble(h)
    worst = 0.0
    for k in range(len(net.nodes)):
        g = grads[k].copy()
        if fault == "gradient" and k == 0:
            g.flat[0] += 1.0
        num = np.zeros(g.shape)
        q = qs[k]
        for idx in np.ndindex(q.shape):
            old = q[idx]
            q[idx] = old + h
            lp = _loss_ld(net, qs, roots, labels)
            q[idx] = old - h
            lm = _loss_ld(net, qs, roots, labels)
            q[idx] = old
            num[idx] = float((lp - lm) / (2 * h))
        worst = max(worst, _rel_err(g, num))
    return worst


def run_checks(spec=None):
    """Run the whole suite; returns a list of :class:`CheckResult`."""
    spec = spec or CheckSpec()
    if spec.fault is not None and spec.fault not in FAULTS:
        raise ValueError(f"unknown fault {spec.fault!r}; choose from {FAULTS}")
    rng = np.random.default_rng(spec.seed)
    worst = {k: 0.0 for k in ("normalization", "forward", "inference", "gradient", "rotation", "roundtrip")}
    invalid = []
    theta = math.atan(1e-3)
    with tempfile.TemporaryDirectory() as tmp:
        for i in range(spec.n_networks):
            fan_in = spec.fan_ins[i % len(spec.fan_ins)]
            d = int(rng.choice(spec.dims))
            chi = int(rng.choice(spec.dims))
            net = random_network(rng, fan_in, d, chi, spec.n_classes)
            if spec.fault == "normalization" and i == 0:
                net.nodes[0].q[(0,) * net.nodes[0].q.ndim] *= 1.5
            report = validate(net)
            if not report.ok:
                invalid.append(f"net {i}: {report.violations[0]}")
            for n in net.nodes:
                worst["normalization"] = max(worst["normalization"], normalization_residual(n.t))

            roots = random_samples(rng, net, spec.n_samples)
            labels = rng.integers(0, spec.n_classes, size=spec.n_samples)
            got = forward_batch(net, roots)
            if spec.fault == "forward" and i == 0:
                got = got + 1e-6
            worst["forward"] = max(worst["forward"], float(np.abs(got - _oracle_forward(net, roots)).max()))
            worst["inference"] = max(worst["inference"], _inference_errors(net, rng))
            worst["gradient"] = max(worst["gradient"],
                                    fd_gradient_error(net, roots, labels, spec.fd_step, spec.fault))

            path = Path(tmp) / f"net{i}.json"
            save_model(net, path)
            back = load_model(path)
            same = all(np.array_equal(a.q, b.q) for a, b in zip(net.nodes, back.nodes))
            worst["roundtrip"] = max(worst["roundtrip"], 0.0 if same else 1.0)

            diag = RotationDiagnostics()
            _, grads = backward(net, roots, labels)
            rotation_step(net, grads, theta, diag)
            worst["rotation"] = max(worst["rotation"], diag.max_orthogonality, diag.max_cos_error,
                                    diag.max_norm_error)

    tol = {"normalization": NORM_TOL, "forward": 1e-12, "inference": 1e-10, "gradient": 1e-5,
           "rotation": 1e-12, "roundtrip": 0.0}
    results = []
    for name in worst:
        ok = worst[name] <= tol[name]
        detail = ""
        if name == "normalization" and invalid:
            ok, detail = False, invalid[0]
        results.append(CheckResult(name, ok, worst[name], tol[name], detail))
    return results


def format_table(results):
    lines = [f"{'check':<14}{'result':<8}{'worst':>12}{'tolerance':>12}"]
    for r in results:
        line = f"{r.name:<14}{'PASS' if r.passed else 'FAIL':<8}{r.worst:>12.3e}{r.tolerance:>12.1e}"
        if r.detail:
            line += f"  {r.detail}"
        lines.append(line)
    return "\n".join(lines)
