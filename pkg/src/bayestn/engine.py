"""Forward contraction, cross-entropy loss, gradients and optimizers.

The forward pass evaluates one block of same-level node tensors at a time.
For a block of ``n`` nodes with out dimension ``o`` and in-going dimensions
``d1..dk`` the inputs are gathered into ``(n, B, d_j)`` arrays, combined into
their outer product ``P`` of shape ``(n, B, d1*...*dk)`` and multiplied with
``T = Q**2`` reshaped to ``(n, o, d1*...*dk)``. The backward pass reverses
these steps by hand.
"""
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .bayes import check_prob_vector
from .data import Dataset

__all__ = [
    "TrainConfig",
    "GradientSet",
    "EpochRecord",
    "TrainingMetrics",
    "RotationDiagnostics",
    "AdamRenorm",
    "forward",
    "forward_batch",
    "loss",
    "batch_loss",
    "backward",
    "rotation_step",
    "adam_renorm_step",
    "train",
    "evaluate",
    "predict",
]

log = logging.getLogger(__name__)

GRAD_FLOOR = 1e-14
OPTIMIZERS = ("rotation", "adam-renorm")


@dataclass
class TrainConfig:
    """Training hyperparameters. The learning rate of both optimizers is ``tan(theta)``."""

    theta: float = math.atan(1e-3)
    epochs: int = 100
    batch_size: int = 100
    seed: int = 0
    epsilon: float = 1e-12
    optimizer: str = "rotation"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    eval_train: bool = True

    def __post_init__(self):
        if not 0.0 < self.theta < math.pi / 2:
            raise ValueError("theta must lie in (0, pi/2)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    @property
    def learning_rate(self):
        return math.tan(self.theta)


# -- evaluation plan --------------------------------------------------------


class _Plan:
    """Per-block gather instructions derived from the node graph."""

    def __init__(self, net):
        if net.topo_order is None:
            raise ValueError("network contains a directed cycle")
        producer = {n.out_set: k for k, n in enumerate(net.nodes)}
        root_index = {r: k for k, r in enumerate(net.root_sets)}
        self.sources = []
        for b, members in enumerate(net.block_nodes):
            per_axis = []
            for axis in range(len(net.nodes[members[0]].in_sets)):
                names = [net.nodes[k].in_sets[axis] for k in members]
                if all(s in producer for s in names):
                    srcs = {net.node_block[producer[s]] for s in names}
                    slots = np.array([net.node_slot[producer[s]] for s in names])
                    (src,) = srcs
                elif all(s in root_index for s in names):
                    src, slots = -1, np.array([root_index[s] for s in names])
                else:
                    raise ValueError(f"block {b} axis {axis} reads an unknown set")
                if len(set(slots.tolist())) != len(slots):
                    raise ValueError("a set feeds more than one node; not a tree")
                per_axis.append((src, slots))
            self.sources.append(per_axis)
        leaf = producer.get(net.leaf_set)
        if leaf is None:
            raise ValueError(f"no node produces the leaf set {net.leaf_set!r}")
        self.leaf_block, self.leaf_slot = net.node_block[leaf], net.node_slot[leaf]


def _plan(net):
    plan = getattr(net, "_engine_plan", None)
    if plan is None:
        plan = net._engine_plan = _Plan(net)
    return plan


def _outer(vs):
    """Outer product over the last axis of ``(n, B, d_j)`` arrays -> ``(n, B, prod d_j)``."""
    if not vs:
        return None
    p = vs[0]
    for v in vs[1:]:
        p = (p[..., :, None] * v[..., None, :]).reshape(p.shape[0], p.shape[1], -1)
    return p


def _check_roots(net, roots):
    roots = np.asarray(roots, dtype=np.float64)
    if roots.ndim == 2:
        roots = roots[None]
    if roots.ndim != 3 or roots.shape[1] != len(net.root_sets):
        raise ValueError(
            f"expected samples of shape (N, {len(net.root_sets)}, d), got {roots.shape}"
        )
    dims = {net.set_dims[r] for r in net.root_sets}
    if len(dims) == 1 and roots.shape[2] != dims.pop():
        raise ValueError(f"root dimension {roots.shape[2]} does not match the network")
    return roots


def _run_forward(net, roots):
    """Return per-block (inputs, P, outputs) with outputs of shape (n, B, o)."""
    plan = _plan(net)
    r = np.ascontiguousarray(roots.transpose(1, 0, 2))  # (M, B, d)
    outs, cache = [], []
    for b, q in enumerate(net.blocks):
        ins = [r[slots] if src < 0 else outs[src][slots] for src, slots in plan.sources[b]]
        n, o = q.shape[0], q.shape[1]
        t = (q * q).reshape(n, o, -1)
        p = _outer(ins)
        out = np.matmul(p, t.transpose(0, 2, 1))
        outs.append(out)
        cache.append((ins, p, t))
    return plan, outs, cache


def forward_batch(net, roots):
    """Leaf distributions ``(N, n_classes)`` for encoded samples ``(N, n_roots, d)``."""
    roots = _check_roots(net, roots)
    plan, outs, _ = _run_forward(net, roots)
    return outs[plan.leaf_block][plan.leaf_slot]


def forward(net, sample):
    """Leaf distribution of one :class:`EncodedSample` (or ``(n_roots, d)`` array)."""
    roots = getattr(sample, "roots", sample)
    roots = np.asarray(roots, dtype=np.float64)
    for m, v in enumerate(roots):
        check_prob_vector(v, name=f"root {m}")
    return forward_batch(net, roots[None])[0]


def loss(leaf, label, epsilon=1e-12):
    """Cross-entropy ``-ln(max(leaf[label], epsilon))``."""
    leaf = np.asarray(leaf)
    if not 0 <= int(label) < leaf.shape[-1]:
        raise IndexError(f"label {label} out of range for {leaf.shape[-1]} classes")
    return float(-np.log(max(float(leaf[int(label)]), epsilon)))


def batch_loss(leaves, labels, epsilon=1e-12):
    labels = np.asarray(labels)
    p = leaves[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(p, epsilon))))


# -- gradients ----------------------------------------------------------------


class GradientSet:
    """Gradients of the mean batch loss, stored block-wise like the network."""

    def __init__(self, net, blocks):
        self.blocks = blocks
        self._index = list(zip(net.node_block, net.node_slot))

    def __getitem__(self, node_index):
        b, s = self._index[node_index]
        return self.blocks[b][s]

    def __len__(self):
        return len(self._index)

    def __iter__(self):
        return (self[k] for k in range(len(self)))


def _labels_array(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise IndexError("label out of range")
    return labels


def backward(net, batch, labels=None, epsilon=1e-12):
    """Mean cross-entropy over a batch and its gradient w.r.t. every ancillary tensor.

    ``batch`` is either a list of EncodedSample or an ``(N, n_roots, d)`` array
    together with ``labels``. Returns ``(mean_loss, GradientSet)``.
    """
    if labels is None:
        labels = [s.label for s in batch]
        batch = np.stack([np.asarray(s.roots, dtype=np.float64) for s in batch])
    roots = _check_roots(net, batch)
    nb = len(roots)
    if nb == 0:
        raise ValueError("empty batch")
    plan, outs, cache = _run_forward(net, roots)
    leaves = outs[plan.leaf_block][plan.leaf_slot]
    labels = _labels_array(labels, leaves.shape[1])
    p = leaves[np.arange(nb), labels]
    mean_loss = float(np.mean(-np.log(np.maximum(p, epsilon))))

    gouts = [np.zeros_like(o) for o in outs]
    live = p > epsilon
    gouts[plan.leaf_block][plan.leaf_slot, np.arange(nb)[live], labels[live]] = -1.0 / (nb * p[live])

    grads = [None] * len(net.blocks)
    for b in range(len(net.blocks) - 1, -1, -1):
        q = net.blocks[b]
        ins, pmat, t = cache[b]
        g = gouts[b]  # (n, B, o)
        dt = np.matmul(g.transpose(0, 2, 1), pmat)  # (n, o, D)
        grads[b] = 2.0 * q * dt.reshape(q.shape)
        srcs = plan.sources[b]
        if all(src < 0 for src, _ in srcs):
            continue
        dp = np.matmul(g, t).reshape(g.shape[:2] + q.shape[2:])  # (n, B, d1..dk)
        for k, (src, slots) in enumerate(srcs):
            if src < 0:
                continue
            # contract dP against the outer product of every other input
            rest = _outer([v for j, v in enumerate(ins) if j != k])
            if rest is None:
                gouts[src][slots] += dp
                continue
            dk = np.moveaxis(dp, 2 + k, -1).reshape(rest.shape + (ins[k].shape[2],))
            gouts[src][slots] += np.einsum("nbi,nbik->nbk", rest, dk)
    return mean_loss, GradientSet(net, grads)


# -- optimizers ---------------------------------------------------------------


@dataclass
class RotationDiagnostics:
    """Worst-case geometric residuals over all updated slices of one step."""

    updated_slices: int = 0
    skipped_slices: int = 0
    max_orthogonality: float = 0.0  # |sum_j G_j Q_j| for the normalized direction
    max_cos_error: float = 0.0  # |old . new - cos(theta)|
    max_norm_error: float = 0.0  # | |Q_new|_2 - 1 | over all slices


def _check_finite(grads):
    for g in grads.blocks:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient entries")


def rotation_step(net, grads, theta, diagnostics=None):
    """Rotate every unit-norm out-axis slice of every Q by ``theta`` along its gradient.

    Per slice: remove the component of G parallel to Q, normalize the
    remainder, step ``Q - G tan(theta)`` and renormalize. Slices whose
    orthogonal gradient has norm below 1e-14 are left unchanged. Updates
    ``net`` in place and returns it. Pass a :class:`RotationDiagnostics` to
    collect residuals.
    """
    _check_finite(grads)
    tan, cos = math.tan(theta), math.cos(theta)
    for q, g in zip(net.blocks, grads.blocks):
        if q.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {q.shape}")
        # two Gram-Schmidt passes: one leaves a parallel residue of order
        # eps |G| / |G_perp|, which matters when G is nearly parallel to Q
        for _ in range(2):
            g = g - q * (g * q).sum(axis=1, keepdims=True)
        gnorm = np.sqrt((g * g).sum(axis=1, keepdims=True))
        active = gnorm >= GRAD_FLOOR
        g = g / np.where(active, gnorm, 1.0)
        new = q - g * tan
        new = new / np.sqrt((new * new).sum(axis=1, keepdims=True))
        if diagnostics is not None:
            act = active[:, 0]
            diagnostics.updated_slices += int(act.sum())
            diagnostics.skipped_slices += int((~act).sum())
            if act.any():
                orth = np.abs((g * q).sum(axis=1))[act]
                cos_err = np.abs((q * new).sum(axis=1) - cos)[act]
                diagnostics.max_orthogonality = max(diagnostics.max_orthogonality, float(orth.max()))
                diagnostics.max_cos_error = max(diagnostics.max_cos_error, float(cos_err.max()))
        q[...] = np.where(active, new, q)
        if diagnostics is not None:
            nerr = np.abs(np.sqrt((q * q).sum(axis=1)) - 1.0).max()
            diagnostics.max_norm_error = max(diagnostics.max_norm_error, float(nerr))
    return net


class AdamRenorm:
    """Adam on the ancillary tensors followed by out-axis L2 renormalization."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = self.v = None

    def step(self, net, grads):
        _check_finite(grads)
        if self.m is None:
            self.m = [np.zeros_like(q) for q in net.blocks]
            self.v = [np.zeros_like(q) for q in net.blocks]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for q, g, m, v in zip(net.blocks, grads.blocks, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            q -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            q /= np.sqrt((q * q).sum(axis=1, keepdims=True))
        return net


def adam_renorm_step(net, grads, config, state=None):
    """One Adam-then-renormalize update; ``state`` is an :class:`AdamRenorm` carried across steps."""
    if state is None:
        state = AdamRenorm(config.learning_rate, config.beta1, config.beta2, config.eps_adam)
    state.step(net, grads)
    return net


# -- training -------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    train_acc: float
    test_acc: float
    seconds: float


@dataclass
class TrainingMetrics:
    records: list = field(default_factory=list)

    CSV_FIELDS = ("epoch", "mean_loss", "train_acc", "test_acc", "seconds")

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.CSV_FIELDS)
            for r in self.records:
                w.writerow([r.epoch, repr(r.mean_loss), repr(r.train_acc), repr(r.test_acc), f"{r.seconds:.3f}"])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        return cls([
            EpochRecord(int(r["epoch"]), float(r["mean_loss"]), float(r["train_acc"]),
                        float(r["test_acc"]), float(r["seconds"]))
            for r in rows
        ])

    def as_dicts(self):
        return [asdict(r) for r in self.records]


class _Source:
    """Uniform batch access to a Dataset (encoded lazily) or an encoded array pair."""

    def __init__(self, net, data):
        if isinstance(data, Dataset):
            self._images, self.labels = data.images, data.labels
            self._roots = None
        else:
            roots, labels = data
            self._roots = _check_roots(net, roots)
            self._images, self.labels = None, np.asarray(labels, dtype=np.int64)
        self._net = net

    def __len__(self):
        return len(self.labels)

    def roots(self, idx):
        if self._roots is not None:
            return self._roots[idx]
        return self._net.encode(self._images[idx])


def _chunk_size(net):
    widest = max(q.shape[0] * int(np.prod(q.shape[2:])) for q in net.blocks)
    return max(1, min(2000, int(4e6 // widest)))


def predict(net, data):
    """Arg-max class per sample (ties go to the lowest class index)."""
    src = _Source(net, data)
    step = _chunk_size(net)
    preds = []
    for s in range(0, len(src), step):
        idx = np.arange(s, min(s + step, len(src)))
        preds.append(np.argmax(forward_batch(net, src.roots(idx)), axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(net, data):
    """Fraction of samples whose arg-max leaf event equals the label."""
    src = _Source(net, data)
    if len(src) == 0:
        return 0.0
    return float(np.mean(predict(net, data) == src.labels))


def train(net, train_data, config, test_data=None, on_step=None):
    """Mini-batch training; returns ``(best_net, metrics)``.

    Samples are reshuffled every epoch from a generator seeded with
    ``config.seed``. ``best_net`` is a copy of the network at the epoch with the
    highest test accuracy (training accuracy when no test data is given);
    ``net`` itself holds the final state. ``on_step(net, step, diagnostics)``
    is called after every optimizer step; for the rotation optimizer
    ``diagnostics`` is a :class:`RotationDiagnostics`, otherwise None.
    """
    src = _Source(net, train_data)
    if len(src) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    adam = None
    if config.optimizer == "adam-renorm":
        adam = AdamRenorm(config.learning_rate, config.beta1, config.beta2, config.eps_adam)
    metrics = TrainingMetrics()
    best, best_acc = net.copy(), -1.0
    step = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(len(src))
        losses, weights = [], []
        for s in range(0, len(perm), config.batch_size):
            idx = perm[s:s + config.batch_size]
            value, grads = backward(net, src.roots(idx), src.labels[idx], config.epsilon)
            losses.append(value)
            weights.append(len(idx))
            diag = None
            if adam is None:
                diag = RotationDiagnostics() if on_step is not None else None
                rotation_step(net, grads, config.theta, diag)
            else:
                adam.step(net, grads)
            step += 1
            if on_step is not None:
                on_step(net, step, diag)
        train_acc = evaluate(net, train_data) if config.eval_train else float("nan")
        test_acc = evaluate(net, test_data) if test_data is not None else float("nan")
        rec = EpochRecord(epoch, float(np.average(losses, weights=weights)), train_acc,
                          test_acc, time.perf_counter() - t0)
        metrics.records.append(rec)
        log.info("epoch %d loss %.5f train %.4f test %.4f (%.1fs)",
                 epoch, rec.mean_loss, train_acc, test_acc, rec.seconds)
        score = test_acc if test_data is not None else train_acc
        if not score <= best_acc:  # also true for the first nan score
            best, best_acc = net.copy(), score
    return best, metrics
