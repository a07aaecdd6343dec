"""Tree-structured Bayesian tensor networks.

A :class:`TreeBtn` is a list of :class:`Node` records. Each node owns an
ancillary tensor ``q`` (out-going axis first) whose elementwise square is the
node's Bayesian tensor, and names the event sets on its in-going and
out-going axes. Root sets are the padded image pixels in row-major order;
there is a single leaf set whose dimension is the number of classes.

Node tensors of equal shape on the same tree level are stored stacked in
contiguous blocks so that the engine can process a whole level at once;
``Node.q`` is a view into its block.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bayes import NORM_TOL, normalization_residual
from .featuremap import MAPS, encode

__all__ = [
    "NetworkSpec",
    "Node",
    "TreeBtn",
    "ValidationReport",
    "build_tree",
    "validate",
    "parameter_count",
    "formula_count",
    "init",
    "INIT_POLICIES",
    "save_model",
    "load_model",
    "FORMAT_VERSION",
    "ModelFormatError",
]

FORMAT_VERSION = "bayestn-model/1"
INIT_POLICIES = ("random-positive", "uniform-positive", "random-normal")
LEAF = "leaf"


@dataclass(frozen=True)
class NetworkSpec:
    """Shape of a tree BTN.

    ``fan_in`` 4 merges 2x2 blocks of sets per layer; ``fan_in`` 2 merges
    horizontal pairs and vertical pairs alternately. Images are zero-padded
    to the smallest grid that reduces to a single set.
    """

    image_height: int
    image_width: int
    d: int = 2
    chi: int = 2
    n_classes: int = 10
    fan_in: int = 4
    padding: str = "zero-center"
    feature_map: str = "trig"

    def __post_init__(self):
        for name in ("image_height", "image_width", "d", "chi", "n_classes"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d < 2:
            raise ValueError("d must be >= 2: a root set needs at least two exclusive events")
        if self.fan_in not in (2, 4):
            raise ValueError("fan_in must be 4 (2x2 blocks) or 2 (pairs)")
        if self.padding != "zero-center":
            raise ValueError(f"unknown padding strategy {self.padding!r}")
        if self.feature_map not in MAPS:
            raise ValueError(f"unknown feature map {self.feature_map!r}")
        if self.feature_map == "linear" and self.d != 2:
            raise ValueError("the linear feature map requires d == 2")

    @property
    def M(self):
        return self.image_height * self.image_width

    @property
    def padded_shape(self):
        def up(n):
            return max(2, 1 << (int(n) - 1).bit_length())

        if self.fan_in == 4:
            side = up(max(self.image_height, self.image_width))
            return side, side
        h, w = self.image_height, self.image_width
        # a lone row or column only needs pairing along the other axis
        return (1 if h == 1 and w > 1 else up(h)), (1 if w == 1 and h > 1 else up(w))

    @property
    def n_roots(self):
        h, w = self.padded_shape
        return h * w


@dataclass(eq=False)
class Node:
    """One Bayesian tensor of the network, addressed by (layer, row, column)."""

    coords: tuple
    in_sets: list
    out_set: str
    _block: np.ndarray = field(default=None, repr=False)
    _slot: int = field(default=0, repr=False)

    @property
    def q(self):
        return self._block[self._slot]

    @q.setter
    def q(self, value):
        self._block[self._slot] = value

    @property
    def t(self):
        """The Bayesian tensor ``q**2``."""
        q = self.q
        return q * q


class TreeBtn:
    """A directed tree of Bayesian tensors.

    Parameters
    ----------
    spec : NetworkSpec or None
        Shape metadata. Hand-built test networks may pass None.
    nodes : list of (coords, in_sets, out_set, q)
    root_sets : list of str
        Ordered root set names; sample arrays follow this order.
    set_dims : dict
        Event count of every set.
    leaf_set : str
    """

    def __init__(self, spec, nodes, root_sets, set_dims, leaf_set=LEAF):
        self.spec = spec
        self.root_sets = list(root_sets)
        self.set_dims = dict(set_dims)
        self.leaf_set = leaf_set
        self.nodes = [Node(tuple(c), list(i), o) for c, i, o, _ in nodes]
        qs = [np.asarray(q, dtype=np.float64) for *_, q in nodes]
        self.topo_order = _topological_order(self.nodes)
        self._assign_blocks(qs)

    # -- block layout ---------------------------------------------------

    def _assign_blocks(self, qs):
        producer = {n.out_set: k for k, n in enumerate(self.nodes)}
        root_index = {r: k for k, r in enumerate(self.root_sets)}
        level = {}
        if self.topo_order is None:
            # cyclic graphs can still be validated but not evaluated
            order = list(range(len(self.nodes)))
        else:
            order = self.topo_order
        for k in order:
            deps = [level.get(producer[s], 0) for s in self.nodes[k].in_sets if s in producer]
            level[k] = 1 + max(deps, default=0)
        self.node_block = [None] * len(self.nodes)
        self.node_slot = [None] * len(self.nodes)
        groups, gid = {}, {}
        for k in sorted(order, key=lambda k: (level[k], k)):
            n = self.nodes[k]
            srcs = tuple(
                ("block", self.node_block[producer[s]]) if s in producer
                else ("root", -1) if s in root_index else ("missing", -1)
                for s in n.in_sets
            )
            key = (level[k], qs[k].shape, srcs)
            groups.setdefault(key, []).append(k)
            self.node_block[k] = gid.setdefault(key, len(gid))
            self.node_slot[k] = len(groups[key]) - 1
        self.blocks = []
        self.block_nodes = []
        for members in groups.values():
            block = np.stack([qs[k] for k in members])
            self.blocks.append(block)
            self.block_nodes.append(members)
        for k, n in enumerate(self.nodes):
            n._block = self.blocks[self.node_block[k]]
            n._slot = self.node_slot[k]

    def copy(self):
        return TreeBtn(
            self.spec,
            [(n.coords, n.in_sets, n.out_set, n.q.copy()) for n in self.nodes],
            self.root_sets,
            self.set_dims,
            self.leaf_set,
        )

    def node(self, coords):
        coords = tuple(coords)
        for n in self.nodes:
            if n.coords == coords:
                return n
        raise KeyError(coords)

    def encode(self, images):
        """Pad images ``(N, H, W)`` to the root grid and map them to ``(N, n_roots, d)``."""
        from .data import pad_images

        if self.spec is None:
            raise ValueError("network has no spec; encode samples directly")
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        h, w = self.spec.padded_shape
        padded = pad_images(images, h, w)
        return encode(padded.reshape(len(padded), -1), self.spec.d, self.spec.feature_map)

    def __repr__(self):
        return f"TreeBtn({len(self.nodes)} nodes, {len(self.root_sets)} roots, spec={self.spec})"


def _topological_order(nodes):
    """Kahn's algorithm over producer -> consumer edges; None if a cycle exists."""
    producer = {n.out_set: k for k, n in enumerate(nodes)}
    children = [[producer[s] for s in n.in_sets if s in producer] for n in nodes]
    indeg = [len(c) for c in children]
    consumers = [[] for _ in nodes]
    for k, cs in enumerate(children):
        for c in cs:
            consumers[c].append(k)
    ready = [k for k, deg in enumerate(indeg) if deg == 0]
    order = []
    while ready:
        k = ready.pop(0)
        order.append(k)
        for p in consumers[k]:
            indeg[p] -= 1
            if indeg[p] == 0:
                ready.append(p)
    return order if len(order) == len(nodes) else None


# -- construction ---------------------------------------------------------


def _root_name(r, c):
    return f"x{r},{c}"


def _hidden_name(layer, r, c):
    return f"h{layer}:{r},{c}"


def _layer_plan(spec):
    """Yield (kind, in_grid_shape, out_grid_shape) for each layer."""
    h, w = spec.padded_shape
    plan = []
    horizontal_next = True
    while h * w > 1:
        if spec.fan_in == 4:
            kind, nh, nw = "block", h // 2, w // 2
        elif w > 1 and (horizontal_next or h == 1):
            kind, nh, nw = "horizontal", h, w // 2
            horizontal_next = False
        else:
            kind, nh, nw = "vertical", h // 2, w
            horizontal_next = True
        plan.append((kind, (h, w), (nh, nw)))
        h, w = nh, nw
    return plan


def _children(kind, r, c):
    if kind == "block":
        return [(2 * r, 2 * c), (2 * r, 2 * c + 1), (2 * r + 1, 2 * c), (2 * r + 1, 2 * c + 1)]
    if kind == "horizontal":
        return [(r, 2 * c), (r, 2 * c + 1)]
    return [(2 * r, c), (2 * r + 1, c)]


def build_tree(spec, seed=0, policy="random-positive"):
    """Construct and initialize the tree network described by ``spec``."""
    plan = _layer_plan(spec)
    if not plan:
        raise ValueError("image layout yields no tensors")
    h, w = spec.padded_shape
    root_sets = [_root_name(r, c) for r in range(h) for c in range(w)]
    set_dims = {s: spec.d for s in root_sets}
    names = {(r, c): _root_name(r, c) for r in range(h) for c in range(w)}
    nodes = []
    for layer, (kind, _, (nh, nw)) in enumerate(plan, start=1):
        last = layer == len(plan)
        new_names = {}
        for r in range(nh):
            for c in range(nw):
                ins = [names[rc] for rc in _children(kind, r, c)]
                out = LEAF if last else _hidden_name(layer, r, c)
                out_dim = spec.n_classes if last else spec.chi
                set_dims[out] = out_dim
                shape = (out_dim,) + tuple(set_dims[s] for s in ins)
                nodes.append(((layer, r, c), ins, out, np.ones(shape)))
                new_names[(r, c)] = out
        names = new_names
    net = TreeBtn(spec, nodes, root_sets, set_dims, LEAF)
    return init(net, seed, policy)


def init(net, seed=0, policy="random-positive"):
    """Fill every ancillary tensor per ``policy`` and L2-normalize its out-axis slices.

    Policies: ``random-positive`` draws uniform(0.5, 1.0) entries,
    ``uniform-positive`` sets all entries equal, ``random-normal`` draws
    standard normal entries. Nodes are filled in topological order from a
    single seeded generator. Modifies ``net`` in place and returns it.
    """
    if policy not in INIT_POLICIES:
        raise ValueError(f"unknown init policy {policy!r}; choose from {INIT_POLICIES}")
    rng = np.random.default_rng(seed)
    order = net.topo_order if net.topo_order is not None else range(len(net.nodes))
    for k in order:
        n = net.nodes[k]
        shape = n.q.shape
        if policy == "random-positive":
            q = rng.uniform(0.5, 1.0, size=shape)
        elif policy == "uniform-positive":
            q = np.ones(shape)
        else:
            q = rng.standard_normal(shape)
        n.q = q / np.sqrt((q * q).sum(axis=0, keepdims=True))
    return net


# -- validation -----------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list
    parameter_count: int
    formula_count: object
    notes: list

    @property
    def ok(self):
        return not self.violations

    def __str__(self):
        lines = ["valid" if self.ok else f"{len(self.violations)} violation(s)"]
        lines += [f"  - {v}" for v in self.violations]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def validate(net, tol=NORM_TOL):
    """Check structure and normalization of ``net``; never raises."""
    violations = []
    producers, consumers = {}, {}
    for k, n in enumerate(net.nodes):
        producers.setdefault(n.out_set, []).append(k)
        for s in n.in_sets:
            consumers.setdefault(s, []).append(k)

    roots = set(net.root_sets)
    for s in sorted(set(producers) | set(consumers)):
        p, c = producers.get(s, []), consumers.get(s, [])
        if len(p) > 1:
            violations.append(f"set {s} is out-going for {len(p)} nodes")
        if s in roots:
            if p:
                violations.append(f"root set {s} is produced by node {net.nodes[p[0]].coords}")
            if len(c) != 1:
                violations.append(f"root set {s} is in-going for {len(c)} nodes")
        elif s == net.leaf_set:
            if c:
                violations.append(f"leaf set {s} is in-going for node {net.nodes[c[0]].coords}")
        else:
            if not p:
                violations.append(f"set {s} is in-going but neither produced nor a root")
            if p and len(c) != 1:
                violations.append(f"hidden set {s} is in-going for {len(c)} nodes")
    for r in net.root_sets:
        if r not in consumers:
            violations.append(f"root set {r} is unused")
    if net.leaf_set not in producers:
        violations.append(f"no node produces the leaf set {net.leaf_set}")
    dangling = [s for s in producers if s not in consumers and s != net.leaf_set]
    for s in dangling:
        violations.append(f"set {s} is a second leaf (produced, never consumed)")

    if _topological_order(net.nodes) is None:
        violations.append("directed cycle: following out-going directions revisits a node")
    elif net.topo_order is None or sorted(net.topo_order) != list(range(len(net.nodes))):
        violations.append("topo_order does not visit every node exactly once")

    # connectivity of the undirected node graph
    if net.nodes:
        adj = [set() for _ in net.nodes]
        for s, ps in producers.items():
            for p in ps:
                for c in consumers.get(s, []):
                    adj[p].add(c)
                    adj[c].add(p)
        seen, stack = {0}, [0]
        while stack:
            for m in adj[stack.pop()]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        if len(seen) != len(net.nodes):
            violations.append(f"network is disconnected ({len(net.nodes) - len(seen)} unreachable nodes)")

    for n in net.nodes:
        q = n.q
        want = (net.set_dims.get(n.out_set),) + tuple(net.set_dims.get(s) for s in n.in_sets)
        if q.shape != want:
            violations.append(f"node {n.coords} has shape {q.shape}, sets require {want}")
            continue
        if not np.all(np.isfinite(q)):
            violations.append(f"node {n.coords} has non-finite entries")
            continue
        r = normalization_residual(q * q)
        if r > tol:
            violations.append(f"node {n.coords} violates column normalization by {r:.3g}")

    pc = parameter_count(net)
    fc = formula_count(net.spec) if net.spec is not None else None
    notes = []
    if net.spec is not None:
        notes.append(_count_note(net, pc, fc))
    return ValidationReport(violations, pc, fc, notes)


def _count_note(net, pc, fc):
    spec = net.spec
    upper = sum(1 for n in net.nodes if n.coords[0] > 1 and n.out_set != net.leaf_set)
    k = spec.fan_in
    closed_upper = spec.M / k - 1
    return (
        f"constructed tree has {pc} parameters over {len(net.nodes)} tensors "
        f"({upper} hidden-to-hidden tensors, padded to {spec.padded_shape}); "
        f"closed-form count {fc} assumes M/{k}-1 = {closed_upper:g} upper tensors "
        f"for M = {spec.M}"
    )


def parameter_count(net):
    """Total number of entries of all ancillary tensors."""
    return int(sum(n.q.size for n in net.nodes))


def formula_count(spec):
    """Closed-form parameter complexity of the tree family with ``spec.fan_in``.

    ``d^4 chi M/4 + chi^5 (M/4 - 1) + chi^4 N_c`` for fan-in 4 and
    ``d^2 chi M/2 + chi^3 (M/2 - 1) + chi^2 N_c`` for fan-in 2, using the
    unpadded root count M. Returns an int when the value is integral.
    """
    from fractions import Fraction

    k, d, chi, nc, M = spec.fan_in, spec.d, spec.chi, spec.n_classes, spec.M
    val = (
        Fraction(d**k * chi * M, k)
        + chi ** (k + 1) * (Fraction(M, k) - 1)
        + chi**k * nc
    )
    return int(val) if val.denominator == 1 else float(val)


# -- persistence ------------------------------------------------------------


def _fmt(x):
    return format(float(x), ".17g")


def save_model(net, path):
    """Write ``net`` as JSON; tensor values keep 17 significant digits."""
    if net.spec is None:
        raise ValueError("only spec-built networks can be saved")
    head = json.dumps({"format_version": FORMAT_VERSION, "spec": asdict(net.spec)})
    parts = []
    for k in net.topo_order:
        n = net.nodes[k]
        meta = json.dumps({"coords": list(n.coords), "shape": list(n.q.shape)})
        vals = ",".join(_fmt(v) for v in n.q.ravel())
        parts.append(meta[:-1] + f', "q_values": [{vals}]}}')
    text = head[:-1] + ', "nodes": [\n' + ",\n".join(parts) + "\n]}\n"
    Path(path).write_text(text, encoding="utf-8")


class ModelFormatError(ValueError):
    pass


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: missing or unsupported format_version")
    try:
        spec = NetworkSpec(**doc["spec"])
        net = build_tree(spec, policy="uniform-positive")
        records = doc["nodes"]
        if len(records) != len(net.nodes):
            raise ModelFormatError(f"{path}: expected {len(net.nodes)} nodes, found {len(records)}")
        for rec in records:
            node = net.node(rec["coords"])
            shape = tuple(rec["shape"])
            if shape != node.q.shape:
                raise ModelFormatError(f"{path}: node {rec['coords']} shape {shape} != {node.q.shape}")
            vals = np.asarray(rec["q_values"], dtype=np.float64)
            if vals.size != math.prod(shape):
                raise ModelFormatError(f"{path}: node {rec['coords']} has {vals.size} values")
            node.q = vals.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: schema error: {exc}") from exc
    return net
