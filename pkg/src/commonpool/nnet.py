"""Layers, graph-network block, Adam, and deterministic checkpoint files.

Parameters live in a ParamTree: a nested dict of name -> Tensor (or sub-dict).
Iteration is always in sorted-key order so that serialization, gradient
collection and optimizer updates line up no matter how the tree was built.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class NonFiniteGradient(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


# -- ParamTree utilities -------------------------------------------------

ParamTree = dict


def leaves(tree: ParamTree, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Flatten to (path, Tensor) pairs in sorted-path order."""
    out = []
    for key in sorted(tree):
        val = tree[key]
        path = f"{prefix}{key}"
        if isinstance(val, dict):
            out.extend(leaves(val, prefix=path + "/"))
        else:
            out.append((path, val))
    return out


def tree_map(fn, tree: ParamTree, *rest: ParamTree) -> ParamTree:
    out = {}
    for key in sorted(tree):
        vals = [t[key] for t in (tree, *rest)]
        out[key] = tree_map(fn, *vals) if isinstance(vals[0], dict) else fn(*vals)
    return out


def grads_of(params: ParamTree) -> ParamTree:
    """Collect .grad for every leaf (zeros where a leaf got no gradient)."""
    return tree_map(lambda t: t.grad if t.grad is not None else np.zeros_like(t.data), params)


def zero_grads(params: ParamTree) -> None:
    for _, t in leaves(params):
        t.grad = None


def detach_tree(params: ParamTree) -> ParamTree:
    """Constant copy for inference: forward passes build no graph."""
    return tree_map(lambda t: Tensor(t.data), params)


def trainable(params: ParamTree) -> ParamTree:
    for _, t in leaves(params):
        t.requires_grad = True
    return params


def n_params(params: ParamTree) -> int:
    return sum(t.data.size for _, t in leaves(params))


# -- initialization ------------------------------------------------------


def init_linear(rng: np.random.Generator, n_in: int, n_out: int) -> ParamTree:
    # fan-in-scaled uniform weights, zero bias
    bound = np.sqrt(1.0 / n_in)
    return {
        "W": Tensor(rng.uniform(-bound, bound, (n_in, n_out)), requires_grad=True),
        "b": Tensor(np.zeros(n_out), requires_grad=True),
    }


def linear(params: ParamTree, x: Tensor) -> Tensor:
    return x @ params["W"] + params["b"]


_ACTS = {"tanh": ad.tanh, "relu": ad.relu, "identity": lambda t: t, "sigmoid": ad.sigmoid}


def fully_connected(params: ParamTree, x: Tensor, activation: str = "identity") -> Tensor:
    return _ACTS[activation](linear(params, x))


def init_stack(rng: np.random.Generator, n_in: int, widths: list[int]) -> ParamTree:
    """A chain of linear layers, keyed layer0, layer1, ... ."""
    tree, fan_in = {}, n_in
    for i, width in enumerate(widths):
        tree[f"layer{i}"] = init_linear(rng, fan_in, width)
        fan_in = width
    return tree


def stack_apply(params: ParamTree, x: Tensor, activations) -> Tensor:
    """Apply layer0..layerN with the given per-layer activation names."""
    n = len(params)
    acts = [activations] * n if isinstance(activations, str) else list(activations)
    if len(acts) != n:
        raise ad.ShapeMismatch(f"{n} layers but {len(acts)} activations")
    for i in range(n):
        x = fully_connected(params[f"layer{i}"], x, acts[i])
    return x


# -- gated recurrent cell ------------------------------------------------


def init_gru(rng: np.random.Generator, n_in: int, n_hidden: int) -> ParamTree:
    tree = {}
    for gate in ("z", "r", "h"):
        tree[f"W{gate}"] = Tensor(rng.uniform(-np.sqrt(1 / n_in), np.sqrt(1 / n_in), (n_in, n_hidden)), requires_grad=True)
        tree[f"U{gate}"] = Tensor(rng.uniform(-np.sqrt(1 / n_hidden), np.sqrt(1 / n_hidden), (n_hidden, n_hidden)), requires_grad=True)
        tree[f"b{gate}"] = Tensor(np.zeros(n_hidden), requires_grad=True)
    return tree


def gru_cell(params: ParamTree, x: Tensor, h: Tensor) -> Tensor:
    """One step of the reset-before-candidate gated recurrent update."""
    if x.shape[-1] != params["Wz"].shape[0] or h.shape[-1] != params["Uz"].shape[0]:
        raise ad.ShapeMismatch(f"gru_cell: x {x.shape}, h {h.shape}")
    z = ad.sigmoid(x @ params["Wz"] + h @ params["Uz"] + params["bz"])
    r = ad.sigmoid(x @ params["Wr"] + h @ params["Ur"] + params["br"])
    cand = ad.tanh(x @ params["Wh"] + (r * h) @ params["Uh"] + params["bh"])
    return (1.0 - z) * h + z * cand


# -- graph-network block -------------------------------------------------


def complete_digraph(p: int) -> tuple[np.ndarray, np.ndarray]:
    """All ordered pairs (s, r), s != r, sorted by (receiver, sender).

    Receiver-major order lets per-node incoming aggregation be a plain
    reshape-and-sum over contiguous rows.
    """
    senders, receivers = [], []
    for r in range(p):
        for s in range(p):
            if s != r:
                senders.append(s)
                receivers.append(r)
    return np.array(senders, dtype=np.intp), np.array(receivers, dtype=np.intp)


@dataclass
class GraphBatch:
    """Fully connected directed graph attributes, optionally batch-leading.

    node_attrs [..., p, d_v]; edge_attrs [..., p*(p-1), d_e] (d_e may be 0);
    global_attrs [..., d_u]; senders/receivers index node rows per edge.
    """

    node_attrs: Tensor
    edge_attrs: Tensor
    global_attrs: Tensor
    senders: np.ndarray
    receivers: np.ndarray

    @classmethod
    def fully_connected(cls, node_attrs, global_attrs, edge_attrs=None):
        nodes = ad.as_tensor(node_attrs)
        glob = ad.as_tensor(global_attrs)
        p = nodes.shape[-2]
        senders, receivers = complete_digraph(p)
        if edge_attrs is None:
            edge_attrs = Tensor(np.zeros(nodes.shape[:-2] + (len(senders), 0)))
        edges = ad.as_tensor(edge_attrs)
        expect = nodes.shape[:-2] + (len(senders),)
        if edges.shape[:-1] != expect:
            raise ad.ShapeMismatch(f"edge_attrs {edges.shape} vs expected {expect + ('*',)}")
        return cls(nodes, edges, glob, senders, receivers)

    @property
    def n_nodes(self) -> int:
        return self.node_attrs.shape[-2]


def _tile_to(t: Tensor, n_rows: int) -> Tensor:
    # [..., d] -> [..., n_rows, d] by broadcasting against constant ones
    d = t.shape[-1]
    expanded = ad.reshape(t, t.shape[:-1] + (1, d))
    return expanded * Tensor(np.ones((n_rows, 1)))


def graph_block(params: ParamTree, g: GraphBatch, *,
                edge_acts="relu", node_acts="relu", global_acts="relu",
                node_update: str = "dense", node_memory: Tensor | None = None):
    """One message-passing step: edges, then nodes, then the global attribute.

    e'_{s,r} = phi_e(e_{s,r}, v_s, v_r, u)
    v'_r     = phi_v(sum_s e'_{s,r}, v_r, u)
    u'       = phi_u(sum e', sum v', u)

    params holds stacks under "edge", "node", "global"; with
    node_update="dense_with_memory", params["node"] = {"gru": ..., "post": ...}
    and the node update runs the recurrent cell on (aggregated, v_r, u) with
    hidden state ``node_memory`` [..., p, n_hidden] before the post stack.
    Returns (GraphBatch, new_node_memory).
    """
    p = g.n_nodes
    n_e = len(g.senders)
    v_s = ad.take(g.node_attrs, g.senders, axis=-2)
    v_r = ad.take(g.node_attrs, g.receivers, axis=-2)
    u_e = _tile_to(g.global_attrs, n_e)
    edge_in = ad.concat([g.edge_attrs, v_s, v_r, u_e], axis=-1)
    edges = stack_apply(params["edge"], edge_in, edge_acts)

    # receiver-major edge order: rows [r*(p-1) : (r+1)*(p-1)] all point at r
    agg_shape = edges.shape[:-2] + (p, p - 1, edges.shape[-1])
    incoming = ad.reshape(edges, agg_shape).sum(axis=-2)
    u_v = _tile_to(g.global_attrs, p)
    node_in = ad.concat([incoming, g.node_attrs, u_v], axis=-1)
    if node_update == "dense":
        nodes = stack_apply(params["node"], node_in, node_acts)
        new_memory = node_memory
    elif node_update == "dense_with_memory":
        if node_memory is None:
            raise ValueError("dense_with_memory requires node_memory")
        new_memory = gru_cell(params["node"]["gru"], node_in, node_memory)
        nodes = stack_apply(params["node"]["post"], new_memory, node_acts)
    else:
        raise ValueError(f"unknown node_update {node_update!r}")

    global_in = ad.concat([edges.sum(axis=-2), nodes.sum(axis=-2), g.global_attrs], axis=-1)
    glob = stack_apply(params["global"], global_in, global_acts)
    out = GraphBatch(nodes, edges, glob, g.senders, g.receivers)
    return out, new_memory


# -- optimizer -----------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Exponentially decayed learning rate with a floor."""

    lr0: float
    lr_min: float = 0.0
    decay_rate: float = 0.0
    steps_per_decay: int = 1000

    def lr_at(self, step: int) -> float:
        lr = self.lr0 * (1.0 - self.decay_rate) ** (step / self.steps_per_decay)
        return max(self.lr_min, lr)


@dataclass
class OptimizerState:
    step: int
    m: ParamTree
    v: ParamTree
    schedule: Schedule
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: ParamTree, schedule: Schedule) -> OptimizerState:
    zeros = lambda: tree_map(lambda t: np.zeros_like(t.data), params)
    return OptimizerState(step=0, m=zeros(), v=zeros(), schedule=schedule)


def adam_step(opt: OptimizerState, params: ParamTree, grads: ParamTree):
    """One adaptive-moment update; returns (new_params, new_opt).

    Raises NonFiniteGradient (leaving params untouched) if any gradient
    entry is NaN or infinite.
    """
    for path, g in leaves(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient at {path}")
    t = opt.step + 1
    lr = opt.schedule.lr_at(opt.step)
    b1, b2, eps = opt.beta1, opt.beta2, opt.eps
    new_m = tree_map(lambda m, g: b1 * m + (1 - b1) * g, opt.m, grads)
    new_v = tree_map(lambda v, g: b2 * v + (1 - b2) * g * g, opt.v, grads)

    def update(p: Tensor, m: np.ndarray, v: np.ndarray) -> Tensor:
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        return Tensor(p.data - lr * m_hat / (np.sqrt(v_hat) + eps), requires_grad=True)

    new_params = tree_map(update, params, new_m, new_v)
    new_opt = replace(opt, step=t, m=new_m, v=new_v)
    return new_params, new_opt


# -- checkpoint container ------------------------------------------------

_MAGIC = b"CKPT1\n"


def _checkpoint_blob(params: ParamTree, meta: dict, opt: OptimizerState | None) -> bytes:
    record = {"meta": dict(meta), "leaves": [], "opt": None}
    arrays: list[np.ndarray] = []
    for path, tensor in leaves(params):
        record["leaves"].append({"path": path, "shape": list(tensor.data.shape)})
        arrays.append(tensor.data)
    if opt is not None:
        record["opt"] = {
            "step": opt.step,
            "schedule": {"lr0": opt.schedule.lr0, "lr_min": opt.schedule.lr_min,
                         "decay_rate": opt.schedule.decay_rate,
                         "steps_per_decay": opt.schedule.steps_per_decay},
            "moments": [],
        }
        for name, tree in (("m", opt.m), ("v", opt.v)):
            for path, arr in leaves(tree):
                record["opt"]["moments"].append({"path": f"{name}/{path}", "shape": list(arr.shape)})
                arrays.append(arr)
    header = json.dumps(record, sort_keys=True, separators=(",", ":")).encode("utf8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return _MAGIC + struct.pack("<Q", len(header)) + header + payload


def save_checkpoint(path, params: ParamTree, meta: dict | None = None,
                    opt: OptimizerState | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(_checkpoint_blob(params, meta or {}, opt))


def checkpoint_digest(params: ParamTree, meta: dict | None = None) -> str:
    import hashlib

    return hashlib.sha256(_checkpoint_blob(params, meta or {}, None)).hexdigest()


def _unflatten(pairs: list[tuple[str, np.ndarray]]) -> ParamTree:
    tree: ParamTree = {}
    for path, arr in pairs:
        node = tree
        *dirs, leaf = path.split("/")
        for d in dirs:
            node = node.setdefault(d, {})
        node[leaf] = arr
    return tree


def load_checkpoint(path, expect_shapes: dict[str, tuple] | None = None):
    """Read a checkpoint; returns (params, meta, opt_or_None).

    ``expect_shapes`` maps leaf paths to shapes declared by the architecture;
    any mismatch (missing leaf, wrong shape) raises CheckpointError.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MAGIC):
        raise CheckpointError("bad magic; not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", blob, len(_MAGIC))
    start = len(_MAGIC) + 8
    record = json.loads(blob[start:start + hlen].decode("utf8"))
    payload = blob[start + hlen:]

    offset = 0

    def pull(shape) -> np.ndarray:
        nonlocal offset
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += n * 8
        return arr.astype(np.float64)

    param_pairs = [(leaf["path"], pull(leaf["shape"])) for leaf in record["leaves"]]
    if expect_shapes is not None:
        got = {p: tuple(a.shape) for p, a in param_pairs}
        if got != {k: tuple(v) for k, v in expect_shapes.items()}:
            missing = set(expect_shapes) - set(got)
            extra = set(got) - set(expect_shapes)
            wrong = {k for k in set(got) & set(expect_shapes)
                     if tuple(got[k]) != tuple(expect_shapes[k])}
            raise CheckpointError(f"shape mismatch: missing={sorted(missing)} "
                                  f"extra={sorted(extra)} wrong={sorted(wrong)}")
    params = _unflatten([(p, a) for p, a in param_pairs])
    params = tree_map(lambda a: Tensor(a, requires_grad=True), params)

    opt = None
    if record.get("opt"):
        rec = record["opt"]
        moment_pairs = [(m["path"], pull(m["shape"])) for m in rec["moments"]]
        both = _unflatten(moment_pairs)
        sched = Schedule(**rec["schedule"])
        opt = OptimizerState(step=rec["step"], m=both.get("m", {}), v=both.get("v", {}),
                             schedule=sched)
    if offset != len(payload):
        raise CheckpointError("payload size does not match declared shapes")
    meta = record.get("meta", {})
    return params, meta, opt


def shapes_of(params: ParamTree) -> dict[str, tuple]:
    return {path: tuple(t.data.shape) for path, t in leaves(params)}
