"""Declarative layer graphs: schema, conversion, weight transfer, execution.

A :class:`ModelGraph` is an ordered list of typed nodes (the order is the
topological order) with one designated input name and one or more output
node names. Graphs are either 2D or 3D; the converters in this module turn
a 2D graph into an ACS / 2.5D / inflated / random 3D graph node for node,
preserving names so that weights transfer by name.

Model files are JSON documents with the exact field set
{version, dimensionality, nodes, input, outputs}; nodes carry
{name, kind, attrs, inputs}. Unknown fields are rejected. See
docs/model_schema.md for the per-kind attribute tables.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import acs as acs_ops
from . import ops
from .errors import ConfigError, GraphError, OracleSubsetError, ShapeError
from .weightio import WeightStore

MODEL_FILE_VERSION = 1

# ---------------------------------------------------------------------------
# Node schema


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _pos_int(v):
    return _is_int(v) and v >= 1


def _nonneg_int(v):
    return _is_int(v) and v >= 0


def _num(v):
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)


def _bool(v):
    return isinstance(v, bool)


def _triple(pred):
    return lambda v: isinstance(v, tuple) and len(v) == 3 and all(pred(x) for x in v)


_TRANSFER_MODES = ("unsqueeze", "inflate_d", "inflate_h", "inflate_w", "none")

# kind -> (dims, required attrs, optional attrs, input arity); arity -1 = 2+
KIND_SPECS = {
    "conv_kxk": ("2D", {"k": _pos_int, "stride": _pos_int, "padding": _nonneg_int,
                        "dilation": _pos_int, "in_ch": _pos_int, "out_ch": _pos_int,
                        "bias": _bool}, {}, 1),
    "conv_1x1": ("2D", {"in_ch": _pos_int, "out_ch": _pos_int, "bias": _bool}, {}, 1),
    "acs_conv": ("3D", {"k": _pos_int, "stride": _triple(_pos_int), "padding": _triple(_nonneg_int),
                        "dilation": _triple(_pos_int), "in_ch": _pos_int, "out_ch": _pos_int,
                        "bias": _bool}, {}, 1),
    "mean_acs_conv": ("3D", {"k": _pos_int, "stride": _triple(_pos_int), "padding": _triple(_nonneg_int),
                             "dilation": _triple(_pos_int), "in_ch": _pos_int, "out_ch": _pos_int}, {}, 1),
    "soft_acs_conv": ("3D", {"k": _pos_int, "stride": _triple(_pos_int), "padding": _triple(_nonneg_int),
                             "dilation": _triple(_pos_int), "in_ch": _pos_int, "out_ch": _pos_int}, {}, 1),
    "conv3d": ("3D", {"k": _triple(_pos_int), "stride": _triple(_pos_int), "padding": _triple(_nonneg_int),
                      "dilation": _triple(_pos_int), "in_ch": _pos_int, "out_ch": _pos_int,
                      "bias": _bool},
               {"transfer": lambda v: v in _TRANSFER_MODES}, 1),
    "batchnorm": ("both", {"ch": _pos_int, "eps": _num, "momentum": _num}, {}, 1),
    "maxpool": ("both", None, {}, 1),   # dim-dependent, filled below
    "avgpool": ("both", None, {}, 1),
    "relu": ("both", {}, {}, 1),
    "add": ("both", {}, {}, 2),
    "concat": ("both", {}, {}, -1),
    "upsample_nearest": ("both", None, {}, 1),
    "global_avg_pool": ("both", {}, {}, 1),
    "linear": ("both", {"in_features": _pos_int, "out_features": _pos_int, "bias": _bool}, {}, 1),
}

_POOL_ATTRS = {
    "2D": {"k": _pos_int, "stride": _pos_int, "padding": _nonneg_int},
    "3D": {"k": _triple(_pos_int), "stride": _triple(_pos_int), "padding": _triple(_nonneg_int)},
}
_UPSAMPLE_ATTRS = {
    "2D": {"factor": _pos_int},
    "3D": {"factor": _triple(_pos_int)},
}


def _required_attrs(kind, dim):
    if kind in ("maxpool", "avgpool"):
        return _POOL_ATTRS[dim]
    if kind == "upsample_nearest":
        return _UPSAMPLE_ATTRS[dim]
    return KIND_SPECS[kind][1]


def _normalize_attrs(attrs):
    out = {}
    for k, v in attrs.items():
        if isinstance(v, (list, tuple)):
            out[k] = tuple(int(x) for x in v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class LayerNode:
    """One typed layer: unique name, kind, kind-specific attrs, input names."""

    name: str
    kind: str
    attrs: dict = field(default_factory=dict)
    inputs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "attrs", _normalize_attrs(dict(self.attrs)))
        object.__setattr__(self, "inputs", tuple(self.inputs))


def node_param_slots(node):
    """Declared parameter slots and shapes for a node, keyed by slot name."""
    a = node.attrs
    k = node.kind
    slots = {}
    if k == "conv_kxk":
        slots["weight"] = (a["out_ch"], a["in_ch"], a["k"], a["k"])
        if a["bias"]:
            slots["bias"] = (a["out_ch"],)
    elif k == "conv_1x1":
        slots["weight"] = (a["out_ch"], a["in_ch"], 1, 1)
        if a["bias"]:
            slots["bias"] = (a["out_ch"],)
    elif k in ("acs_conv", "mean_acs_conv", "soft_acs_conv"):
        slots["weight"] = (a["out_ch"], a["in_ch"], a["k"], a["k"])
        if k == "acs_conv" and a["bias"]:
            slots["bias"] = (a["out_ch"],)
        if k == "soft_acs_conv":
            slots["logits"] = (3,)
    elif k == "conv3d":
        slots["weight"] = (a["out_ch"], a["in_ch"]) + a["k"]
        if a["bias"]:
            slots["bias"] = (a["out_ch"],)
    elif k == "batchnorm":
        for s in ("gamma", "beta", "running_mean", "running_var"):
            slots[s] = (a["ch"],)
    elif k == "linear":
        slots["weight"] = (a["out_features"], a["in_features"])
        if a["bias"]:
            slots["bias"] = (a["out_features"],)
    return slots


BUFFER_SLOTS = ("running_mean", "running_var")


@dataclass(frozen=True)
class ModelGraph:
    """Acyclic graph of layer nodes; node order is the topological order."""

    dim: str            # "2D" or "3D"
    nodes: tuple
    input: str
    outputs: tuple

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        self._validate()

    def _validate(self):
        if self.dim not in ("2D", "3D"):
            raise GraphError(f"dimensionality must be '2D' or '3D', got {self.dim!r}")
        if not self.input or not isinstance(self.input, str):
            raise GraphError("graph input name must be a non-empty string")
        seen = {self.input}
        names = set()
        for node in self.nodes:
            if not isinstance(node, LayerNode):
                raise GraphError(f"nodes must be LayerNode, got {type(node)}")
            if not node.name:
                raise GraphError("node names must be non-empty")
            if node.name in seen:
                raise GraphError(f"duplicate node name {node.name!r}")
            if node.kind not in KIND_SPECS:
                raise GraphError(f"node {node.name!r}: unknown kind {node.kind!r}")
            dims, _, optional, arity = KIND_SPECS[node.kind]
            if dims != "both" and dims != self.dim:
                raise GraphError(f"node {node.name!r}: kind {node.kind!r} is {dims}-only")
            required = _required_attrs(node.kind, self.dim)
            for key, check in required.items():
                if key not in node.attrs:
                    raise GraphError(f"node {node.name!r}: missing attr {key!r}")
                if not check(node.attrs[key]):
                    raise GraphError(f"node {node.name!r}: bad value for attr {key!r}: {node.attrs[key]!r}")
            for key in node.attrs:
                if key not in required and key not in optional:
                    raise GraphError(f"node {node.name!r}: unknown attr {key!r}")
                if key in optional and not optional[key](node.attrs[key]):
                    raise GraphError(f"node {node.name!r}: bad value for attr {key!r}")
            if arity == -1:
                if len(node.inputs) < 2:
                    raise GraphError(f"node {node.name!r}: {node.kind} needs >= 2 inputs")
            elif len(node.inputs) != arity:
                raise GraphError(f"node {node.name!r}: {node.kind} takes {arity} input(s)")
            for ref in node.inputs:
                if ref not in seen:
                    raise GraphError(f"node {node.name!r}: input {ref!r} not defined before it")
            seen.add(node.name)
            names.add(node.name)
        for out in self.outputs:
            if out not in names:
                raise GraphError(f"output {out!r} is not a node name")

    def node(self, name):
        for n in self.nodes:
            if n.name == name:
                return n
        raise GraphError(f"no node named {name!r}")

    def param_slots(self):
        """All parameter slots as 'node/slot' -> shape, in node order."""
        out = {}
        for node in self.nodes:
            for slot, shape in node_param_slots(node).items():
                out[f"{node.name}/{slot}"] = shape
        return out

    def trainable_slots(self):
        return [k for k in self.param_slots() if k.rsplit("/", 1)[1] not in BUFFER_SLOTS]


# ---------------------------------------------------------------------------
# Model files


def save_model(g, path):
    doc = {
        "version": MODEL_FILE_VERSION,
        "dimensionality": g.dim,
        "nodes": [
            {"name": n.name, "kind": n.kind,
             "attrs": {k: (list(v) if isinstance(v, tuple) else v) for k, v in n.attrs.items()},
             "inputs": list(n.inputs)}
            for n in g.nodes
        ],
        "input": g.input,
        "outputs": list(g.outputs),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise GraphError("model file must hold a JSON object")
    expected = {"version", "dimensionality", "nodes", "input", "outputs"}
    unknown = set(doc) - expected
    if unknown:
        raise GraphError(f"unknown model file fields: {sorted(unknown)}")
    missing = expected - set(doc)
    if missing:
        raise GraphError(f"missing model file fields: {sorted(missing)}")
    if doc["version"] != MODEL_FILE_VERSION:
        raise GraphError(f"unsupported model file version {doc['version']!r}")
    nodes = []
    for i, nd in enumerate(doc["nodes"]):
        if not isinstance(nd, dict):
            raise GraphError(f"node {i}: must be an object")
        nkeys = {"name", "kind", "attrs", "inputs"}
        if set(nd) != nkeys:
            raise GraphError(f"node {i}: fields must be exactly {sorted(nkeys)}, got {sorted(nd)}")
        nodes.append(LayerNode(nd["name"], nd["kind"], nd["attrs"], nd["inputs"]))
    return ModelGraph(doc["dimensionality"], tuple(nodes), doc["input"], tuple(doc["outputs"]))


# ---------------------------------------------------------------------------
# Shape inference


def _conv_cfg(node, dim):
    a = node.attrs
    if node.kind == "conv_kxk":
        return ops.ConvConfig.planar(a["k"], a["in_ch"], a["out_ch"], a["stride"], a["padding"], a["dilation"])
    if node.kind == "conv_1x1":
        return ops.ConvConfig.planar(1, a["in_ch"], a["out_ch"])
    if node.kind == "conv3d":
        return ops.ConvConfig.make(a["k"], a["in_ch"], a["out_ch"], a["stride"], a["padding"], a["dilation"])
    # acs_conv / mean_acs_conv / soft_acs_conv share the cubic reference config
    return ops.ConvConfig.make((a["k"],) * 3, a["in_ch"], a["out_ch"], a["stride"], a["padding"], a["dilation"])


def _node_out_shape(node, dim, in_shapes):
    x = in_shapes[0]
    a = node.attrs
    if node.kind in ("conv_kxk", "conv_1x1", "conv3d", "acs_conv", "mean_acs_conv", "soft_acs_conv"):
        cfg = _conv_cfg(node, dim)
        if x[1] != cfg.in_channels:
            raise ShapeError(f"expected {cfg.in_channels} channels, got {x[1]}")
        return (x[0], cfg.out_channels) + cfg.out_shape(x[2:])
    if node.kind in ("maxpool", "avgpool"):
        k = a["k"] if dim == "3D" else (a["k"],) * 2
        s = a["stride"] if dim == "3D" else (a["stride"],) * 2
        p = a["padding"] if dim == "3D" else (a["padding"],) * 2
        sp = tuple(ops.out_extent(i, kk, ss, pp) for i, kk, ss, pp in zip(x[2:], k, s, p))
        return x[:2] + sp
    if node.kind == "batchnorm":
        if x[1] != a["ch"]:
            raise ShapeError(f"expected {a['ch']} channels, got {x[1]}")
        return x
    if node.kind == "relu":
        return x
    if node.kind == "add":
        if in_shapes[0] != in_shapes[1]:
            raise ShapeError(f"add inputs differ: {in_shapes}")
        return x
    if node.kind == "concat":
        base = x[:1] + x[2:]
        for s in in_shapes:
            if s[:1] + s[2:] != base:
                raise ShapeError(f"concat inputs differ off-channel: {in_shapes}")
        return (x[0], sum(s[1] for s in in_shapes)) + x[2:]
    if node.kind == "upsample_nearest":
        f = a["factor"] if dim == "3D" else (a["factor"],) * 2
        return x[:2] + tuple(e * ff for e, ff in zip(x[2:], f))
    if node.kind == "global_avg_pool":
        return x[:2]
    if node.kind == "linear":
        if len(x) != 2 or x[1] != a["in_features"]:
            raise ShapeError(f"linear expects (N, {a['in_features']}), got {x}")
        return (x[0], a["out_features"])
    raise GraphError(f"unhandled kind {node.kind!r}")


def infer_shapes(g, input_shape):
    """Propagate the input shape through the graph; errors name the node."""
    rank = 4 if g.dim == "2D" else 5
    if len(input_shape) != rank:
        raise ShapeError(f"{g.dim} graph expects rank-{rank} input, got {tuple(input_shape)}")
    shapes = {g.input: tuple(int(v) for v in input_shape)}
    for node in g.nodes:
        try:
            shapes[node.name] = _node_out_shape(node, g.dim, [shapes[i] for i in node.inputs])
        except (ShapeError, ConfigError) as exc:
            raise GraphError(f"node {node.name!r}: {exc}") from exc
    return shapes


# ---------------------------------------------------------------------------
# Execution


@dataclass
class GraphRun:
    """Forward results: every node's output, the tape, and any batch-norm
    running-stat updates produced in train mode."""

    outputs: dict
    tape: list
    stat_updates: dict


def _get_param(params, node, slot):
    key = f"{node.name}/{slot}"
    if key not in params:
        raise GraphError(f"node {node.name!r}: missing parameter {key!r}")
    return params[key]


def _node_forward(node, dim, xs, params, mode, stat_updates):
    a = node.attrs
    k = node.kind
    x = xs[0]
    if k in ("conv_kxk", "conv_1x1", "conv3d"):
        w = _get_param(params, node, "weight")
        b = _get_param(params, node, "bias") if a["bias"] else None
        cfg = _conv_cfg(node, dim)
        return ops.conv(x, w, b, cfg), (x, w, b, cfg)
    if k == "acs_conv":
        w = _get_param(params, node, "weight")
        b = _get_param(params, node, "bias") if a["bias"] else None
        kern = acs_ops.AcsKernel(w, acs_ops.split_channels(a["out_ch"]), b)
        cfg = _conv_cfg(node, dim)
        return acs_ops.acs_conv(x, kern, cfg), (x, kern, cfg)
    if k == "mean_acs_conv":
        w = _get_param(params, node, "weight")
        cfg = _conv_cfg(node, dim)
        return acs_ops.mean_acs_conv(x, w, cfg), (x, w, cfg)
    if k == "soft_acs_conv":
        w = _get_param(params, node, "weight")
        soft = acs_ops.SoftWeights(_get_param(params, node, "logits"))
        cfg = _conv_cfg(node, dim)
        return acs_ops.soft_acs_conv(x, w, soft, cfg), (x, w, soft, cfg)
    if k in ("maxpool", "avgpool"):
        mode3 = "max" if k == "maxpool" else "avg"
        if dim == "2D":
            y, cache = ops.pool3d(x[:, :, None], mode3, (1, a["k"], a["k"]),
                                  (1, a["stride"], a["stride"]), (0, a["padding"], a["padding"]))
            return y[:, :, 0], ("2d", cache)
        y, cache = ops.pool3d(x, mode3, a["k"], a["stride"], a["padding"])
        return y, ("3d", cache)
    if k == "batchnorm":
        gamma = _get_param(params, node, "gamma")
        beta = _get_param(params, node, "beta")
        rm = _get_param(params, node, "running_mean")
        rv = _get_param(params, node, "running_var")
        y, new_rm, new_rv, cache = ops.batchnorm(x, gamma, beta, rm, rv, a["eps"], a["momentum"], mode)
        if mode == "train":
            stat_updates[f"{node.name}/running_mean"] = new_rm
            stat_updates[f"{node.name}/running_var"] = new_rv
        return y, cache
    if k == "relu":
        y, mask = ops.relu(x)
        return y, mask
    if k == "add":
        return ops.add(xs[0], xs[1]), None
    if k == "concat":
        return ops.concat_channels(xs), tuple(s.shape[1] for s in xs)
    if k == "upsample_nearest":
        f = a["factor"] if dim == "3D" else (a["factor"],) * 2
        return ops.upsample_nearest(x, f), f
    if k == "global_avg_pool":
        return ops.global_avg_pool(x), x.shape
    if k == "linear":
        w = _get_param(params, node, "weight")
        b = _get_param(params, node, "bias") if a["bias"] else None
        return ops.linear(x, w, b), (x, w)
    raise GraphError(f"unhandled kind {k!r}")


def forward_graph(g, params, x, mode="eval"):
    """Execute the graph topologically; the tape supports a full backward."""
    if mode not in ("train", "eval"):
        raise GraphError(f"mode must be 'train' or 'eval', got {mode!r}")
    infer_shapes(g, x.shape)  # shape errors surface with node names up front
    values = {g.input: x}
    tape = []
    stat_updates = {}
    for node in g.nodes:
        xs = [values[i] for i in node.inputs]
        try:
            y, cache = _node_forward(node, g.dim, xs, params, mode, stat_updates)
        except (ShapeError, ConfigError) as exc:
            raise GraphError(f"node {node.name!r}: {exc}") from exc
        values[node.name] = y
        tape.append((node, cache))
    return GraphRun(outputs=values, tape=tape, stat_updates=stat_updates)


def _node_backward(node, dim, cache, gout):
    """Returns (input grads list, param grads dict)."""
    a = node.attrs
    k = node.kind
    if k in ("conv_kxk", "conv_1x1", "conv3d"):
        x, w, b, cfg = cache
        gx, gw, gb = ops.conv_backward(x, w, cfg, gout)
        grads = {"weight": gw}
        if a["bias"]:
            grads["bias"] = gb
        return [gx], grads
    if k == "acs_conv":
        x, kern, cfg = cache
        gx, gw2d, gb = acs_ops.acs_conv_backward(x, kern, cfg, gout)
        grads = {"weight": gw2d}
        if a["bias"]:
            grads["bias"] = gb
        return [gx], grads
    if k == "mean_acs_conv":
        x, w, cfg = cache
        gx, gw2d = acs_ops.mean_acs_conv_backward(x, w, cfg, gout)
        return [gx], {"weight": gw2d}
    if k == "soft_acs_conv":
        x, w, soft, cfg = cache
        gx, gw2d, glog = acs_ops.soft_acs_conv_backward(x, w, soft, cfg, gout)
        return [gx], {"weight": gw2d, "logits": glog}
    if k in ("maxpool", "avgpool"):
        tag, pcache = cache
        if tag == "2d":
            gx = ops.pool3d_backward(pcache, gout[:, :, None])[:, :, 0]
        else:
            gx = ops.pool3d_backward(pcache, gout)
        return [gx], {}
    if k == "batchnorm":
        gx, ggamma, gbeta = ops.batchnorm_backward(cache, gout)
        return [gx], {"gamma": ggamma, "beta": gbeta}
    if k == "relu":
        return [ops.relu_backward(cache, gout)], {}
    if k == "add":
        return [gout, gout.copy()], {}
    if k == "concat":
        return ops.concat_channels_backward(gout, cache), {}
    if k == "upsample_nearest":
        return [ops.upsample_nearest_backward(gout, cache)], {}
    if k == "global_avg_pool":
        return [ops.global_avg_pool_backward(gout, cache)], {}
    if k == "linear":
        x, w = cache
        gx, gw, gb = ops.linear_backward(x, w, gout)
        grads = {"weight": gw}
        if a["bias"]:
            grads["bias"] = gb
        return [gx], grads
    raise GraphError(f"unhandled kind {k!r}")


def backward_graph(g, run, grad_outputs):
    """Reverse-mode accumulation over a completed forward run.

    ``grad_outputs`` maps node names to output gradients. Returns
    (param_grads keyed 'node/slot', grad wrt the graph input or None).
    """
    grads = dict(grad_outputs)
    param_grads = {}
    for node, cache in reversed(run.tape):
        gout = grads.pop(node.name, None)
        if gout is None:
            continue
        in_grads, p_grads = _node_backward(node, g.dim, cache, gout)
        for slot, val in p_grads.items():
            param_grads[f"{node.name}/{slot}"] = val
        for ref, gi in zip(node.inputs, in_grads):
            if ref in grads:
                grads[ref] = grads[ref] + gi
            else:
                grads[ref] = gi
    return param_grads, grads.get(g.input)


# ---------------------------------------------------------------------------
# Initialization


def _init_slot(rng, node, slot, shape, dtype):
    """Uniform Kaiming-style fan-in init for weights; fixed values otherwise."""
    if slot == "weight" and node.kind != "batchnorm":
        if node.kind == "linear":
            fan_in = shape[1]
        else:
            fan_in = int(np.prod(shape[1:]))
        bound = float(np.sqrt(6.0 / fan_in))
        return rng.uniform(-bound, bound, size=shape).astype(dtype)
    if slot == "gamma" or slot == "running_var":
        return np.ones(shape, dtype=dtype)
    # bias, beta, running_mean, logits
    return np.zeros(shape, dtype=dtype)


def init_params(g, seed=0, dtype=np.float32):
    """Fresh parameter store for a graph; deterministic in the seed."""
    rng = np.random.default_rng(seed)
    store = WeightStore()
    for node in g.nodes:
        for slot, shape in node_param_slots(node).items():
            store[f"{node.name}/{slot}"] = _init_slot(rng, node, slot, shape, dtype)
    return store


# ---------------------------------------------------------------------------
# 2D -> 3D conversion


def _lift_pad(k3, p):
    """Reference padding per axis: p where the kernel has extent > 1, else 0.

    Zero-padding an axis the kernel actually spans would shrink it and break
    shape-preserving ("same") nets, so only unit-extent axes get 0.
    """
    return tuple(p if ke > 1 else 0 for ke in k3)


def convert_graph(g, mode, pool_depth="one", depth_stride=False, i3d_axis="d"):
    """Node-for-node conversion of a 2D graph into a 3D one.

    mode: "acs" (split-kernel view convolution), "p25d" (Conv3D 1xKxK),
    "i3d" (Conv3D KxKxK initialized by repeat-and-normalize on transfer),
    or "conv3d_random" (Conv3D KxKxK, randomly initialized on transfer).

    pool_depth: "one" keeps depth resolution (1xKxK pooling, upsampling
    (1,f,f)); "k" pools and upsamples depth like the plane axes.
    depth_stride lifts conv strides to (s, s, s) instead of (1, s, s).
    """
    if g.dim != "2D":
        raise GraphError(f"convert_graph expects a 2D graph, got {g.dim}")
    if mode not in ("acs", "p25d", "i3d", "conv3d_random"):
        raise GraphError(f"unknown conversion mode {mode!r}")
    if pool_depth not in ("one", "k"):
        raise GraphError(f"pool_depth must be 'one' or 'k', got {pool_depth!r}")
    if i3d_axis not in ("d", "h", "w"):
        raise GraphError(f"i3d_axis must be one of 'd', 'h', 'w', got {i3d_axis!r}")

    nodes = []
    for node in g.nodes:
        a = node.attrs
        if node.kind == "conv_kxk":
            k = a["k"]
            s3 = (a["stride"],) * 3 if depth_stride else (1, a["stride"], a["stride"])
            d3 = (a["dilation"],) * 3
            if mode == "acs":
                attrs = {"k": k, "stride": s3, "padding": _lift_pad((k, k, k), a["padding"]),
                         "dilation": d3, "in_ch": a["in_ch"], "out_ch": a["out_ch"], "bias": a["bias"]}
                nodes.append(LayerNode(node.name, "acs_conv", attrs, node.inputs))
            elif mode == "p25d":
                k3 = (1, k, k)
                attrs = {"k": k3, "stride": s3, "padding": _lift_pad(k3, a["padding"]),
                         "dilation": (1, a["dilation"], a["dilation"]),
                         "in_ch": a["in_ch"], "out_ch": a["out_ch"], "bias": a["bias"],
                         "transfer": "unsqueeze"}
                nodes.append(LayerNode(node.name, "conv3d", attrs, node.inputs))
            else:
                k3 = (k, k, k)
                attrs = {"k": k3, "stride": s3, "padding": _lift_pad(k3, a["padding"]),
                         "dilation": d3, "in_ch": a["in_ch"], "out_ch": a["out_ch"], "bias": a["bias"],
                         "transfer": f"inflate_{i3d_axis}" if mode == "i3d" else "none"}
                nodes.append(LayerNode(node.name, "conv3d", attrs, node.inputs))
        elif node.kind == "conv_1x1":
            attrs = {"k": (1, 1, 1), "stride": (1, 1, 1), "padding": (0, 0, 0), "dilation": (1, 1, 1),
                     "in_ch": a["in_ch"], "out_ch": a["out_ch"], "bias": a["bias"],
                     "transfer": "unsqueeze"}
            nodes.append(LayerNode(node.name, "conv3d", attrs, node.inputs))
        elif node.kind in ("maxpool", "avgpool"):
            kd = a["k"] if pool_depth == "k" else 1
            sd = a["stride"] if pool_depth == "k" else 1
            pd = a["padding"] if pool_depth == "k" else 0
            attrs = {"k": (kd, a["k"], a["k"]), "stride": (sd, a["stride"], a["stride"]),
                     "padding": (pd, a["padding"], a["padding"])}
            nodes.append(LayerNode(node.name, node.kind, attrs, node.inputs))
        elif node.kind == "upsample_nearest":
            fd = a["factor"] if pool_depth == "k" else 1
            nodes.append(LayerNode(node.name, node.kind,
                                   {"factor": (fd, a["factor"], a["factor"])}, node.inputs))
        elif node.kind in ("batchnorm", "relu", "add", "concat", "global_avg_pool", "linear"):
            nodes.append(LayerNode(node.name, node.kind, a, node.inputs))
        else:
            raise GraphError(f"node {node.name!r}: cannot convert kind {node.kind!r}")
    return ModelGraph("3D", tuple(nodes), g.input, g.outputs)


# ---------------------------------------------------------------------------
# Weight transfer


def _normalize_scope(scope):
    if scope in ("whole", "whole_network"):
        return ("whole", None)
    if isinstance(scope, str) and scope.startswith("prefix="):
        return ("prefix", scope[len("prefix="):])
    if isinstance(scope, (tuple, list)) and len(scope) == 2 and scope[0] == "prefix":
        return ("prefix", scope[1])
    raise GraphError(f"scope must be 'whole' or ('prefix', <name prefix>), got {scope!r}")


def _transfer_conv3d_weight(node, src):
    k3 = node.attrs["k"]
    rule = node.attrs.get("transfer")
    if rule is None:
        unit = [i for i, e in enumerate(k3) if e == 1]
        rule = "unsqueeze" if len(unit) >= 1 else "none"
    if rule == "none":
        return None
    if rule == "unsqueeze":
        planar = [i for i, e in enumerate(k3) if e > 1]
        if k3 == (1, 1, 1):
            expected = (node.attrs["out_ch"], node.attrs["in_ch"], 1, 1)
            if src.shape != expected:
                raise GraphError(f"node {node.name!r}: 2D kernel {src.shape} != {expected}")
            return src.reshape(src.shape[:2] + (1, 1, 1)).copy()
        if len(planar) != 2:
            raise GraphError(f"node {node.name!r}: cannot unsqueeze into kernel {k3}")
        expected = (node.attrs["out_ch"], node.attrs["in_ch"], k3[planar[0]], k3[planar[1]])
        if src.shape != expected:
            raise GraphError(f"node {node.name!r}: 2D kernel {src.shape} != {expected}")
        unit = ({0, 1, 2} - set(planar)).pop()
        return np.expand_dims(src, axis=2 + unit).copy()
    axis = {"inflate_d": 0, "inflate_h": 1, "inflate_w": 2}[rule]
    k = k3[axis]
    expected = (node.attrs["out_ch"], node.attrs["in_ch"], k, k)
    if src.shape != expected or len(set(k3)) != 1:
        raise GraphError(f"node {node.name!r}: cannot inflate {src.shape} into kernel {k3}")
    return (np.repeat(np.expand_dims(src, axis=2 + axis), k, axis=2 + axis) / k).astype(src.dtype)


def transfer_weights(store2d, g3d, scope="whole", seed=0, dtype=np.float32):
    """Load 2D weights into a converted 3D graph's parameter store.

    In-scope slots (all of them for 'whole', name-prefix matches otherwise)
    must exist in the 2D store with a rule-compatible shape: ACS kernels
    copy the 2D kernel unchanged, unit-axis 3D kernels receive it
    unsqueezed, inflated kernels repeat it K times along the marked axis and
    divide by K, and everything else copies verbatim. No other rescaling is
    applied. Out-of-scope slots (and randomly initialized cubic kernels) get
    the seeded fan-in initializer. The source store is never modified.
    """
    kind, prefix = _normalize_scope(scope)
    rng = np.random.default_rng(seed)
    out = WeightStore()
    for node in g3d.nodes:
        in_scope = kind == "whole" or node.name.startswith(prefix)
        for slot, shape in node_param_slots(node).items():
            key = f"{node.name}/{slot}"
            if not in_scope or slot == "logits":
                out[key] = _init_slot(rng, node, slot, shape, dtype)
                continue
            transferred = None
            if node.kind == "conv3d" and slot == "weight":
                if key not in store2d:
                    raise GraphError(f"missing 2D entry for in-scope slot {key!r}")
                transferred = _transfer_conv3d_weight(node, store2d[key])
                if transferred is None:  # randomly initialized cubic kernel
                    out[key] = _init_slot(rng, node, slot, shape, dtype)
                    continue
            else:
                if key not in store2d:
                    raise GraphError(f"missing 2D entry for in-scope slot {key!r}")
                src = store2d[key]
                if node.kind in ("acs_conv", "mean_acs_conv", "soft_acs_conv") and slot == "weight":
                    if src.shape != shape:
                        raise GraphError(f"{key}: 2D kernel {src.shape} != {shape}")
                    transferred = src.copy()
                else:
                    if src.shape != shape:
                        raise GraphError(f"{key}: 2D entry shape {src.shape} != {shape}")
                    transferred = src.copy()
            if transferred.shape != shape:
                raise GraphError(f"{key}: transferred shape {transferred.shape} != {shape}")
            out[key] = transferred.astype(dtype) if transferred.dtype != dtype else transferred
    return out


# ---------------------------------------------------------------------------
# Block-sparse embedding oracle


def embed_block_sparse(kernel, cfg, input_extents=None):
    """Embed an ACS kernel into a dense, block-sparse KxKxK 3D kernel.

    For each view the 2D plane lands at the single unit-axis index that
    reproduces the view convolution's alignment. Without ``input_extents``
    the unit-axis strides must all be 1 (the index is then independent of
    the input size); with extents the exact index is computed per view, and
    configurations where no single index reproduces the view padding and
    trimming raise :class:`OracleSubsetError`. Intended as a test oracle
    for :func:`acs3d.acs.acs_conv`, which is the normative definition.
    """
    k = kernel.k
    acs_ops._check_acs_cfg(cfg, k)
    if input_extents is None and any(s != 1 for s in cfg.stride):
        raise OracleSubsetError(
            f"stride {cfg.stride}: without input extents the oracle covers unit strides only"
        )
    if input_extents is not None:
        ref = cfg.out_shape(tuple(input_extents))
    indices = {}
    for name in acs_ops.VIEWS:
        unit = acs_ops.UNIT_AXIS[name]
        p = cfg.padding[unit][0]
        d = cfg.dilation[unit]
        if input_extents is None:
            t = 2 * p - d * (k - 1)
        else:
            t = (ref[unit] - 1) * cfg.stride[unit] + 1 - int(input_extents[unit])
        b = t // 2
        num = p - b
        if num % d != 0 or not (0 <= num // d < k):
            raise OracleSubsetError(
                f"view {name!r}: no kernel index reproduces the unit-axis alignment "
                f"(p={p}, d={d}, T={t})"
            )
        indices[name] = num // d
    ca, cc, cs = kernel.split
    w = kernel.w2d
    dense = np.zeros((kernel.out_channels, kernel.in_channels, k, k, k), dtype=w.dtype)
    dense[:ca, :, :, :, indices["a"]] = w[:ca]
    dense[ca : ca + cc, :, :, indices["c"], :] = w[ca : ca + cc]
    dense[ca + cc :, :, indices["s"], :, :] = w[ca + cc :]
    return dense
