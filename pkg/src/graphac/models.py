"""GCN, GIN and PNA encoders built on the autodiff primitives.

All three share the same skeleton: a linear input embedding, ``num_layers``
message-passing layers at ``hidden_dim`` width, then mean-pool readout and a
linear projection to ``output_dim``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import tensor as T
from .errors import DimensionError, SpecValidationError
from .graphs import GraphBatch
from .tensor import Value

ARCHITECTURES = ("GCN", "GIN", "PNA")
AGGREGATORS = ("max", "mean", "sum")
SCALERS = ("identity", "amplification", "attenuation")
ATTENUATION_FLOOR = 1e-6


@dataclass(frozen=True)
class ModelSpec:
    architecture: str = "PNA"
    num_layers: int = 4
    hidden_dim: int = 32
    output_dim: int = 64
    aggregators: tuple | None = None
    scalers: tuple | None = None
    use_edge_features: bool = False
    mlp_depth: int = 2
    init_seed: int = 0

    def __post_init__(self):
        if self.aggregators is not None:
            object.__setattr__(self, "aggregators", tuple(self.aggregators))
        if self.scalers is not None:
            object.__setattr__(self, "scalers", tuple(self.scalers))
        if self.architecture == "PNA":
            if self.aggregators is None:
                object.__setattr__(self, "aggregators", AGGREGATORS)
            if self.scalers is None:
                object.__setattr__(self, "scalers", SCALERS)
        self.validate()

    def validate(self):
        bad = []
        if self.architecture not in ARCHITECTURES:
            bad.append("architecture")
        for name in ("num_layers", "hidden_dim", "output_dim", "mlp_depth"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                bad.append(name)
        if self.architecture == "PNA":
            if not self.aggregators or any(a not in AGGREGATORS for a in self.aggregators) \
                    or len(set(self.aggregators)) != len(self.aggregators):
                bad.append("aggregators")
            if not self.scalers or any(s not in SCALERS for s in self.scalers) \
                    or len(set(self.scalers)) != len(self.scalers):
                bad.append("scalers")
        elif self.architecture in ARCHITECTURES:
            for name in ("aggregators", "scalers", "use_edge_features"):
                if getattr(self, name):
                    bad.append(name)
        if bad:
            raise SpecValidationError(f"invalid ModelSpec fields: {', '.join(bad)}", fields=bad)

    def with_seed(self, seed: int) -> "ModelSpec":
        return replace(self, init_seed=int(seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("aggregators", "scalers"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SpecValidationError(f"unknown ModelSpec keys {sorted(unknown)}", fields=sorted(unknown))
        return cls(**data)


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def aggregate_width(spec: ModelSpec) -> int:
    """Width of the concatenated aggregator x scaler block feeding a PNA update."""
    return len(spec.aggregators) * len(spec.scalers) * spec.hidden_dim


def mlp_forward(x, layers):
    """Stack of (W, b) linear maps, each followed by relu."""
    h = x
    for w, b in layers:
        h = T.relu(T.add(T.matmul(h, w), b))
    return h


def _check_rows(h, batch, name):
    if h.shape[0] != batch.num_nodes:
        raise DimensionError(f"{name}: {h.shape[0]} feature rows for {batch.num_nodes} nodes")


def gcn_layer_forward(h, batch: GraphBatch, weights: dict) -> Value:
    """relu(D^-1/2 (A + I) D^-1/2 h W + b)."""
    h = T.constant(h)
    _check_rows(h, batch, "gcn_layer_forward")
    propagated = T.sparse_matmul(batch.gcn_operator, h)
    out = T.matmul(propagated, weights["W"])
    if "b" in weights:
        out = T.add(out, weights["b"])
    return T.relu(out)


def gin_layer_forward(h, batch: GraphBatch, weights: dict, eps) -> Value:
    """MLP((1 + eps) * h + sum of neighbour states)."""
    h = T.constant(h)
    _check_rows(h, batch, "gin_layer_forward")
    neigh = T.segment_reduce(T.row_slice(h, batch.src_index), batch.incoming, "sum")
    self_term = T.add(h, T.multiply(h, T.constant(eps)))
    return mlp_forward(T.add(self_term, neigh), weights["mlp"])


def degree_scalers(batch: GraphBatch, delta: float) -> dict:
    """Per-node (N x 1) multipliers for each PNA scaler."""
    logd = np.log(batch.in_degree + 1.0)[:, None]
    return {
        "identity": None,
        "amplification": logd / max(delta, ATTENUATION_FLOOR),
        "attenuation": delta / np.maximum(logd, ATTENUATION_FLOOR),
    }


def pna_messages(h, batch: GraphBatch, weights: dict, edge_feat=None) -> Value:
    """MLP(concat(h_src, h_dst[, e])) for every directed edge.

    The first linear map is applied per node and then gathered; this equals
    applying it to the concatenated rows.
    """
    h = T.constant(h)
    (w1, b1), *rest = weights["msg"]
    d = h.shape[1]
    pre = T.add(T.row_slice(T.matmul(h, T.row_slice(w1, slice(0, d))), batch.src_index),
                T.row_slice(T.matmul(h, T.row_slice(w1, slice(d, 2 * d))), batch.dst_index))
    if edge_feat is not None:
        pre = T.add(pre, T.matmul(edge_feat, T.row_slice(w1, slice(2 * d, w1.shape[0]))))
    elif w1.shape[0] != 2 * d:
        raise DimensionError("pna_messages: layer expects edge features but none were given")
    msg = T.relu(T.add(pre, b1))
    return mlp_forward(msg, rest)


def pna_aggregate(messages, batch: GraphBatch, aggregators, scalers, delta: float) -> Value:
    """Concatenate scaler(aggregator(incoming messages)) for every pair, aggregator-major."""
    factors = degree_scalers(batch, delta)
    blocks = []
    for agg in aggregators:
        a = T.segment_reduce(messages, batch.incoming, agg)
        for sc in scalers:
            f = factors[sc]
            blocks.append(a if f is None else T.multiply(a, f))
    return T.concat_columns(blocks)


def pna_layer_forward(h, batch: GraphBatch, weights: dict, aggregators=AGGREGATORS,
                      scalers=SCALERS, delta: float = 1.0, edge_feat=None) -> Value:
    """h + relu(h W_self + block W_agg + b): residual linear update of the aggregate block."""
    h = T.constant(h)
    _check_rows(h, batch, "pna_layer_forward")
    msg = pna_messages(h, batch, weights, edge_feat)
    block = pna_aggregate(msg, batch, aggregators, scalers, delta)
    upd = T.add(T.add(T.matmul(h, weights["W_self"]), T.matmul(block, weights["W_agg"])), weights["b"])
    return T.add(h, T.relu(upd))


def readout(node_emb, batch: GraphBatch, weights: dict | None = None) -> Value:
    """Mean-pool node rows per graph, then (optionally) project linearly."""
    node_emb = T.constant(node_emb)
    _check_rows(node_emb, batch, "readout")
    pooled = T.segment_reduce(node_emb, batch.graph_segments, "mean")
    if weights is None:
        return pooled
    return T.add(T.matmul(pooled, weights["W"]), weights["b"])


class Model:
    """Parameters for one ModelSpec plus the forward pass."""

    def __init__(self, spec: ModelSpec, delta: float, node_dim: int, edge_dim: int | None = None):
        if spec.use_edge_features and not edge_dim:
            raise SpecValidationError("use_edge_features requires edge feature width", ["use_edge_features"])
        self.spec = spec
        self.delta = float(delta)
        self.node_dim = node_dim
        self.edge_dim = edge_dim if spec.use_edge_features else None
        self.parameters: dict[str, Value] = {}
        self._init(np.random.default_rng(spec.init_seed))

    def _param(self, name, data):
        self.parameters[name] = T.parameter(data, name=name)
        return self.parameters[name]

    def _linear(self, rng, name, fan_in, fan_out):
        return (self._param(f"{name}.W", glorot(rng, fan_in, fan_out)),
                self._param(f"{name}.b", np.zeros((1, fan_out))))

    def _init(self, rng):
        s = self.spec
        hd = s.hidden_dim
        self.input = self._linear(rng, "input", self.node_dim, hd)
        self.layers = []
        for k in range(s.num_layers):
            p = f"layer{k}"
            if s.architecture == "GCN":
                w, b = self._linear(rng, p, hd, hd)
                self.layers.append({"W": w, "b": b})
            elif s.architecture == "GIN":
                mlp = [self._linear(rng, f"{p}.mlp{j}", hd, hd) for j in range(s.mlp_depth)]
                eps = self._param(f"{p}.eps", np.zeros((1, 1)))
                self.layers.append({"mlp": mlp, "eps": eps})
            else:
                fan_in = 2 * hd + (self.edge_dim or 0)
                msg = [self._linear(rng, f"{p}.msg0", fan_in, hd)]
                msg += [self._linear(rng, f"{p}.msg{j}", hd, hd) for j in range(1, s.mlp_depth)]
                w_self = self._param(f"{p}.update.W_self", glorot(rng, hd, hd))
                w_agg = self._param(f"{p}.update.W_agg", glorot(rng, aggregate_width(s), hd))
                b = self._param(f"{p}.update.b", np.zeros((1, hd)))
                self.layers.append({"msg": msg, "W_self": w_self, "W_agg": w_agg, "b": b})
        w, b = self._linear(rng, "readout", hd, s.output_dim)
        self.head = {"W": w, "b": b}

    def node_embeddings(self, batch: GraphBatch, node_feat=None) -> Value:
        """Final node states; ``node_feat`` replaces the batch features (e.g. to differentiate them)."""
        x = T.constant(batch.node_feat if node_feat is None else node_feat)
        if x.shape != (batch.num_nodes, self.node_dim):
            raise DimensionError(
                f"node features {x.shape} do not match {batch.num_nodes} nodes x {self.node_dim} inputs")
        s = self.spec
        w, b = self.input
        h = T.add(T.matmul(x, w), b)
        edge_feat = None
        if self.edge_dim:
            if batch.edge_feat is None:
                raise DimensionError("model uses edge features but batch has none")
            edge_feat = T.constant(batch.edge_feat)
        for layer in self.layers:
            if s.architecture == "GCN":
                h = gcn_layer_forward(h, batch, layer)
            elif s.architecture == "GIN":
                h = gin_layer_forward(h, batch, layer, layer["eps"])
            else:
                h = pna_layer_forward(h, batch, layer, s.aggregators, s.scalers, self.delta, edge_feat)
        return h

    def __call__(self, batch: GraphBatch, node_feat=None) -> Value:
        return readout(self.node_embeddings(batch, node_feat), batch, self.head)

    forward = __call__

    def zero_grad(self):
        T.zero_gradients(self.parameters)

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters.values()))


def build_model(spec: ModelSpec, delta: float, node_dim: int, edge_dim: int | None = None) -> Model:
    return Model(spec, delta, node_dim, edge_dim)
