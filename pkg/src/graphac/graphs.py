"""Attributed graphs, JSON-lines I/O, disjoint-union batching and a synthetic generator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DimensionError, GraphParseError, GraphValidationError
from .tensor import RowIndex, Segments

RECORD_KEYS = {"num_nodes", "node_feat", "edges", "edge_feat"}


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph.

    ``pairs`` holds each undirected edge once; message passing uses the
    mirrored directed view in :attr:`edges`, where directed edge ``2k`` is
    ``pairs[k]`` and ``2k + 1`` its reverse. ``pair_feat`` (optional) has one
    row per undirected pair and is mirrored the same way.
    """

    num_nodes: int
    node_feat: np.ndarray
    pairs: np.ndarray
    pair_feat: np.ndarray | None = None

    def __post_init__(self):
        node_feat = np.asarray(self.node_feat, dtype=np.float64)
        if node_feat.ndim == 1:
            node_feat = node_feat.reshape(-1, 1)
        pairs = np.asarray(self.pairs, dtype=np.intp).reshape(-1, 2)
        object.__setattr__(self, "node_feat", node_feat)
        object.__setattr__(self, "pairs", pairs)
        if self.pair_feat is not None:
            pf = np.asarray(self.pair_feat, dtype=np.float64)
            if pf.ndim == 1:
                pf = pf.reshape(-1, 1)
            object.__setattr__(self, "pair_feat", pf)
        self.validate()

    def validate(self):
        n = self.num_nodes
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise GraphValidationError(f"num_nodes must be a positive integer, got {n!r}")
        if self.node_feat.shape[0] != n:
            raise GraphValidationError(
                f"node_feat has {self.node_feat.shape[0]} rows for {n} nodes")
        if not np.all(np.isfinite(self.node_feat)):
            raise GraphValidationError("node_feat contains non-finite values")
        if self.pairs.size:
            if self.pairs.min() < 0 or self.pairs.max() >= n:
                bad = self.pairs[(self.pairs < 0).any(1) | (self.pairs >= n).any(1)][0].tolist()
                raise GraphValidationError(f"edge {bad} out of range for {n} nodes")
            if np.any(self.pairs[:, 0] == self.pairs[:, 1]):
                raise GraphValidationError("self-loops are not allowed")
        if self.pair_feat is not None and self.pair_feat.shape[0] != self.pairs.shape[0]:
            raise GraphValidationError(
                f"edge_feat has {self.pair_feat.shape[0]} rows for {self.pairs.shape[0]} edges")

    @property
    def node_dim(self):
        return self.node_feat.shape[1]

    @property
    def edge_dim(self):
        return None if self.pair_feat is None else self.pair_feat.shape[1]

    @property
    def edges(self) -> np.ndarray:
        """Directed (src, dst) rows, both directions of every pair, interleaved."""
        out = np.empty((2 * len(self.pairs), 2), dtype=np.intp)
        out[0::2] = self.pairs
        out[1::2] = self.pairs[:, ::-1]
        return out

    @property
    def edge_feat(self) -> np.ndarray | None:
        if self.pair_feat is None:
            return None
        return np.repeat(self.pair_feat, 2, axis=0)

    @property
    def num_edges(self):
        """Directed edge count."""
        return 2 * len(self.pairs)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.pairs.ravel(), minlength=self.num_nodes)

    def permuted(self, perm) -> "Graph":
        """Relabel nodes so that old node ``perm[k]`` becomes new node ``k``."""
        perm = np.asarray(perm, dtype=np.intp)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        return Graph(self.num_nodes, self.node_feat[perm], inverse[self.pairs], self.pair_feat)

    def to_record(self) -> dict:
        rec = {
            "num_nodes": int(self.num_nodes),
            "node_feat": self.node_feat.tolist(),
            "edges": self.pairs.tolist(),
        }
        if self.pair_feat is not None:
            rec["edge_feat"] = self.pair_feat.tolist()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Graph":
        if not isinstance(rec, dict):
            raise GraphValidationError("record must be a JSON object")
        unknown = set(rec) - RECORD_KEYS
        if unknown:
            raise GraphValidationError(f"unknown keys {sorted(unknown)}")
        missing = {"num_nodes", "node_feat", "edges"} - set(rec)
        if missing:
            raise GraphValidationError(f"missing keys {sorted(missing)}")
        n = rec["num_nodes"]
        if isinstance(n, bool) or not isinstance(n, int):
            raise GraphValidationError(f"num_nodes must be an integer, got {n!r}")
        try:
            node_feat = np.array(rec["node_feat"], dtype=np.float64)
            edges = np.array(rec["edges"], dtype=np.float64).reshape(-1, 2) if rec["edges"] else np.zeros((0, 2))
            edge_feat = rec.get("edge_feat")
            edge_feat = None if edge_feat is None else np.array(edge_feat, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise GraphValidationError(f"malformed array: {exc}") from None
        if node_feat.ndim != 2:
            raise GraphValidationError("node_feat must be a list of rows")
        if np.any(edges != np.round(edges)):
            raise GraphValidationError("edge endpoints must be integers")
        if edge_feat is not None:
            if edge_feat.ndim != 2 and edge_feat.size:
                raise GraphValidationError("edge_feat must be a list of rows")
            edge_feat = edge_feat.reshape(len(edges), -1) if edge_feat.size else np.zeros((len(edges), 0))
        return cls(n, node_feat, edges.astype(np.intp), edge_feat)


def parse_graph_file(path) -> list[Graph]:
    """Read a JSON-lines graph file. Blank lines are skipped."""
    graphs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
            try:
                graphs.append(Graph.from_record(rec))
            except GraphValidationError as exc:
                raise GraphValidationError(f"line {lineno}: {exc}") from None
    return graphs


def write_graph_file(graphs: Sequence[Graph], path):
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_record(), separators=(",", ":")))
            fh.write("\n")
    return path


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Disjoint union of graphs; node rows stacked in input order."""

    node_feat: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    segment_ids: np.ndarray
    num_graphs: int
    edge_feat: np.ndarray | None = None

    @property
    def num_nodes(self):
        return self.node_feat.shape[0]

    @property
    def num_edges(self):
        return self.src.size

    @property
    def edges(self):
        return np.stack([self.src, self.dst], axis=1)

    @cached_property
    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.num_nodes)

    @cached_property
    def src_index(self) -> RowIndex:
        return RowIndex(self.src, self.num_nodes)

    @cached_property
    def dst_index(self) -> RowIndex:
        return RowIndex(self.dst, self.num_nodes)

    @cached_property
    def graph_segments(self) -> Segments:
        return Segments(self.segment_ids, self.num_graphs)

    @cached_property
    def incoming(self) -> Segments:
        """Edges grouped by destination node."""
        return Segments(self.dst, self.num_nodes)

    @cached_property
    def gcn_operator(self) -> sp.csr_matrix:
        """Symmetric-normalised adjacency with self-loops, D^-1/2 (A + I) D^-1/2."""
        n = self.num_nodes
        rows = np.concatenate([self.dst, np.arange(n)])
        cols = np.concatenate([self.src, np.arange(n)])
        deg = self.in_degree + 1.0
        vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def batch_graphs(graphs: Sequence[Graph]) -> GraphBatch:
    if not graphs:
        raise ContractError("batch_graphs needs at least one graph")
    d_x = graphs[0].node_dim
    d_e = graphs[0].edge_dim
    for k, g in enumerate(graphs):
        if g.node_dim != d_x:
            raise DimensionError(f"graph {k} has node feature width {g.node_dim}, expected {d_x}")
        if g.edge_dim != d_e:
            raise DimensionError(f"graph {k} has edge feature width {g.edge_dim}, expected {d_e}")
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    edges = [g.edges + offsets[k] for k, g in enumerate(graphs)]
    edges = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.intp)
    seg = np.repeat(np.arange(len(graphs)), [g.num_nodes for g in graphs])
    edge_feat = None
    if d_e is not None:
        edge_feat = np.concatenate([g.edge_feat for g in graphs])
    return GraphBatch(
        node_feat=np.concatenate([g.node_feat for g in graphs]),
        src=edges[:, 0].astype(np.intp),
        dst=edges[:, 1].astype(np.intp),
        segment_ids=seg,
        num_graphs=len(graphs),
        edge_feat=edge_feat,
    )


def degree_statistics(graphs: Sequence[Graph]) -> float:
    """Mean over all nodes of log(degree + 1); the PNA scaler normaliser."""
    if not graphs:
        raise ContractError("degree_statistics needs a non-empty dataset")
    logs = np.concatenate([np.log(g.degrees() + 1.0) for g in graphs])
    return float(logs.mean())


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    validation: tuple
    seed: int

    def __post_init__(self):
        if set(self.train) & set(self.validation):
            raise ContractError("train and validation indices overlap")


def split_dataset(count: int, val_fraction: float = 0.1, seed: int = 0) -> DatasetSplit:
    if count < 2:
        raise ContractError("need at least 2 graphs to split")
    order = np.random.default_rng(seed).permutation(count)
    n_val = min(count - 1, max(1, int(round(count * val_fraction))))
    return DatasetSplit(train=tuple(sorted(order[n_val:].tolist())),
                        validation=tuple(sorted(order[:n_val].tolist())), seed=seed)


# ---------------------------------------------------------------- synthetic


@dataclass
class _Builder:
    rng: np.random.Generator
    max_degree: int = 4
    kinds: list = field(default_factory=list)  # 0 chain, 1 ring
    pairs: list = field(default_factory=list)
    bond: list = field(default_factory=list)  # 0 single, 1 double, 2 ring
    deg: list = field(default_factory=list)

    def add_node(self, kind):
        self.kinds.append(kind)
        self.deg.append(0)
        return len(self.kinds) - 1

    def link(self, u, v, bond):
        self.pairs.append((u, v))
        self.bond.append(bond)
        self.deg[u] += 1
        self.deg[v] += 1

    def anchor(self, slack=1):
        free = [k for k, d in enumerate(self.deg) if d <= self.max_degree - slack]
        if not free:
            free = list(range(len(self.deg)))
        return int(self.rng.choice(free))

    def ring(self, size, anchor=None):
        start = len(self.kinds)
        for _ in range(size):
            self.add_node(1)
        for k in range(size):
            self.link(start + k, start + (k + 1) % size, 2)
        if anchor is not None:
            self.link(anchor, start, 0)


def _synthetic_graph(rng, n, node_dim, edge_dim, complexity):
    b = _Builder(rng)
    p_ring = 0.45 * complexity
    if rng.random() < complexity and n >= 5:
        b.ring(int(rng.integers(5, min(n, 6) + 1)))
    else:
        b.add_node(0)
    while len(b.kinds) < n:
        left = n - len(b.kinds)
        if left >= 3 and rng.random() < p_ring:
            size = int(rng.integers(3, min(left, 7) + 1))
            b.ring(size, anchor=b.anchor())  # anchor picked before ring nodes exist
        else:
            u = b.anchor()
            v = b.add_node(0)
            b.link(u, v, 1 if rng.random() < 0.2 * (1 + complexity) else 0)
    # occasional long-range closure between chain nodes far apart
    if complexity > 0 and n >= 8 and rng.random() < 0.5 * complexity:
        cand = [k for k, d in enumerate(b.deg) if d < 3]
        if len(cand) >= 2:
            u, v = rng.choice(cand, size=2, replace=False)
            if (min(u, v), max(u, v)) not in {(min(p), max(p)) for p in b.pairs}:
                b.link(int(u), int(v), 0)

    kinds = np.array(b.kinds)
    deg = np.array(b.deg)
    n_cat = max(1, node_dim - 2) if node_dim >= 3 else node_dim
    n_cont = node_dim - n_cat
    # element type depends on local structure, with some noise
    base = np.where(kinds == 1, 0, np.minimum(deg, n_cat - 1))
    noisy = rng.random(n) < 0.25
    cat = np.where(noisy, rng.integers(0, n_cat, size=n), base) % n_cat
    x = np.zeros((n, node_dim))
    x[np.arange(n), cat] = 1.0
    if n_cont >= 1:
        x[:, n_cat] = 0.5 * (cat / max(1, n_cat - 1)) + 0.1 * rng.standard_normal(n)
    if n_cont >= 2:
        x[:, n_cat + 1] = deg / 4.0 + 0.1 * rng.standard_normal(n)

    pairs = np.array(b.pairs, dtype=np.intp).reshape(-1, 2)
    pair_feat = None
    if edge_dim:
        m = len(pairs)
        bond = np.array(b.bond, dtype=np.intp)
        n_ecat = max(1, edge_dim - 1) if edge_dim >= 2 else edge_dim
        pair_feat = np.zeros((m, edge_dim))
        pair_feat[np.arange(m), bond % n_ecat] = 1.0
        if edge_dim > n_ecat:
            pair_feat[:, n_ecat] = 1.0 - 0.1 * bond + 0.05 * rng.standard_normal(m)
    perm = rng.permutation(n)
    return Graph(n, x, pairs, pair_feat).permuted(perm)


def generate_synthetic_dataset(seed: int = 0, count: int = 2000, size_range=(10, 30),
                               feature_dims=(9, 4), motif_complexity: float = 0.6) -> list[Graph]:
    """Seeded molecule-like connected graphs.

    Each graph grows from a ring or single atom by attaching chain atoms and
    whole rings (3-7 atoms) to sites with spare valence, so mean degree stays
    near 2. ``motif_complexity`` in [0, 1] sets how often rings, double
    bonds and long-range closures appear; at 0 every graph is a tree.
    Node features: one-hot element type driven by local structure (with 25%
    noise), plus two continuous channels. Edge features: one-hot bond type
    plus a continuous bond-length proxy. ``feature_dims=(node_dim, edge_dim)``;
    an ``edge_dim`` of 0 omits edge features.
    """
    lo, hi = size_range
    if count < 1:
        raise ContractError(f"count must be >= 1, got {count}")
    if lo > hi:
        raise ContractError(f"empty size range {tuple(size_range)}")
    if lo < 4 or hi > 64:
        raise ContractError(f"size range {tuple(size_range)} outside [4, 64]")
    if not 0.0 <= motif_complexity <= 1.0:
        raise ContractError("motif_complexity must lie in [0, 1]")
    node_dim, edge_dim = feature_dims
    if node_dim < 1:
        raise ContractError("node feature width must be >= 1")
    children = np.random.SeedSequence(seed).spawn(count)
    graphs = []
    for child in children:
        rng = np.random.default_rng(child)
        n = int(rng.integers(lo, hi + 1))
        graphs.append(_synthetic_graph(rng, n, node_dim, edge_dim, motif_complexity))
    return graphs


def is_connected(g: Graph) -> bool:
    if g.num_nodes == 1:
        return True
    adj = sp.csr_matrix((np.ones(len(g.pairs)), (g.pairs[:, 0], g.pairs[:, 1])),
                        shape=(g.num_nodes, g.num_nodes))
    n_comp, _ = sp.csgraph.connected_components(adj, directed=False)
    return n_comp == 1


def mean_degree(g: Graph) -> float:
    return 2.0 * len(g.pairs) / g.num_nodes

