"""Invariant suites shared by ``graphac verify`` and the test-suite.

Each check returns a :class:`Check` row: suite, property name, pass flag and
the measured residual the flag was decided on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .arena import TrainConfig, pca_explained_variance, train_pair
from .graphs import Graph, batch_graphs, generate_synthetic_dataset
from .losses import (LossConfig, barlow_twins_loss, competitive_bt_losses, cross_correlation,
                     graphac_losses, invariance_term, vicreg_loss)
from .models import ModelSpec, build_model

GRAD_TOL = 1e-4


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    residual: float


# ----------------------------------------------------------------- instances


def random_graph(rng, n=None, node_dim=3, edge_dim=2, max_nodes=5) -> Graph:
    """Small random connected graph (random spanning tree plus extra pairs)."""
    n = int(n or rng.integers(2, max_nodes + 1))
    pairs = {(int(rng.integers(0, k)), k) for k in range(1, n)}
    for _ in range(int(rng.integers(0, n))):
        u, v = sorted(rng.choice(n, size=2, replace=False).tolist())
        pairs.add((u, v))
    pairs = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    ef = rng.normal(size=(len(pairs), edge_dim)) if edge_dim else None
    return Graph(n, rng.normal(size=(n, node_dim)), pairs, ef)


def small_spec(arch, edge=False, layers=2, seed=0, hidden=3, out=3) -> ModelSpec:
    return ModelSpec(architecture=arch, num_layers=layers, hidden_dim=hidden, output_dim=out,
                     use_edge_features=edge, init_seed=seed)


LAYER_CASES = [("GCN", False), ("GIN", False), ("PNA", False), ("PNA", True)]


def loss_functions(config: LossConfig | None = None):
    """name -> f(h_a, h_b) returning a 1x1 Value, for every loss in the package."""
    cfg = config or LossConfig()
    vic = LossConfig(use_vicreg_invariance=True, use_vicreg_variance=True)
    return {
        "barlow_twins": lambda a, b: barlow_twins_loss(cross_correlation(a, b), cfg.lambda_cbt),
        "vicreg": lambda a, b: vicreg_loss(a, b, vic),
        "cbt_a": lambda a, b: competitive_bt_losses(cross_correlation(a, b), cfg.lambda_cbt, cfg.mu_cbt)[0],
        "cbt_b": lambda a, b: competitive_bt_losses(cross_correlation(a, b), cfg.lambda_cbt, cfg.mu_cbt)[1],
        "graphac_a": lambda a, b: graphac_losses(a, b, cfg)[0],
        "graphac_b": lambda a, b: graphac_losses(a, b, cfg)[1],
    }


# ----------------------------------------------------------------- gradcheck


def loss_gradcheck(name, rng, n=6, d=4) -> float:
    """Worst relative error of d loss / d h_a and d loss / d h_b on one random instance."""
    f = loss_functions()[name]
    a, b = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    if name == "vicreg":
        # keep column stds on both sides of the hinge at 1
        a *= rng.uniform(0.3, 1.7, size=(1, d))
        b *= rng.uniform(0.3, 1.7, size=(1, d))
    ea = T.finite_diff_check(lambda x: f(x, T.constant(b)), a)
    eb = T.finite_diff_check(lambda x: f(T.constant(a), x), b)
    return max(ea, eb)


def param_gradcheck(model, objective, h=1e-5) -> float:
    """Autodiff vs central differences for every parameter of ``model``."""
    model.zero_grad()
    T.backward(objective())
    worst = 0.0
    with T.no_grad():
        for p in model.parameters.values():
            auto = p.grad.copy()
            base = p.data
            fd = np.zeros_like(base)
            for idx in np.ndindex(*base.shape):
                probe = base.copy()
                probe[idx] += h
                p.data = probe
                up = objective().item()
                probe = base.copy()
                probe[idx] -= h
                p.data = probe
                down = objective().item()
                fd[idx] = (up - down) / (2 * h)
            p.data = base
            worst = max(worst, float(np.max(np.abs(auto - fd) / np.maximum(1.0, np.abs(fd)))))
    model.zero_grad()
    return worst


def layer_gradcheck(arch, edge, rng, layers=2) -> float:
    """Worst relative error over node features and all parameters of a small model."""
    graphs = [random_graph(rng) for _ in range(3)]
    batch = batch_graphs(graphs)
    model = build_model(small_spec(arch, edge, layers, seed=int(rng.integers(1 << 30))),
                        delta=1.0, node_dim=3, edge_dim=2)
    # zero-initialised biases put whole rows exactly on the relu kink; jitter them off it
    for p in model.parameters.values():
        p.data = p.data + rng.normal(scale=0.1, size=p.data.shape)
    weights = rng.normal(size=(len(graphs), model.spec.output_dim))

    def objective():
        return T.sum(T.multiply(model(batch), weights))

    worst = param_gradcheck(model, objective)

    def of_features(x):
        return T.sum(T.multiply(model(batch, x), weights))

    return max(worst, T.finite_diff_check(of_features, batch.node_feat))


def gradcheck_suite(instances=3, seed=0) -> list:
    rng = np.random.default_rng(seed)
    rows = []
    for name in loss_functions():
        err = max(loss_gradcheck(name, rng) for _ in range(instances))
        rows.append(Check("gradcheck", f"loss:{name}", err < GRAD_TOL, err))
    for arch, edge in LAYER_CASES:
        err = max(layer_gradcheck(arch, edge, rng) for _ in range(instances))
        label = f"layer:{arch}{'+edge' if edge else ''}"
        rows.append(Check("gradcheck", label, err < GRAD_TOL, err))
    return rows


# ----------------------------------------------------------- loss identities


def transposition_residual(rng, n=16, d=8, config=None) -> float:
    cfg = config or LossConfig()
    a, b = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    la, _ = competitive_bt_losses(cross_correlation(a, b), cfg.lambda_cbt, cfg.mu_cbt)
    _, lb = competitive_bt_losses(cross_correlation(b, a), cfg.lambda_cbt, cfg.mu_cbt)
    return abs(la.item() - lb.item())


def cancellation_residual(rng, d=8, lam=5e-3) -> float:
    c = rng.uniform(-1, 1, size=(d, d))
    la, lb = competitive_bt_losses(c, lam, 1.0)
    return abs(la.item() + lb.item() - 2 * invariance_term(c).item())


def loss_identities_suite(trials=200, seed=0) -> list:
    rng = np.random.default_rng(seed)
    rows = []
    r = max(transposition_residual(rng) for _ in range(trials))
    rows.append(Check("loss-identities", "transposition anti-symmetry", r < 1e-12, r))
    r = max(cancellation_residual(rng) for _ in range(trials))
    rows.append(Check("loss-identities", "mu=1 cancellation L_A + L_B = 2 inv", r < 1e-10, r))

    worst = 0.0
    for _ in range(trials // 10):
        c = rng.uniform(-1, 1, size=(6, 6))
        # mu = -1 turns seat A's loss into plain Barlow Twins
        la, _ = competitive_bt_losses(c, 5e-3, -1.0)
        worst = max(worst, abs(la.item() - barlow_twins_loss(c, 5e-3).item()))
    rows.append(Check("loss-identities", "mu=-1 reduces to Barlow Twins", worst < 1e-12, worst))

    worst = 0.0
    for _ in range(trials // 10):
        h = rng.normal(size=(10, 5))
        worst = max(worst, float(np.max(np.abs(np.diag(cross_correlation(h, h).data) - 1))))
    rows.append(Check("loss-identities", "self-correlation diagonal = 1", worst < 1e-12, worst))

    worst = 0.0
    for _ in range(trials // 10):
        h = rng.normal(size=(10, 5))
        worst = max(worst, invariance_term(cross_correlation(h, h)).item())
    rows.append(Check("loss-identities", "identical embeddings give zero invariance", worst < 1e-20, worst))
    return rows


# --------------------------------------------------------------- permutation


def permutation_residual(arch, edge, rng) -> float:
    """Graph embedding change under a random node relabelling."""
    g = random_graph(rng, max_nodes=7)
    model = build_model(small_spec(arch, edge, 3, seed=int(rng.integers(1 << 30)), hidden=4, out=4),
                        delta=1.0, node_dim=3, edge_dim=2)
    perm = rng.permutation(g.num_nodes)
    with T.no_grad():
        a = model(batch_graphs([g])).data
        b = model(batch_graphs([g.permuted(perm)])).data
    return float(np.max(np.abs(a - b)))


def batch_order_residual(arch, edge, rng) -> float:
    """Permuting graphs within a batch permutes the embedding rows."""
    graphs = [random_graph(rng) for _ in range(4)]
    model = build_model(small_spec(arch, edge, 2, seed=int(rng.integers(1 << 30)), hidden=4, out=4),
                        delta=1.0, node_dim=3, edge_dim=2)
    order = rng.permutation(len(graphs))
    with T.no_grad():
        a = model(batch_graphs(graphs)).data
        b = model(batch_graphs([graphs[k] for k in order])).data
    return float(np.max(np.abs(a[order] - b)))


def permutation_suite(trials=5, seed=0) -> list:
    rng = np.random.default_rng(seed)
    rows = []
    for arch, edge in LAYER_CASES:
        label = f"{arch}{'+edge' if edge else ''}"
        r = max(permutation_residual(arch, edge, rng) for _ in range(trials))
        rows.append(Check("permutation", f"node relabelling:{label}", r < 1e-10, r))
        r = max(batch_order_residual(arch, edge, rng) for _ in range(trials))
        rows.append(Check("permutation", f"batch order:{label}", r < 1e-10, r))
    return rows


# ------------------------------------------------------------------ collapse


def collapse_suite(seed=0) -> list:
    rng = np.random.default_rng(seed)
    rows = []
    x = np.zeros((50, 4))
    x[:, 2] = rng.normal(size=50)
    r = abs(pca_explained_variance(x)[0] - 1.0)
    rows.append(Check("collapse", "rank-1 embeddings give top fraction 1", r < 1e-12, r))
    fr = pca_explained_variance(rng.normal(size=(4096, 4)))
    r = float(np.max(np.abs(fr - 0.25)))
    rows.append(Check("collapse", "isotropic embeddings give equal fractions", r < 0.05, r))
    a = rng.normal(size=(40, 6)) @ rng.normal(size=(6, 6))
    ref = np.sort(np.linalg.eigvalsh(np.cov(a, rowvar=False)))[::-1]
    r = float(np.max(np.abs(pca_explained_variance(a) - ref / ref.sum())))
    rows.append(Check("collapse", "Jacobi spectrum matches LAPACK", r < 1e-10, r))

    data = generate_synthetic_dataset(seed=seed, count=240)
    cfg = TrainConfig(epochs=2, eval_window=1, seeds=(seed,), batch_size=32)
    res = train_pair(ModelSpec(num_layers=2, hidden_dim=16, output_dim=32),
                     ModelSpec(num_layers=2, hidden_dim=16, output_dim=32, init_seed=1), data, cfg)
    top = res.top_pca_fraction() if res.ok else 1.0
    rows.append(Check("collapse", "short match keeps top PCA fraction < 0.9", res.ok and top < 0.9, top))
    return rows


SUITES = {
    "gradcheck": gradcheck_suite,
    "loss-identities": loss_identities_suite,
    "permutation": permutation_suite,
    "collapse": collapse_suite,
}


def run_suites(names) -> list:
    rows = []
    for name in names:
        rows.extend(SUITES[name]())
    return rows
