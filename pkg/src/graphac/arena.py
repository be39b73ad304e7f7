"""Paired training: two encoders, one shared batch stream, per-seat losses.

Each step both models embed the same batch; seat A then descends its own
composite loss and seat B its own. With ``detach_opponent`` (the default)
each loss sees the other seat's embedding as a constant, so the competitive
triangle terms are not cancelled by summing both losses into one model.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DegenerateScaleError, MatchCollapsed, NonFiniteError
from .graphs import DatasetSplit, Graph, batch_graphs, degree_statistics, split_dataset
from .losses import LossConfig, graphac_losses
from .models import Model, ModelSpec, build_model

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("epoch", "loss_a", "loss_b", "diff", "inv_term", "upper_tri", "lower_tri", "cov_term")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-4
    loss: LossConfig = field(default_factory=LossConfig)
    seeds: tuple = (0, 1, 2)
    eval_window: int = 5
    detach_opponent: bool = True
    val_fraction: float = 0.1
    split_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig.from_dict(self.loss))
        if self.epochs < 1:
            raise ConfigError("must be >= 1", "train.epochs")
        if self.batch_size < 2:
            raise ConfigError("must be >= 2", "train.batch_size")
        if not self.learning_rate > 0:
            raise ConfigError("must be > 0", "train.learning_rate")
        if not self.seeds:
            raise ConfigError("at least one seed is required", "train.seeds")
        if not 1 <= self.eval_window <= self.epochs:
            raise ConfigError("must lie in [1, epochs]", "train.eval_window")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("must lie in (0, 1)", "train.val_fraction")

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "train")
        return cls(**data)


@dataclass
class SeedRun:
    seed: int
    trajectory: dict  # column name -> list over epochs
    final_diff: float
    pca_a: np.ndarray
    pca_b: np.ndarray


@dataclass
class MatchResult:
    spec_a: ModelSpec
    spec_b: ModelSpec
    runs: list = field(default_factory=list)
    collapsed: str | None = None
    collapse_epoch: int | None = None
    collapse_seed: int | None = None

    @property
    def seeds(self):
        return [r.seed for r in self.runs]

    @property
    def final_diffs(self) -> np.ndarray:
        return np.array([r.final_diff for r in self.runs])

    @property
    def mean(self) -> float:
        """Mean over seeds of L_A - L_B; negative means seat A won."""
        return float(self.final_diffs.mean()) if self.runs else float("nan")

    @property
    def std(self) -> float:
        d = self.final_diffs
        return float(d.std(ddof=1)) if d.size > 1 else 0.0

    @property
    def ok(self):
        return self.collapsed is None

    def diff_trajectory(self) -> np.ndarray:
        """seeds x epochs array of validation loss differences."""
        return np.array([r.trajectory["diff"] for r in self.runs])

    def top_pca_fraction(self) -> float:
        """Largest first-component fraction over both seats and all seeds."""
        fr = [r.pca_a[0] for r in self.runs] + [r.pca_b[0] for r in self.runs]
        return float(max(fr)) if fr else float("nan")

    def summary(self, name_a="A", name_b="B", tie_threshold=None) -> str:
        line = f"{name_a} vs {name_b}: diff = {self.mean:.4f} ± {self.std:.4f} (negative ⇒ A wins)"
        if tie_threshold is not None and abs(self.mean) < tie_threshold:
            line += " [tie]"
        return line

    def to_dict(self):
        return {
            "spec_a": self.spec_a.to_dict(),
            "spec_b": self.spec_b.to_dict(),
            "mean": self.mean,
            "std": self.std,
            "collapsed": self.collapsed,
            "collapse_epoch": self.collapse_epoch,
            "collapse_seed": self.collapse_seed,
            "runs": [
                {"seed": r.seed, "final_diff": r.final_diff, "trajectory": r.trajectory,
                 "pca_a": r.pca_a.tolist(), "pca_b": r.pca_b.tolist()}
                for r in self.runs
            ],
        }


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def pca_explained_variance(embeddings, max_sweeps: int = 50, tol: float = 1e-12) -> np.ndarray:
    """Covariance eigenvalue fractions, descending, via cyclic Jacobi rotations.

    The spectrum is truncated to rank ``min(N - 1, d)``.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ContractError("pca_explained_variance needs an N x d array with d >= 1")
    n, d = x.shape
    if n < 2:
        raise ContractError("pca_explained_variance needs at least 2 rows")
    xc = x - x.mean(axis=0)
    a = xc.T @ xc / (n - 1)
    eig = jacobi_eigenvalues(a, max_sweeps=max_sweeps, tol=tol)
    eig = np.sort(np.clip(eig, 0.0, None))[::-1][:min(n - 1, d)]
    total = eig.sum()
    if total <= 0:
        out = np.zeros_like(eig)
        out[0] = 1.0
        return out
    return eig / total


def jacobi_eigenvalues(a, max_sweeps: int = 50, tol: float = 1e-12) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps."""
    a = np.array(a, dtype=np.float64)
    d = a.shape[0]
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
    return np.diag(a).copy()


def zero_gradients(model: Model):
    model.zero_grad()


def _batches(indices, batch_size, rng=None):
    idx = np.array(indices)
    if rng is not None:
        idx = idx[rng.permutation(idx.size)]
    n_full = idx.size // batch_size
    return [idx[k * batch_size:(k + 1) * batch_size] for k in range(n_full)]


def _eval_chunks(indices, batch_size):
    idx = np.array(indices)
    n = max(1, int(np.ceil(idx.size / batch_size)))
    return [c for c in np.array_split(idx, n) if c.size >= 2]


def _step(model_a, model_b, batch, loss_cfg, detach):
    ha, hb = model_a(batch), model_b(batch)
    if detach:
        la, _, _ = graphac_losses(ha, hb.detach(), loss_cfg)
        _, lb, _ = graphac_losses(ha.detach(), hb, loss_cfg)
    else:
        la, lb, _ = graphac_losses(ha, hb, loss_cfg)
    T.backward(la)
    T.backward(lb)


def evaluate(model_a, model_b, graphs, chunks, loss_cfg):
    """Mean over evaluation batches of both losses and their components."""
    acc = {k: 0.0 for k in TRAJECTORY_COLUMNS[1:]}
    with T.no_grad():
        for chunk in chunks:
            batch = batch_graphs([graphs[i] for i in chunk])
            la, lb, diag = graphac_losses(model_a(batch), model_b(batch), loss_cfg)
            acc["loss_a"] += la.item()
            acc["loss_b"] += lb.item()
            for k in ("inv_term", "upper_tri", "lower_tri", "cov_term"):
                acc[k] += diag[k]
    acc = {k: v / len(chunks) for k, v in acc.items()}
    acc["diff"] = acc["loss_a"] - acc["loss_b"]
    return acc


def embed(model, graphs, indices):
    with T.no_grad():
        return model(batch_graphs([graphs[i] for i in indices])).data


def _run_seed(spec_a, spec_b, graphs, split, delta, config, seed, node_dim, edge_dim):
    model_a = build_model(spec_a.with_seed(derive_seed(spec_a.init_seed, seed)), delta, node_dim, edge_dim)
    model_b = build_model(spec_b.with_seed(derive_seed(spec_b.init_seed, seed)), delta, node_dim, edge_dim)
    opt_a = T.AdamState(lr=config.learning_rate)
    opt_b = T.AdamState(lr=config.learning_rate)
    rng = np.random.default_rng(derive_seed(seed, 0x5EED))
    val_chunks = _eval_chunks(split.validation, config.batch_size)
    traj = {k: [] for k in TRAJECTORY_COLUMNS}
    for epoch in range(1, config.epochs + 1):
        try:
            for idx in _batches(split.train, config.batch_size, rng):
                batch = batch_graphs([graphs[i] for i in idx])
                _step(model_a, model_b, batch, config.loss, config.detach_opponent)
                T.adam_step(model_a.parameters, opt_a)
                T.adam_step(model_b.parameters, opt_b)
                model_a.zero_grad()
                model_b.zero_grad()
            stats = evaluate(model_a, model_b, graphs, val_chunks, config.loss)
        except (DegenerateScaleError, NonFiniteError) as exc:
            raise MatchCollapsed(f"collapse at epoch {epoch} (seed {seed}): {exc}", epoch=epoch, seed=seed) from exc
        traj["epoch"].append(epoch)
        for k, v in stats.items():
            traj[k].append(float(v))
        log.debug("seed %d epoch %d diff %.5f", seed, epoch, stats["diff"])
    final = float(np.mean(traj["diff"][-config.eval_window:]))
    pca_a = pca_explained_variance(embed(model_a, graphs, split.validation))
    pca_b = pca_explained_variance(embed(model_b, graphs, split.validation))
    return SeedRun(seed, traj, final, pca_a, pca_b)


def train_pair(spec_a: ModelSpec, spec_b: ModelSpec, dataset: Sequence[Graph],
               config: TrainConfig | None = None, split: DatasetSplit | None = None,
               delta: float | None = None) -> MatchResult:
    """Train A and B against each other once per configured seed.

    A collapse (degenerate batch statistics or non-finite values) stops the
    match; the returned result carries ``collapsed`` and the epoch, with the
    seeds completed so far.
    """
    config = config or TrainConfig()
    if not dataset:
        raise ContractError("train_pair needs a non-empty dataset")
    node_dim = dataset[0].node_dim
    edge_dim = dataset[0].edge_dim
    split = split or split_dataset(len(dataset), config.val_fraction, config.split_seed)
    if delta is None:
        delta = degree_statistics([dataset[i] for i in split.train])
    result = MatchResult(spec_a, spec_b)
    for seed in config.seeds:
        try:
            result.runs.append(_run_seed(spec_a, spec_b, dataset, split, delta, config, seed,
                                         node_dim, edge_dim))
        except MatchCollapsed as exc:
            result.collapsed = str(exc)
            result.collapse_epoch = exc.epoch
            result.collapse_seed = exc.seed
            log.warning("%s", exc)
            break
    return result


def write_trajectory_csv(run: SeedRun, path):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for k in range(len(run.trajectory["epoch"])):
            row = [run.trajectory["epoch"][k]]
            row += [repr(float(run.trajectory[c][k])) for c in TRAJECTORY_COLUMNS[1:]]
            w.writerow(row)
    return path

