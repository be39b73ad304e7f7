"""Double round-robin tournaments over a pool of encoder specs.

Every ordered pair (i, j), self-pairs included, is one ``train_pair`` match
with player i in seat A. ``means[i, j]`` is the mean final L_A - L_B, so a
negative entry means the row player won.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import statistics
import warnings
import xml.sax.saxutils as su
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .arena import MatchResult, TrainConfig, train_pair, write_trajectory_csv
from .errors import ContractError, SpecValidationError
from .graphs import Graph, degree_statistics, split_dataset
from .models import ModelSpec

log = logging.getLogger(__name__)

# seat B of a self-pair gets a shifted init seed so the two copies differ
SELF_PLAY_SEED_OFFSET = 7919


@dataclass
class TournamentPlan:
    names: list
    pool: list  # ModelSpec per player
    schedule: list  # (a, b) index pairs, row-major
    config: TrainConfig = field(default_factory=TrainConfig)
    dataset: Sequence[Graph] | None = None

    @property
    def size(self):
        return len(self.pool)


@dataclass
class TournamentReport:
    names: list
    means: np.ndarray
    stds: np.ndarray
    results: dict  # (i, j) -> MatchResult
    ranking: list = field(default_factory=list)  # (name, score), best first
    consistency: dict = field(default_factory=dict)

    @property
    def aborted(self):
        return sorted(k for k, r in self.results.items() if not r.ok)


def schedule_double_round_robin(pool, names=None, config=None, dataset=None) -> TournamentPlan:
    """Plan all n^2 ordered matches. ``pool`` holds specs or (name, spec) pairs."""
    pool = list(pool)
    if not pool:
        raise ContractError("tournament pool must contain at least one spec")
    if names is None:
        if all(isinstance(p, tuple) for p in pool):
            names = [p[0] for p in pool]
            pool = [p[1] for p in pool]
        else:
            names = [default_name(s) for s in pool]
    names = [str(n) for n in names]
    if len(names) != len(pool):
        raise ContractError("names and pool differ in length")
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise SpecValidationError(f"duplicate display names: {', '.join(dupes)}", fields=["names"])
    n = len(pool)
    schedule = [(i, j) for i in range(n) for j in range(n)]
    return TournamentPlan(names, pool, schedule, config or TrainConfig(), dataset)


def default_name(spec: ModelSpec) -> str:
    return f"{spec.architecture}-L{spec.num_layers}-H{spec.hidden_dim}"


def match_specs(plan: TournamentPlan, i: int, j: int):
    a, b = plan.pool[i], plan.pool[j]
    if i == j:
        b = b.with_seed(b.init_seed + SELF_PLAY_SEED_OFFSET)
    return a, b


_WORKER = {}


def _init_worker(dataset, split, delta):
    _WORKER.update(dataset=dataset, split=split, delta=delta)


def _play(args):
    key, spec_a, spec_b, config = args
    w = _WORKER
    return key, train_pair(spec_a, spec_b, w["dataset"], config, split=w["split"], delta=w["delta"])


def run_tournament(plan: TournamentPlan, workers: int = 1) -> TournamentReport:
    """Play every scheduled match. Results are keyed by schedule position, so
    the report does not depend on worker count or completion order."""
    if not plan.dataset:
        raise ContractError("tournament plan has no dataset")
    cfg = plan.config
    split = split_dataset(len(plan.dataset), cfg.val_fraction, cfg.split_seed)
    delta = degree_statistics([plan.dataset[i] for i in split.train])
    jobs = [((i, j), *match_specs(plan, i, j), cfg) for i, j in plan.schedule]
    results = {}
    if workers <= 1:
        _init_worker(plan.dataset, split, delta)
        for job in jobs:
            key, res = _play(job)
            results[key] = res
            log.info("match %s: %s", key, res.summary(plan.names[key[0]], plan.names[key[1]]))
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(plan.dataset, split, delta)) as ex:
            for key, res in ex.map(_play, jobs):
                results[key] = res
    return assemble_report(plan.names, results)


def assemble_report(names, results: dict) -> TournamentReport:
    n = len(names)
    means = np.full((n, n), np.nan)
    stds = np.full((n, n), np.nan)
    for (i, j), r in results.items():
        if r.ok:
            means[i, j], stds[i, j] = r.mean, r.std
    report = TournamentReport(list(names), means, stds, dict(results))
    report.ranking = extract_ranking(means, names)
    report.consistency = check_consistency(report)
    return report


def pair_margins(means) -> np.ndarray:
    """m[i, j] = (d_ji - d_ij) / 2: how much i beat j, pooled over both seat orders.

    A missing order falls back to the available one; both missing gives NaN.
    """
    d = np.asarray(means, dtype=float)
    if not d.size:
        return d
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(np.stack([d.T, -d]), axis=0)


def extract_ranking(means, names=None) -> list:
    """[(name, score)] best first; score_i averages i's signed margin over opponents."""
    d = np.asarray(means, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ContractError("extract_ranking needs a square matrix")
    n = d.shape[0]
    names = list(names) if names is not None else [str(k) for k in range(n)]
    m = pair_margins(d)
    scores = []
    for i in range(n):
        row = [m[i, j] for j in range(n) if j != i and np.isfinite(m[i, j])]
        if n > 1 and len(row) < n - 1:
            log.warning("%s: score averages %d of %d opponents", names[i], len(row), n - 1)
        scores.append(float(np.mean(row)) if row else 0.0)
    order = sorted(range(n), key=lambda k: (-scores[k], names[k]))
    return [(names[k], scores[k]) for k in order]


def check_consistency(report: TournamentReport) -> dict:
    d, s, names = report.means, report.stds, report.names
    n = len(names)
    residuals = {}
    for i in range(n):
        for j in range(i + 1, n):
            if not (np.isfinite(d[i, j]) and np.isfinite(d[j, i])):
                continue
            r = abs(d[i, j] + d[j, i])
            pooled = float(np.sqrt((s[i, j] ** 2 + s[j, i] ** 2) / 2))
            ratio = r / pooled if pooled > 0 else (0.0 if r == 0 else float("inf"))
            residuals[(i, j)] = {"residual": float(r), "pooled_std": pooled, "ratio": ratio}
    cross = [abs(d[i, j]) for i in range(n) for j in range(n) if i != j and np.isfinite(d[i, j])]
    median_cross = float(statistics.median(cross)) if cross else float("nan")
    self_play = {i: float(abs(d[i, i])) for i in range(n) if np.isfinite(d[i, i])}
    if self_play and cross and median_cross > 0:
        self_ratio = max(self_play.values()) / median_cross
    else:
        self_ratio = 0.0 if not self_play or max(self_play.values()) == 0 else float("inf")

    rank_pos = {name: k for k, (name, _) in enumerate(report.ranking)}
    order = sorted(range(n), key=lambda k: rank_pos.get(names[k], k))
    m = np.abs(pair_margins(d))
    violations = []
    for x in range(n):
        for y in range(x + 1, n):
            for z in range(y + 1, n):
                a, b, c = order[x], order[y], order[z]
                outer, first, second = m[a, c], m[a, b], m[b, c]
                if not np.all(np.isfinite([outer, first, second])):
                    continue
                if outer < first or outer < second:
                    violations.append((names[a], names[b], names[c]))
    return {
        "max_antisymmetry_ratio": max((v["ratio"] for v in residuals.values()), default=0.0),
        "antisymmetry": residuals,
        "self_play": self_play,
        "median_cross": median_cross,
        "self_play_ratio": float(self_ratio),
        "violations": violations,
        "aborted": [list(k) for k in report.aborted],
    }


def format_cell(mean, std) -> str:
    if not np.isfinite(mean):
        return "aborted"
    return f"{mean:.4f}±{std:.4f}"


def parse_cell(text: str):
    if text == "aborted":
        return float("nan"), float("nan")
    mean, std = text.split("±")
    return float(mean), float(std)


def read_diff_matrix(path):
    """(names, means, stds) from a diff_matrix.csv."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    cells = [[parse_cell(c) for c in r[1:]] for r in rows[1:]]
    means = np.array([[c[0] for c in r] for r in cells])
    stds = np.array([[c[1] for c in r] for r in cells])
    return names, means, stds


def _heat_color(v, vmax):
    if not np.isfinite(v):
        return "#bbbbbb"
    t = 0.0 if vmax == 0 else max(-1.0, min(1.0, v / vmax))
    # blue for negative (row wins), red for positive
    if t < 0:
        r, g, b = 255 * (1 + t), 255 * (1 + t), 255
    else:
        r, g, b = 255, 255 * (1 - t), 255 * (1 - t)
    return f"#{int(round(r)):02x}{int(round(g)):02x}{int(round(b)):02x}"


def render_heatmap(report: TournamentReport) -> str:
    names, d = report.names, report.means
    n = len(names)
    cell, margin = 70, 140
    finite = np.abs(d[np.isfinite(d)])
    vmax = float(finite.max()) if finite.size else 0.0
    w = h = margin + n * cell + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h + 30}">',
           f'<title>Loss difference L_A - L_B (scale ±{vmax:.4f})</title>']
    for k, name in enumerate(names):
        label = su.escape(name)
        out.append(f'<text x="{margin - 6}" y="{margin + k * cell + cell / 2 + 4}" '
                   f'text-anchor="end" font-size="11">{label}</text>')
        out.append(f'<text x="{margin + k * cell + cell / 2}" y="{margin - 8}" '
                   f'text-anchor="middle" font-size="11">{label}</text>')
    for i in range(n):
        for j in range(n):
            x, y = margin + j * cell, margin + i * cell
            out.append(f'<rect class="cell" x="{x}" y="{y}" width="{cell}" height="{cell}" '
                       f'fill="{_heat_color(d[i, j], vmax)}" stroke="#ffffff"/>')
            txt = "n/a" if not np.isfinite(d[i, j]) else f"{d[i, j]:.3f}"
            out.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                       f'font-size="10">{txt}</text>')
    out.append(f'<text x="{margin}" y="{h + 15}" font-size="11">rows: GNN_A, columns: GNN_B; '
               f'negative (blue) means GNN_A wins</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_markdown(report: TournamentReport) -> str:
    names = report.names
    lines = ["| GNN_A \\ GNN_B | " + " | ".join(names) + " |",
             "|---" * (len(names) + 1) + "|"]
    for i, name in enumerate(names):
        cells = [format_cell(report.means[i, j], report.stds[i, j]).replace("±", " ± ")
                 for j in range(len(names))]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    lines += ["", "Loss difference L_A − L_B on held-out graphs, mean ± std over seeds. "
              "Negative value means GNN_A wins.", "", "## Ranking", "",
              "| rank | name | score |", "|---|---|---|"]
    for k, (name, score) in enumerate(report.ranking, 1):
        lines.append(f"| {k} | {name} | {score:.4f} |")
    if report.aborted:
        lines += ["", "Aborted matches: " + ", ".join(f"{names[i]} vs {names[j]}" for i, j in report.aborted)]
    return "# Tournament\n\n" + "\n".join(lines) + "\n"


def render_consistency(report: TournamentReport) -> str:
    c, names = report.consistency, report.names
    out = [f"max antisymmetry ratio |d_ij + d_ji| / pooled std: {c['max_antisymmetry_ratio']:.4f}"]
    for (i, j), v in sorted(c["antisymmetry"].items()):
        out.append(f"  {names[i]} / {names[j]}: residual {v['residual']:.6f} pooled std "
                   f"{v['pooled_std']:.6f} ratio {v['ratio']:.4f}")
    out.append(f"self-play max |d_ii| / median cross |d_ij|: {c['self_play_ratio']:.4f} "
               f"(median cross {c['median_cross']:.6f})")
    for i, v in sorted(c["self_play"].items()):
        out.append(f"  {names[i]}: |d_ii| = {v:.6f}")
    out.append(f"margin monotonicity violations: {len(c['violations'])}")
    for t in c["violations"]:
        out.append("  " + " > ".join(t))
    out.append(f"aborted matches: {len(c['aborted'])}")
    return "\n".join(out) + "\n"


def _write(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def emit_report(report: TournamentReport, out_dir) -> list:
    """Write the report files under ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    try:
        (out / "matches").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out}: {exc.strerror or exc}") from exc
    names, n = report.names, len(report.names)
    written = []

    rows = [",".join(["GNN_A\\GNN_B"] + names)]
    for i in range(n):
        rows.append(",".join([names[i]] + [format_cell(report.means[i, j], report.stds[i, j])
                                           for j in range(n)]))
    for fname, text in [
        ("diff_matrix.csv", "\n".join(rows) + "\n"),
        ("ranking.csv", "rank,name,score\n" + "".join(
            f"{k},{name},{score:.6f}\n" for k, (name, score) in enumerate(report.ranking, 1))),
        ("consistency.txt", render_consistency(report)),
        ("report.md", render_markdown(report)),
        ("heatmap.svg", render_heatmap(report)),
        ("report.json", json.dumps(report_to_dict(report), indent=1, sort_keys=True) + "\n"),
    ]:
        _write(out / fname, text)
        written.append(out / fname)

    for (i, j), res in sorted(report.results.items()):
        for run in res.runs:
            p = out / "matches" / f"{i}_{j}_{names[i]}_vs_{names[j]}_seed{run.seed}.csv"
            try:
                write_trajectory_csv(run, p)
            except OSError as exc:
                raise OSError(f"{p}: {exc.strerror or exc}") from exc
            written.append(p)
    return written


def _jsonable(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def report_to_dict(report: TournamentReport) -> dict:
    n = len(report.names)
    return {
        "names": report.names,
        "means": [[_jsonable(float(report.means[i, j])) for j in range(n)] for i in range(n)],
        "stds": [[_jsonable(float(report.stds[i, j])) for j in range(n)] for i in range(n)],
        "ranking": [[name, score] for name, score in report.ranking],
        "consistency": {
            "max_antisymmetry_ratio": _jsonable(report.consistency["max_antisymmetry_ratio"]),
            "self_play_ratio": _jsonable(report.consistency["self_play_ratio"]),
            "median_cross": _jsonable(report.consistency["median_cross"]),
            "violations": [list(v) for v in report.consistency["violations"]],
            "aborted": report.consistency["aborted"],
        },
        "matches": {f"{i},{j}": {"mean": _jsonable(r.mean), "std": _jsonable(r.std),
                                 "final_diffs": r.final_diffs.tolist(), "collapsed": r.collapsed,
                                 "top_pca_fraction": _jsonable(r.top_pca_fraction())}
                    for (i, j), r in sorted(report.results.items())},
    }


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("GRAPHAC_WORKERS", "1")))
    except ValueError:
        return 1


__all__ = [
    "TournamentPlan", "TournamentReport", "schedule_double_round_robin", "run_tournament",
    "extract_ranking", "check_consistency", "emit_report", "read_diff_matrix", "MatchResult",
]
