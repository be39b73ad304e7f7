"""Command-line entry point: gen-data, match, tournament, verify.

Exit codes: 0 success, 1 runtime or match failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .arena import TrainConfig, train_pair, write_trajectory_csv
from .errors import ConfigError, ContractError, GraphACError, GraphParseError, GraphValidationError, SpecValidationError
from .graphs import generate_synthetic_dataset, parse_graph_file, write_graph_file
from .losses import LossConfig
from .models import ModelSpec
from .tournament import default_name, default_workers, emit_report, run_tournament, schedule_double_round_robin

log = logging.getLogger("graphac")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

DATASET_DEFAULTS = {"path": None, "seed": 0, "count": 2000, "size_range": [10, 30],
                    "feature_dims": [9, 4], "motif_complexity": 0.6}
PAPER_PROFILE = {"batch_size": 512, "learning_rate": 5e-5, "epochs": 50, "output_dim": 256}


@dataclass
class RunConfig:
    dataset: dict = field(default_factory=lambda: dict(DATASET_DEFAULTS))
    train: TrainConfig = field(default_factory=TrainConfig)
    pool: list = field(default_factory=list)  # [(name, ModelSpec)]
    workers: int = 1
    out_dir: str = "graphac-out"
    tie_threshold: float = 0.01

    @property
    def loss(self) -> LossConfig:
        return self.train.loss

    @property
    def seeds(self):
        return self.train.seeds

    def to_dict(self):
        train = self.train.to_dict()
        loss = train.pop("loss")
        seeds = train.pop("seeds")
        return {"dataset": self.dataset, "train": train, "loss": loss, "seeds": seeds,
                "pool": [{"name": n, "spec": s.to_dict()} for n, s in self.pool],
                "workers": self.workers, "out_dir": self.out_dir, "tie_threshold": self.tie_threshold}


def _section(data, key, kind=dict):
    value = data.get(key, kind())
    if not isinstance(value, kind):
        raise ConfigError(f"expected {kind.__name__}", key)
    return value


def build_run_config(data: dict, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then flag overrides (flags win)."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object", "$")
    known = {"dataset", "train", "loss", "seeds", "pool", "workers", "out_dir", "tie_threshold"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", unknown[0])
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}

    dataset = dict(DATASET_DEFAULTS)
    ds = _section(data, "dataset")
    bad = sorted(set(ds) - set(DATASET_DEFAULTS))
    if bad:
        raise ConfigError(f"unknown keys {bad}", f"dataset.{bad[0]}")
    dataset.update(ds)

    train = dict(_section(data, "train"))
    loss = dict(_section(data, "loss"))
    seeds = data.get("seeds", train.pop("seeds", None))
    if ov.get("paper_profile"):
        train.update({k: PAPER_PROFILE[k] for k in ("batch_size", "learning_rate", "epochs")})
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "learning_rate")):
        if flag in ov:
            train[key] = ov[flag]
    for flag, key in (("mu", "mu_cbt"), ("lambda_", "lambda_cbt"), ("alpha", "alpha"), ("beta", "beta")):
        if flag in ov:
            loss[key] = ov[flag]
    if "seeds" in ov:
        seeds = ov["seeds"]
    if seeds is not None:
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("must be a non-empty list of integers", "seeds")
        train["seeds"] = seeds
    if "eval_window" not in train and "epochs" in train:
        train["eval_window"] = min(TrainConfig.eval_window, int(train["epochs"]))
    try:
        train["loss"] = LossConfig.from_dict(loss)
    except TypeError as exc:
        raise ConfigError(str(exc), "loss") from exc
    try:
        train_cfg = TrainConfig.from_dict(train)
    except TypeError as exc:
        raise ConfigError(str(exc), "train") from exc

    pool = []
    for k, entry in enumerate(_section(data, "pool", list)):
        if not isinstance(entry, dict):
            raise ConfigError("expected an object", f"pool[{k}]")
        spec_data = dict(entry.get("spec", {k2: v for k2, v in entry.items() if k2 != "name"}))
        if ov.get("paper_profile"):
            spec_data["output_dim"] = PAPER_PROFILE["output_dim"]
        try:
            spec = ModelSpec.from_dict(spec_data)
        except SpecValidationError as exc:
            raise ConfigError(str(exc), f"pool[{k}].spec.{exc.fields[0] if exc.fields else ''}") from exc
        except TypeError as exc:
            raise ConfigError(str(exc), f"pool[{k}].spec") from exc
        pool.append((str(entry.get("name") or default_name(spec)), spec))

    workers = ov.get("workers", data.get("workers", default_workers()))
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("must be a positive integer", "workers")
    out_dir = ov.get("out_dir", data.get("out_dir", RunConfig.out_dir))
    tie = data.get("tie_threshold", RunConfig.tie_threshold)
    return RunConfig(dataset, train_cfg, pool, workers, str(out_dir), float(tie))


def load_run_config(path, overrides=None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}", "config")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})", "config") from exc
    return build_run_config(data, overrides)


def load_dataset(cfg: RunConfig):
    ds = cfg.dataset
    if ds.get("path"):
        return parse_graph_file(ds["path"])
    try:
        return generate_synthetic_dataset(seed=ds["seed"], count=ds["count"],
                                          size_range=tuple(ds["size_range"]),
                                          feature_dims=tuple(ds["feature_dims"]),
                                          motif_complexity=ds["motif_complexity"])
    except (ContractError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "dataset") from exc


def dump_effective_config(cfg: RunConfig, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "effective_config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def cmd_gen_data(args) -> int:
    if args.count < 1:
        print("error: --count must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        graphs = generate_synthetic_dataset(seed=args.seed, count=args.count, size_range=tuple(args.size_range),
                                            feature_dims=tuple(args.feature_dims),
                                            motif_complexity=args.motif_complexity)
    except (ValueError, GraphACError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_graph_file(graphs, out)
        effective = {"seed": args.seed, "count": args.count, "size_range": list(args.size_range),
                     "feature_dims": list(args.feature_dims), "motif_complexity": args.motif_complexity,
                     "out": str(out)}
        out.with_name(out.name + ".config.json").write_text(
            json.dumps(effective, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"error: {out}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"wrote {len(graphs)} graphs to {out}")
    return EXIT_OK


def _overrides(args) -> dict:
    return {k: getattr(args, k, None) for k in
            ("mu", "lambda_", "alpha", "beta", "epochs", "batch_size", "lr", "seeds", "workers",
             "out_dir", "paper_profile")}


def cmd_match(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    if len(cfg.pool) != 2:
        raise ConfigError(f"match needs exactly two specs, got {len(cfg.pool)}", "pool")
    out = Path(cfg.out_dir)
    dump_effective_config(cfg, out)
    dataset = load_dataset(cfg)
    (name_a, spec_a), (name_b, spec_b) = cfg.pool
    result = train_pair(spec_a, spec_b, dataset, cfg.train)
    for run in result.runs:
        write_trajectory_csv(run, out / f"trajectory_seed{run.seed}.csv")
    (out / "match_result.json").write_text(json.dumps(result.to_dict(), indent=1) + "\n", encoding="utf-8")
    if not result.ok:
        print(f"match aborted: {result.collapsed}", file=sys.stderr)
        return EXIT_FAILURE
    print(result.summary(name_a, name_b, tie_threshold=cfg.tie_threshold))
    return EXIT_OK


def cmd_tournament(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    if not cfg.pool:
        raise ConfigError("tournament needs a non-empty pool", "pool")
    plan = schedule_double_round_robin(cfg.pool, config=cfg.train, dataset=None)
    out = Path(cfg.out_dir)
    dump_effective_config(cfg, out)
    plan.dataset = load_dataset(cfg)
    report = run_tournament(plan, workers=cfg.workers)
    emit_report(report, out)
    for name, score in report.ranking:
        print(f"{name}: {score:+.4f}")
    if report.aborted:
        print(f"{len(report.aborted)} match(es) aborted", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suites
    suites = args.suite or list(SUITES)
    unknown = [s for s in suites if s not in SUITES]
    if unknown:
        print(f"error: unknown suite(s) {', '.join(unknown)}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_USAGE
    rows = run_suites(suites)
    width = max(len(r.name) for r in rows) if rows else 0
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.suite:<16} {r.name:<{width}}  residual={r.residual:.3e}")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAILURE


def _run_flags(p):
    p.add_argument("config", help="JSON run config")
    p.add_argument("--mu", type=float)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--paper-profile", action="store_true", default=None,
                   help="batch 512, lr 5e-5, 50 epochs, embedding width 256")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic graph dataset as JSONL")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=2000)
    g.add_argument("--size-range", type=int, nargs=2, default=[10, 30], metavar=("MIN", "MAX"))
    g.add_argument("--feature-dims", type=int, nargs=2, default=[9, 4], metavar=("NODE", "EDGE"))
    g.add_argument("--motif-complexity", type=float, default=0.6)
    g.add_argument("--out", default="graphs.jsonl")
    g.set_defaults(func=cmd_gen_data)

    m = sub.add_parser("match", help="train two specs against each other")
    _run_flags(m)
    m.set_defaults(func=cmd_match)

    t = sub.add_parser("tournament", help="double round-robin over a pool of specs")
    _run_flags(t)
    t.set_defaults(func=cmd_tournament)

    v = sub.add_parser("verify", help="run invariant suites")
    v.add_argument("suite", nargs="*", metavar="SUITE",
                   help="any of gradcheck, loss-identities, permutation, collapse (default: all)")
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphParseError, GraphValidationError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphACError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE



if __name__ == "__main__":
    sys.exit(main())
